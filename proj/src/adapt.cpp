#include "oct/adapt.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "oct/preprocess.hpp"

namespace oct::adapt {

namespace {

constexpr float kLn10Inv = 0.43429448190325176f;  // 1/ln(10)

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Tensor batch_to_tensor(const std::vector<Image>& imgs, bool to_signed) {
    const int n = static_cast<int>(imgs.size()), h = imgs[0].h, w = imgs[0].w;
    Tensor t({n, 1, h, w});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < h * w; ++k) {
            const float v = imgs[static_cast<std::size_t>(i)].v[static_cast<std::size_t>(k)];
            t.data[static_cast<std::size_t>(static_cast<long>(i) * h * w + k)] =
                to_signed ? 2.0f * v - 1.0f : v;
        }
    return t;
}

Tensor sobel_kernel(bool horizontal) {
    Tensor k({1, 1, 3, 3});
    if (horizontal) {
        const float v[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
        std::copy(v, v + 9, k.data.begin());
    } else {
        const float v[9] = {1, 2, 1, 0, 0, 0, -1, -2, -1};
        std::copy(v, v + 9, k.data.begin());
    }
    return k;
}

// mean over batch items of a per-slice scalar builder
template <typename F>
Tape::Id batch_mean(Tape& t, Tape::Id x, F&& per_item) {
    const int n = t.val(x).dim(0);
    Tape::Id acc = -1;
    for (int i = 0; i < n; ++i) {
        const Tape::Id term = per_item(i);
        acc = acc < 0 ? term : t.add(acc, term);
    }
    return t.scale(acc, 1.0f / static_cast<float>(n));
}

}  // namespace

Preset preset_from_string(const std::string& name) {
    if (name == "noadapt") return Preset::NoAdapt;
    if (name == "baseline") return Preset::Baseline;
    if (name == "seg") return Preset::Seg;
    if (name == "sp" || name == "sg") return Preset::Sp;
    if (name == "spg") return Preset::Spg;
    if (name == "ssppg") return Preset::Ssppg;
    throw std::invalid_argument("unknown preset: " + name);
}

std::string preset_name(Preset p) {
    switch (p) {
        case Preset::NoAdapt: return "noadapt";
        case Preset::Baseline: return "baseline";
        case Preset::Seg: return "seg";
        case Preset::Sp: return "sp";
        case Preset::Spg: return "spg";
        case Preset::Ssppg: return "ssppg";
    }
    throw std::logic_error("preset_name");
}

LossWeights preset_weights(Preset preset, LossWeights w) {
    switch (preset) {
        case Preset::NoAdapt:
            w = LossWeights{0, 0, 0, 0, 0, 0, 0, 0};
            break;
        case Preset::Baseline:
            w.seg = w.dssim = w.psnr = w.feat = w.grad = 0;
            break;
        case Preset::Seg:
            w.dssim = w.psnr = w.feat = w.grad = 0;
            break;
        case Preset::Sp:
            w.dssim = w.psnr = w.grad = 0;
            break;
        case Preset::Spg:
            w.dssim = w.psnr = 0;
            break;
        case Preset::Ssppg:
            break;
    }
    return w;
}

// ---------------------------------------------------------------------------
// networks

Generator::Generator(GeneratorConfig cfg, std::uint64_t seed, InitMode mode)
    : cfg_(cfg), mode_(mode) {
    Rng rng(seed);
    const float shrink = mode == InitMode::NearIdentity ? 1e-3f : 1.0f;
    auto width = [&](int level) { return cfg_.base_width << level; };

    idx_["stem.weight"] = add_param("stem.weight", gaussian_init({width(0), 1, 7, 7}, rng, 0.02));
    for (int i = 1; i <= cfg_.downsample_stages; ++i)
        idx_["down" + std::to_string(i) + ".weight"] = add_param(
            "down" + std::to_string(i) + ".weight",
            gaussian_init({width(i), width(i - 1), 3, 3}, rng, 0.02));
    const int wb = width(cfg_.downsample_stages);
    for (int b = 0; b < cfg_.n_resblocks; ++b) {
        const std::string stem = "res" + std::to_string(b);
        idx_[stem + ".conv1"] = add_param(stem + ".conv1", gaussian_init({wb, wb, 3, 3}, rng, 0.02));
        Tensor c2 = gaussian_init({wb, wb, 3, 3}, rng, 0.02);
        for (auto& v : c2.data) v *= shrink;
        idx_[stem + ".conv2"] = add_param(stem + ".conv2", std::move(c2));
    }
    for (int i = cfg_.downsample_stages; i >= 1; --i)
        idx_["up" + std::to_string(i) + ".weight"] = add_param(
            "up" + std::to_string(i) + ".weight",
            gaussian_init({width(i), width(i - 1), 4, 4}, rng, 0.02));
    Tensor outw = gaussian_init({1, width(0), 7, 7}, rng, 0.02);
    for (auto& v : outw.data) v *= shrink;
    idx_["out.weight"] = add_param("out.weight", std::move(outw));
    idx_["out.bias"] = add_param("out.bias", Tensor({1}));
}

Tape::Id Generator::forward(Tape& t, Tape::Id x, const std::vector<Tape::Id>& bound,
                            bool training, std::uint64_t dropout_seed) const {
    const Tensor& xv = t.val(x);
    const int div = 1 << cfg_.downsample_stages;
    if (xv.rank() != 4 || xv.dim(2) % div != 0 || xv.dim(3) % div != 0)
        throw std::invalid_argument("Generator::forward: dims must divide 2^stages");

    Tape::Id h = t.leaky_relu(
        t.instance_norm(t.conv2d(x, bound[static_cast<std::size_t>(p("stem.weight"))], 1, 3), 1e-5f),
        0.2f);
    for (int i = 1; i <= cfg_.downsample_stages; ++i)
        h = t.leaky_relu(
            t.instance_norm(
                t.conv2d(h, bound[static_cast<std::size_t>(p("down" + std::to_string(i) + ".weight"))], 2, 1),
                1e-5f),
            0.2f);
    for (int b = 0; b < cfg_.n_resblocks; ++b) {
        const std::string stem = "res" + std::to_string(b);
        Tape::Id r = t.relu(
            t.instance_norm(t.conv2d(h, bound[static_cast<std::size_t>(p(stem + ".conv1"))], 1, 1), 1e-5f));
        r = t.dropout(r, cfg_.dropout_p, Rng::derive(dropout_seed, static_cast<std::uint64_t>(b)), training);
        r = t.instance_norm(t.conv2d(r, bound[static_cast<std::size_t>(p(stem + ".conv2"))], 1, 1), 1e-5f);
        h = t.add(h, r);
    }
    for (int i = cfg_.downsample_stages; i >= 1; --i)
        h = t.leaky_relu(
            t.instance_norm(
                t.conv_transpose2d(h, bound[static_cast<std::size_t>(p("up" + std::to_string(i) + ".weight"))], 2, 1),
                1e-5f),
            0.2f);
    Tape::Id pre = t.add_channel_bias(t.conv2d(h, bound[static_cast<std::size_t>(p("out.weight"))], 1, 3),
                                      bound[static_cast<std::size_t>(p("out.bias"))]);
    if (mode_ == InitMode::NearIdentity) pre = t.add(pre, t.atanh_clamped(x, 0.999f));
    return t.tanh_act(pre);
}

Discriminator::Discriminator(DiscriminatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    auto width = [&](int level) { return cfg_.base_width << level; };
    idx_["s0.weight"] = add_param("s0.weight", gaussian_init({width(0), 1, 4, 4}, rng, 0.02));
    idx_["s0.bias"] = add_param("s0.bias", Tensor({width(0)}));
    for (int i = 1; i < cfg_.conv_stages; ++i)
        idx_["s" + std::to_string(i) + ".weight"] = add_param(
            "s" + std::to_string(i) + ".weight",
            gaussian_init({width(i), width(i - 1), 4, 4}, rng, 0.02));
    idx_["out.weight"] = add_param(
        "out.weight", gaussian_init({1, width(cfg_.conv_stages - 1), 3, 3}, rng, 0.02));
    idx_["out.bias"] = add_param("out.bias", Tensor({1}));
}

Tape::Id Discriminator::forward(Tape& t, Tape::Id x, const std::vector<Tape::Id>& bound) const {
    const Tensor& xv = t.val(x);
    const int div = 1 << cfg_.conv_stages;
    if (xv.rank() != 4 || xv.dim(2) < div || xv.dim(3) < div)
        throw std::invalid_argument("Discriminator::forward: spatial collapse");
    Tape::Id h = t.leaky_relu(
        t.add_channel_bias(t.conv2d(x, bound[static_cast<std::size_t>(p("s0.weight"))], 2, 1),
                           bound[static_cast<std::size_t>(p("s0.bias"))]),
        0.2f);
    for (int i = 1; i < cfg_.conv_stages; ++i)
        h = t.leaky_relu(
            t.instance_norm(
                t.conv2d(h, bound[static_cast<std::size_t>(p("s" + std::to_string(i) + ".weight"))], 2, 1), 1e-5f),
            0.2f);
    return t.add_channel_bias(t.conv2d(h, bound[static_cast<std::size_t>(p("out.weight"))], 1, 1),
                              bound[static_cast<std::size_t>(p("out.bias"))]);
}

Tensor ImagePool::query(const Tensor& image) {
    if (static_cast<int>(stored_.size()) < capacity_) {
        stored_.push_back(image);
        return image;
    }
    if (rng_.uniform() < swap_prob_) {
        const int k = rng_.uniform_int(0, capacity_ - 1);
        Tensor out = stored_[static_cast<std::size_t>(k)];
        stored_[static_cast<std::size_t>(k)] = image;
        return out;
    }
    return image;
}

// ---------------------------------------------------------------------------
// losses

Tape::Id cycle_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x,
                    double lambda_x, double lambda_y) {
    const Tape::Id rec_x = g_y2x(t, g_x2y(t, x));
    const Tape::Id rec_y = g_x2y(t, g_y2x(t, y));
    return t.add(t.scale(t.l1(x, rec_x), static_cast<float>(lambda_x)),
                 t.scale(t.l1(y, rec_y), static_cast<float>(lambda_y)));
}

Tape::Id identity_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x) {
    return t.add(t.l1(x, g_y2x(t, x)), t.l1(y, g_x2y(t, y)));
}

Tape::Id semantic_loss(Tape& t, Tape::Id x, const Tensor& onehot, const Tensor& dice_weights,
                       const std::vector<float>& class_weights, CachedApply& g_x2y,
                       CachedApply& g_y2x, const seg::SegNet& seg_model,
                       const std::vector<Tape::Id>& seg_bound) {
    // the segmentation network consumes [0,1] images
    auto to_unit = [&](Tape::Id v) { return t.add_const(t.scale(v, 0.5f), 0.5f); };
    const Tape::Id rec_x = g_y2x(t, g_x2y(t, x));
    const auto direct = seg::seg_loss(t, seg_model.forward(t, to_unit(x), seg_bound), onehot,
                                      dice_weights, class_weights);
    const auto cyclic = seg::seg_loss(t, seg_model.forward(t, to_unit(rec_x), seg_bound), onehot,
                                      dice_weights, class_weights);
    return t.add(direct.total, cyclic.total);
}

Tape::Id dssim_loss(Tape& t, Tape::Id x, Tape::Id y, double dynamic_range) {
    const float c1 = static_cast<float>(0.01 * dynamic_range * 0.01 * dynamic_range);
    const float c2 = static_cast<float>(0.03 * dynamic_range * 0.03 * dynamic_range);
    return batch_mean(t, x, [&](int i) {
        const Tape::Id xi = t.slice_batch(x, i);
        const Tape::Id yi = t.slice_batch(y, i);
        const Tape::Id mx = t.mean_all(xi);
        const Tape::Id my = t.mean_all(yi);
        const Tape::Id vx = t.sub(t.mean_all(t.mul(xi, xi)), t.mul(mx, mx));
        const Tape::Id vy = t.sub(t.mean_all(t.mul(yi, yi)), t.mul(my, my));
        const Tape::Id cxy = t.sub(t.mean_all(t.mul(xi, yi)), t.mul(mx, my));
        const Tape::Id num = t.mul(t.add_const(t.scale(t.mul(mx, my), 2.0f), c1),
                                   t.add_const(t.scale(cxy, 2.0f), c2));
        const Tape::Id den = t.mul(t.add_const(t.add(t.mul(mx, mx), t.mul(my, my)), c1),
                                   t.add_const(t.add(vx, vy), c2));
        const Tape::Id s = t.div(num, den);
        return t.scale(t.add_const(t.scale(s, -1.0f), 1.0f), 0.5f);
    });
}

Tape::Id psnr_loss(Tape& t, Tape::Id x, Tape::Id y) {
    return batch_mean(t, x, [&](int i) {
        const Tape::Id xi = t.slice_batch(x, i);
        const Tape::Id yi = t.slice_batch(y, i);
        const Tape::Id mx = t.max_all(xi);
        const Tape::Id ln_peak = t.log_clamped(t.mul(mx, mx), 1e-24f);
        const Tape::Id ln_mse = t.log_clamped(t.mse(xi, yi), 1e-12f);
        return t.scale(t.sub(ln_peak, ln_mse), -10.0f * kLn10Inv);
    });
}

Tape::Id perceptual_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x,
                         const metrics::FeatureExtractor& f) {
    const Tape::Id fake_y = g_x2y(t, x);
    const Tape::Id fake_x = g_y2x(t, y);
    const Tape::Id rec_x = g_y2x(t, fake_y);
    const Tape::Id rec_y = g_x2y(t, fake_x);
    const auto tx = f.taps_on_tape(t, x);
    const auto ty = f.taps_on_tape(t, y);
    const auto tfy = f.taps_on_tape(t, fake_y);
    const auto tfx = f.taps_on_tape(t, fake_x);
    const auto trx = f.taps_on_tape(t, rec_x);
    const auto try_ = f.taps_on_tape(t, rec_y);
    Tape::Id acc = -1;
    for (std::size_t i = 0; i < 4; ++i) {
        Tape::Id term = t.add(t.l1(tx[i], tfy[i]), t.l1(ty[i], tfx[i]));
        term = t.add(term, t.add(t.l1(tx[i], trx[i]), t.l1(ty[i], try_[i])));
        term = t.add(term, t.add(t.l1(tfy[i], trx[i]), t.l1(tfx[i], try_[i])));
        acc = acc < 0 ? term : t.add(acc, term);
    }
    return acc;
}

Tape::Id gradient_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x,
                       bool asymmetric) {
    const Tape::Id fake_y = g_x2y(t, x);
    const Tape::Id fake_x = g_y2x(t, y);
    const Tape::Id kh = t.constant(sobel_kernel(true));
    const Tape::Id kv = t.constant(sobel_kernel(false));
    // valid convolution: zero padding would turn borders of constant images
    // into spurious edges
    auto sob = [&](Tape::Id img, Tape::Id k) { return t.conv2d(img, k, 1, 0); };
    Tape::Id loss = t.mse(sob(x, kh), sob(fake_y, kh));
    if (!asymmetric) loss = t.add(loss, t.mse(sob(x, kv), sob(fake_y, kv)));
    loss = t.add(loss, t.mse(sob(y, kv), sob(fake_x, kv)));
    if (!asymmetric) loss = t.add(loss, t.mse(sob(y, kh), sob(fake_x, kh)));
    return loss;
}

namespace {

Tensor soft_target(const std::vector<int>& shape, float base, double amplitude, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data)
        v = base + (amplitude > 0
                        ? static_cast<float>(rng.truncated_normal(amplitude / 2.0, amplitude))
                        : 0.0f);
    return t;
}

}  // namespace

std::pair<Tape::Id, Tape::Id> gan_losses(Tape& t, const ApplyFn& discriminator, Tape::Id real,
                                         Tape::Id fake, ImagePool& pool,
                                         double soft_label_amplitude, Rng& rng) {
    const Tape::Id d_fake = discriminator(t, fake);
    const Tape::Id g_loss = t.mse(d_fake, t.constant(Tensor::full(t.val(d_fake).shape, 1.0f)));

    // discriminator side sees a detached pooled fake
    const Tensor& fv = t.val(fake);
    const int n = fv.dim(0), chw = fv.dim(1) * fv.dim(2) * fv.dim(3);
    Tensor pooled(fv.shape);
    for (int i = 0; i < n; ++i) {
        Tensor one({1, fv.dim(1), fv.dim(2), fv.dim(3)});
        std::copy(fv.data.begin() + static_cast<long>(i) * chw,
                  fv.data.begin() + static_cast<long>(i + 1) * chw, one.data.begin());
        const Tensor out = pool.query(one);
        std::copy(out.data.begin(), out.data.end(), pooled.data.begin() + static_cast<long>(i) * chw);
    }
    const Tape::Id d_real = discriminator(t, real);
    const Tape::Id d_pooled = discriminator(t, t.constant(std::move(pooled)));
    const Tape::Id d_loss = t.scale(
        t.add(t.mse(d_real, t.constant(soft_target(t.val(d_real).shape, 1.0f, soft_label_amplitude, rng))),
              t.mse(d_pooled, t.constant(soft_target(t.val(d_pooled).shape, 0.0f, soft_label_amplitude, rng)))),
        0.5f);
    return {g_loss, d_loss};
}

TotalLoss total_loss(Tape& t, Tape::Id gan, Tape::Id cyc, Tape::Id idt, Tape::Id sem,
                     Tape::Id dssim, Tape::Id psnr, Tape::Id perc, Tape::Id grad,
                     const LossWeights& weights, Preset preset) {
    const LossWeights w = preset_weights(preset, weights);
    TotalLoss out;
    auto push = [&](Tape::Id id, double weight, double& slot) {
        if (id < 0 || weight == 0) return;
        const Tape::Id term = weight == 1.0 ? id : t.scale(id, static_cast<float>(weight));
        slot = t.scalar(term);
        out.node = out.node < 0 ? term : t.add(out.node, term);
    };
    double one = 1.0;
    push(gan, 1.0, out.values.gan);
    push(cyc, 1.0, out.values.cyc);
    push(idt, w.idt, out.values.idt);
    push(sem, w.seg, out.values.sem);
    push(dssim, w.dssim, out.values.dssim);
    push(psnr, w.psnr, out.values.psnr);
    push(perc, w.feat, out.values.perc);
    push(grad, w.grad, out.values.grad);
    (void)one;
    if (out.node < 0) out.node = t.constant(Tensor::scalar(0.0f));
    out.values.total = t.scalar(out.node);
    return out;
}

double scheduled_lr(double base_lr, int epoch, const AdaptTrainConfig& cfg) {
    if (epoch <= cfg.decay_start_epoch) return base_lr;
    const double span = static_cast<double>(cfg.max_epochs - cfg.decay_start_epoch);
    if (span <= 0) return base_lr;
    return base_lr * std::max(0.0, 1.0 - (epoch - cfg.decay_start_epoch) / span);
}

AdaptResult train_adaptation(Generator& g_x2y, Generator& g_y2x, Discriminator& d_x,
                             Discriminator& d_y, const seg::SegNet& seg_model,
                             const std::vector<float>& class_weights,
                             const seg::WeightMapParams& wm_params,
                             const metrics::FeatureExtractor& feat,
                             const std::vector<phantom::PhantomVolume>& src_vols,
                             const std::vector<seg::ItemRef>& src_train,
                             const std::vector<seg::ItemRef>& src_val,
                             const std::vector<phantom::PhantomVolume>& tgt_vols,
                             const std::vector<seg::ItemRef>& tgt_train,
                             const LossWeights& weights, Preset preset,
                             const AdaptTrainConfig& cfg) {
    if (cfg.decay_start_epoch > cfg.max_epochs)
        throw std::invalid_argument("train_adaptation: decay_start_epoch <= max_epochs");
    const LossWeights w = preset_weights(preset, weights);
    const int C = seg_model.config().n_classes;

    AdaptResult res;
    res.best_monitor = std::numeric_limits<double>::infinity();
    if (cfg.max_epochs == 0 || preset == Preset::NoAdapt) return res;

    OptimizerConfig gcfg;
    gcfg.kind = OptKind::RmsProp;
    gcfg.lr = cfg.gen_lr;
    Optimizer g_opt(gcfg);
    OptimizerConfig dcfg = gcfg;
    dcfg.lr = cfg.gen_lr * cfg.disc_lr_ratio;
    Optimizer d_opt(dcfg);

    std::vector<Tensor*> g_params = g_x2y.param_ptrs();
    {
        const auto more = g_y2x.param_ptrs();
        g_params.insert(g_params.end(), more.begin(), more.end());
    }
    std::vector<Tensor*> d_params = d_x.param_ptrs();
    {
        const auto more = d_y.param_ptrs();
        d_params.insert(d_params.end(), more.begin(), more.end());
    }

    ImagePool pool_x(cfg.pool_capacity, Rng::derive(cfg.seed, 0x700A));
    ImagePool pool_y(cfg.pool_capacity, Rng::derive(cfg.seed, 0x700B));
    Rng label_rng(Rng::derive(cfg.seed, 0x50F7));

    auto fetch = [&](const std::vector<phantom::PhantomVolume>& vols, const seg::ItemRef& ref) {
        return std::pair<const Image&, const LabelMap&>(
            vols[static_cast<std::size_t>(ref.first)].bscans[static_cast<std::size_t>(ref.second)],
            vols[static_cast<std::size_t>(ref.first)].labels[static_cast<std::size_t>(ref.second)]);
    };

    // source-domain validation semantic loss, evaluation mode
    auto monitor = [&]() {
        double sum = 0;
        for (const auto& ref : src_val) {
            const auto [im, lm] = fetch(src_vols, ref);
            Tape t;
            const auto bx2y = g_x2y.bind(t, false);
            const auto by2x = g_y2x.bind(t, false);
            const auto bs = seg_model.bind(t, false);
            CachedApply ax2y([&](Tape& tt, Tape::Id v) { return g_x2y.forward(tt, v, bx2y, false, 0); });
            CachedApply ay2x([&](Tape& tt, Tape::Id v) { return g_y2x.forward(tt, v, by2x, false, 0); });
            const Tape::Id x = t.constant(batch_to_tensor({im}, true));
            const std::vector<const LabelMap*> lb{&lm};
            const Tape::Id sem = semantic_loss(t, x, seg::make_onehot(lb, C),
                                               seg::make_dice_weights(lb, wm_params, C),
                                               class_weights, ax2y, ay2x, seg_model, bs);
            sum += t.scalar(sem);
        }
        return src_val.empty() ? 0.0 : sum / static_cast<double>(src_val.size());
    };

    struct Snapshot {
        std::vector<Param> gx, gy;
    };
    Snapshot best{g_x2y.params(), g_y2x.params()};
    int since_best = 0;
    std::uint64_t step_counter = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double t0 = now_seconds();
        g_opt.set_lr(scheduled_lr(cfg.gen_lr, epoch, cfg));
        d_opt.set_lr(g_opt.lr() * cfg.disc_lr_ratio);

        const auto pairs = phantom::pair_stream(static_cast<int>(src_train.size()),
                                                static_cast<int>(tgt_train.size()),
                                                Rng::derive(cfg.seed, 9000 + static_cast<std::uint64_t>(epoch)));

        LossBreakdown sums;
        double d_sum = 0;
        int batches = 0;
        for (std::size_t ofs = 0; ofs < pairs.size(); ofs += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(ofs + static_cast<std::size_t>(cfg.batch_size), pairs.size());
            std::vector<Image> xs, ys;
            std::vector<LabelMap> xls;
            for (std::size_t i = ofs; i < end; ++i) {
                auto [xi, xl] = fetch(src_vols, src_train[static_cast<std::size_t>(pairs[i].first)]);
                auto [yi, yl] = fetch(tgt_vols, tgt_train[static_cast<std::size_t>(pairs[i].second)]);
                Image xim = xi;
                LabelMap xlm = xl;
                Image yim = yi;
                LabelMap ylm = yl;
                if (cfg.augment) {
                    phantom::augment(xim, xlm, Rng::derive(cfg.seed, 0xAA000000ULL + step_counter * 2));
                    phantom::augment(yim, ylm, Rng::derive(cfg.seed, 0xAA000000ULL + step_counter * 2 + 1));
                }
                xs.push_back(std::move(xim));
                xls.push_back(std::move(xlm));
                ys.push_back(std::move(yim));
                ++step_counter;
            }
            std::vector<const LabelMap*> xlp;
            for (const auto& l : xls) xlp.push_back(&l);

            const std::uint64_t dseed = Rng::derive(cfg.seed, 0xD0000000ULL + step_counter);

            // ---- generator phase -------------------------------------------
            Tape t;
            const auto bx2y = g_x2y.bind(t, true);
            const auto by2x = g_y2x.bind(t, true);
            const auto bdx = d_x.bind(t, false);
            const auto bdy = d_y.bind(t, false);
            const auto bs = (w.seg > 0) ? seg_model.bind(t, false) : std::vector<Tape::Id>{};

            CachedApply ax2y([&](Tape& tt, Tape::Id v) {
                return g_x2y.forward(tt, v, bx2y, true, Rng::derive(dseed, 1));
            });
            CachedApply ay2x([&](Tape& tt, Tape::Id v) {
                return g_y2x.forward(tt, v, by2x, true, Rng::derive(dseed, 2));
            });

            const Tape::Id x = t.constant(batch_to_tensor(xs, true));
            const Tape::Id y = t.constant(batch_to_tensor(ys, true));
            const Tape::Id fake_y = ax2y(t, x);
            const Tape::Id fake_x = ay2x(t, y);
            const Tape::Id rec_x = ay2x(t, fake_y);
            const Tape::Id rec_y = ax2y(t, fake_x);

            const Tape::Id dy_fake = d_y.forward(t, fake_y, bdy);
            const Tape::Id dx_fake = d_x.forward(t, fake_x, bdx);
            const Tape::Id adv =
                t.add(t.mse(dy_fake, t.constant(Tensor::full(t.val(dy_fake).shape, 1.0f))),
                      t.mse(dx_fake, t.constant(Tensor::full(t.val(dx_fake).shape, 1.0f))));

            const Tape::Id cyc = cycle_loss(t, x, y, ax2y, ay2x, w.lambda_x, w.lambda_y);
            const Tape::Id idt = w.idt > 0 ? identity_loss(t, x, y, ax2y, ay2x) : -1;
            const Tape::Id sem =
                w.seg > 0 ? semantic_loss(t, x, seg::make_onehot(xlp, C),
                                          seg::make_dice_weights(xlp, wm_params, C), class_weights,
                                          ax2y, ay2x, seg_model, bs)
                          : -1;
            const Tape::Id dss = w.dssim > 0 ? t.add(dssim_loss(t, x, rec_x, 2.0),
                                                     dssim_loss(t, y, rec_y, 2.0))
                                             : -1;
            const Tape::Id psn = w.psnr > 0 ? t.add(psnr_loss(t, x, rec_x), psnr_loss(t, y, rec_y))
                                            : -1;
            const Tape::Id perc = w.feat > 0 ? perceptual_loss(t, x, y, ax2y, ay2x, feat) : -1;
            const Tape::Id grd =
                w.grad > 0 ? gradient_loss(t, x, y, ax2y, ay2x, cfg.asymmetric_gradient_loss) : -1;

            const TotalLoss tl = total_loss(t, adv, cyc, idt, sem, dss, psn, perc, grd, w, preset);
            t.backward(tl.node);
            {
                std::vector<const std::vector<float>*> grads;
                for (const Tape::Id id : bx2y) grads.push_back(&t.grad(id));
                for (const Tape::Id id : by2x) grads.push_back(&t.grad(id));
                g_opt.step(g_params, grads);
            }
            sums.gan += tl.values.gan;
            sums.cyc += tl.values.cyc;
            sums.idt += tl.values.idt;
            sums.sem += tl.values.sem;
            sums.dssim += tl.values.dssim;
            sums.psnr += tl.values.psnr;
            sums.perc += tl.values.perc;
            sums.grad += tl.values.grad;
            sums.total += tl.values.total;

            const Tensor fake_y_v = t.val(fake_y);
            const Tensor fake_x_v = t.val(fake_x);

            // ---- discriminator phase ---------------------------------------
            Tape td;
            const auto bdx2 = d_x.bind(td, true);
            const auto bdy2 = d_y.bind(td, true);
            const ApplyFn dx_apply = [&](Tape& tt, Tape::Id v) { return d_x.forward(tt, v, bdx2); };
            const ApplyFn dy_apply = [&](Tape& tt, Tape::Id v) { return d_y.forward(tt, v, bdy2); };
            const Tape::Id real_x = td.constant(batch_to_tensor(xs, true));
            const Tape::Id real_y = td.constant(batch_to_tensor(ys, true));
            const auto [gy_unused, d_y_loss] = gan_losses(td, dy_apply, real_y, td.constant(fake_y_v),
                                                          pool_y, cfg.soft_label_amplitude, label_rng);
            const auto [gx_unused, d_x_loss] = gan_losses(td, dx_apply, real_x, td.constant(fake_x_v),
                                                          pool_x, cfg.soft_label_amplitude, label_rng);
            (void)gy_unused;
            (void)gx_unused;
            const Tape::Id d_total = td.add(d_y_loss, d_x_loss);
            td.backward(d_total);
            {
                std::vector<const std::vector<float>*> grads;
                for (const Tape::Id id : bdx2) grads.push_back(&td.grad(id));
                for (const Tape::Id id : bdy2) grads.push_back(&td.grad(id));
                d_opt.step(d_params, grads);
            }
            d_sum += td.scalar(d_total);
            ++batches;
        }

        AdaptHistoryRow row;
        row.epoch = epoch;
        const double nb = std::max(batches, 1);
        row.g_loss = sums.total / nb;
        row.d_loss = d_sum / nb;
        row.cyc = sums.cyc / nb;
        row.idt = sums.idt / nb;
        row.sem = sums.sem / nb;
        row.dssim = sums.dssim / nb;
        row.psnr = sums.psnr / nb;
        row.perc = sums.perc / nb;
        row.grad = sums.grad / nb;
        row.val_monitor = monitor();
        row.lr_gen = g_opt.lr();
        row.lr_disc = d_opt.lr();
        row.seconds = now_seconds() - t0;
        res.history.push_back(row);

        if (row.val_monitor < res.best_monitor - 1e-9) {
            res.best_monitor = row.val_monitor;
            since_best = 0;
            best.gx = g_x2y.params();
            best.gy = g_y2x.params();
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    g_x2y.params() = best.gx;
    g_y2x.params() = best.gy;
    return res;
}

phantom::PhantomVolume adapt_volume(const phantom::PhantomVolume& vol, const Generator& g) {
    phantom::PhantomVolume out;
    out.style_id = vol.style_id + "_adapted";
    out.seed = vol.seed;
    out.labels = vol.labels;
    out.boundaries = vol.boundaries;
    for (const Image& im : vol.bscans) {
        Tape t;
        const auto bound = g.bind(t, false);
        const Tape::Id x = t.constant(batch_to_tensor({im}, true));
        const Tape::Id y = g.forward(t, x, bound, false, 0);
        const Tensor& yv = t.val(y);
        Image res(im.h, im.w);
        for (int i = 0; i < im.h * im.w; ++i)
            res.v[static_cast<std::size_t>(i)] =
                std::clamp(0.5f * (yv.data[static_cast<std::size_t>(i)] + 1.0f), 0.0f, 1.0f);
        out.bscans.push_back(std::move(res));
    }
    return out;
}

}  // namespace oct::adapt
