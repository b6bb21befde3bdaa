#include "oct/seg.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "oct/preprocess.hpp"

namespace oct::seg {

namespace {

Tensor batch_images(const std::vector<Image>& imgs) {
    const int n = static_cast<int>(imgs.size()), h = imgs[0].h, w = imgs[0].w;
    Tensor t({n, 1, h, w});
    for (int i = 0; i < n; ++i)
        std::copy(imgs[static_cast<std::size_t>(i)].v.begin(),
                  imgs[static_cast<std::size_t>(i)].v.end(),
                  t.data.begin() + static_cast<long>(i) * h * w);
    return t;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

SegNet::SegNet(SegModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.depth < 2) throw std::invalid_argument("SegNet: depth >= 2");
    Rng rng(seed);
    const auto width = [&](int level) { return cfg_.base_width << level; };
    auto conv = [&](const std::string& name, int oc, int ic) {
        idx_[name] = add_param(name, gaussian_init({oc, ic, 3, 3}, rng, 0.02));
    };
    auto convt = [&](const std::string& name, int ic, int oc) {
        // 4x4 stride-2 transpose with pad 1 doubles even dims exactly
        idx_[name] = add_param(name, gaussian_init({ic, oc, 4, 4}, rng, 0.02));
    };

    conv("stem.conv1", width(0), cfg_.in_channels);
    conv("stem.conv2", width(0), width(0));
    for (int i = 1; i <= cfg_.depth; ++i) {
        conv("enc" + std::to_string(i) + ".down", width(i), width(i - 1));
        conv("enc" + std::to_string(i) + ".conv", width(i), width(i));
    }
    for (int i = cfg_.depth; i >= 1; --i) {
        convt("udec" + std::to_string(i) + ".up", width(i), width(i - 1));
        conv("udec" + std::to_string(i) + ".conv", width(i - 1), 2 * width(i - 1));
        convt("fdec" + std::to_string(i) + ".up", width(i), width(i - 1));
    }
    conv("head.conv1", width(0), 2 * width(0));
    conv("head.conv2", width(0), width(0));
    conv("head.conv3", cfg_.n_classes, width(0));
    idx_["head.bias"] = add_param("head.bias", Tensor({cfg_.n_classes}));
}

Tape::Id SegNet::conv_in_lrelu(Tape& t, Tape::Id x, const std::vector<Tape::Id>& b,
                               const std::string& name, int stride, int dilation) const {
    const Tape::Id c = t.conv2d(x, b[static_cast<std::size_t>(p(name))], stride, dilation, dilation);
    return t.leaky_relu(t.instance_norm(c, 1e-5f), 0.2f);
}

Tape::Id SegNet::forward(Tape& t, Tape::Id x, const std::vector<Tape::Id>& bound) const {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 4) throw std::invalid_argument("SegNet::forward: NCHW input required");
    const int div = 1 << cfg_.depth;
    if (xv.dim(2) % div != 0 || xv.dim(3) % div != 0)
        throw std::invalid_argument("SegNet::forward: H and W must be divisible by 2^depth");

    std::vector<Tape::Id> enc(static_cast<std::size_t>(cfg_.depth + 1));
    Tape::Id h = conv_in_lrelu(t, x, bound, "stem.conv1", 1);
    h = conv_in_lrelu(t, h, bound, "stem.conv2", 1);
    enc[0] = h;
    for (int i = 1; i <= cfg_.depth; ++i) {
        h = conv_in_lrelu(t, h, bound, "enc" + std::to_string(i) + ".down", 2);
        h = conv_in_lrelu(t, h, bound, "enc" + std::to_string(i) + ".conv", 1);
        enc[static_cast<std::size_t>(i)] = h;
    }

    // expanding path with skip concatenation
    Tape::Id u = enc[static_cast<std::size_t>(cfg_.depth)];
    for (int i = cfg_.depth; i >= 1; --i) {
        const Tape::Id up =
            t.conv_transpose2d(u, bound[static_cast<std::size_t>(p("udec" + std::to_string(i) + ".up"))], 2, 1);
        u = t.leaky_relu(t.instance_norm(up, 1e-5f), 0.2f);
        u = t.concat_ch(u, enc[static_cast<std::size_t>(i - 1)]);
        u = conv_in_lrelu(t, u, bound, "udec" + std::to_string(i) + ".conv", 1);
    }

    // auxiliary FCN path with additive skips
    Tape::Id f = enc[static_cast<std::size_t>(cfg_.depth)];
    for (int i = cfg_.depth; i >= 1; --i) {
        const Tape::Id up =
            t.conv_transpose2d(f, bound[static_cast<std::size_t>(p("fdec" + std::to_string(i) + ".up"))], 2, 1);
        f = t.leaky_relu(t.instance_norm(up, 1e-5f), 0.2f);
        f = t.add(f, enc[static_cast<std::size_t>(i - 1)]);
    }

    Tape::Id head = t.concat_ch(u, f);
    head = conv_in_lrelu(t, head, bound, "head.conv1", 1, cfg_.dilated_head[0]);
    head = conv_in_lrelu(t, head, bound, "head.conv2", 1, cfg_.dilated_head[1]);
    const int d3 = cfg_.dilated_head[2];
    Tape::Id logits = t.conv2d(head, bound[static_cast<std::size_t>(p("head.conv3"))], 1, d3, d3);
    return t.add_channel_bias(logits, bound[static_cast<std::size_t>(p("head.bias"))]);
}

Image pixel_weight_map(const LabelMap& label, const WeightMapParams& params) {
    const int h = label.h, w = label.w;
    std::vector<std::uint8_t> boundary(static_cast<std::size_t>(h) * w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const std::uint8_t cls = label.at(r, c);
            const bool edge = (r > 0 && label.at(r - 1, c) != cls) ||
                              (r + 1 < h && label.at(r + 1, c) != cls) ||
                              (c > 0 && label.at(r, c - 1) != cls) ||
                              (c + 1 < w && label.at(r, c + 1) != cls);
            boundary[static_cast<std::size_t>(r) * w + c] = edge;
        }
    for (int it = 1; it < params.boundary_radius; ++it) {
        std::vector<std::uint8_t> grown = boundary;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                if (boundary[static_cast<std::size_t>(r) * w + c]) continue;
                for (int dr = -1; dr <= 1 && !grown[static_cast<std::size_t>(r) * w + c]; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr >= 0 && rr < h && cc >= 0 && cc < w &&
                            boundary[static_cast<std::size_t>(rr) * w + cc]) {
                            grown[static_cast<std::size_t>(r) * w + c] = 1;
                            break;
                        }
                    }
            }
        boundary.swap(grown);
    }
    Image out(h, w);
    for (int i = 0; i < h * w; ++i) {
        float v = 1.0f;
        if (boundary[static_cast<std::size_t>(i)]) v += params.boundary_weight;
        if (label.v[static_cast<std::size_t>(i)] == phantom::kFluid) v += params.fluid_weight;
        out.v[static_cast<std::size_t>(i)] = v;
    }
    return out;
}

std::vector<float> compute_class_weights(const std::vector<const LabelMap*>& labels,
                                         int n_classes) {
    std::vector<long> counts(static_cast<std::size_t>(n_classes), 0);
    long total = 0;
    for (const LabelMap* lm : labels)
        for (const std::uint8_t c : lm->v) {
            ++counts[c];
            ++total;
        }
    std::vector<float> w(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        const long cnt = counts[static_cast<std::size_t>(c)];
        const double raw = cnt > 0 ? static_cast<double>(total) / (n_classes * static_cast<double>(cnt)) : 4.0;
        w[static_cast<std::size_t>(c)] = static_cast<float>(std::clamp(raw, 0.25, 4.0));
    }
    return w;
}

Tensor make_onehot(const std::vector<const LabelMap*>& batch, int n_classes) {
    const int n = static_cast<int>(batch.size()), h = batch[0]->h, w = batch[0]->w;
    Tensor t({n, n_classes, h, w});
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                t.data[static_cast<std::size_t>(
                    ((static_cast<long>(i) * n_classes + batch[static_cast<std::size_t>(i)]->at(r, c)) * h + r) * w +
                    c)] = 1.0f;
    return t;
}

Tensor make_dice_weights(const std::vector<const LabelMap*>& batch, const WeightMapParams& params,
                         int n_classes) {
    const int n = static_cast<int>(batch.size()), h = batch[0]->h, w = batch[0]->w;
    Tensor t({n, n_classes, h, w});
    for (int i = 0; i < n; ++i) {
        const Image wm = pixel_weight_map(*batch[static_cast<std::size_t>(i)], params);
        for (int c = 0; c < n_classes; ++c)
            std::copy(wm.v.begin(), wm.v.end(),
                      t.data.begin() + (static_cast<long>(i) * n_classes + c) * h * w);
    }
    return t;
}

Tape::Id dice_loss(Tape& t, Tape::Id probs, const Tensor& onehot, const Tensor& dice_weights,
                   float eps) {
    const Tensor& pv = t.val(probs);
    if (!same_shape(pv.shape, onehot.shape) || !same_shape(pv.shape, dice_weights.shape))
        throw std::invalid_argument("dice_loss: shape mismatch");
    const int C = pv.dim(1);

    Tensor sgw(onehot.shape);
    for (std::size_t i = 0; i < sgw.data.size(); ++i)
        sgw.data[i] = onehot.data[i] * dice_weights.data[i];

    Tensor den_g({C});
    {
        const int n = pv.dim(0), hw = pv.dim(2) * pv.dim(3);
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < C; ++c) {
                double acc = 0;
                const float* row = sgw.ptr() + (static_cast<long>(b) * C + c) * hw;
                for (int i = 0; i < hw; ++i) acc += row[i];
                den_g.data[static_cast<std::size_t>(c)] += static_cast<float>(acc);
            }
    }

    const Tape::Id num = t.add_const(t.scale(t.sum_per_channel(t.mul_const(probs, sgw)), 2.0f), eps);
    const Tape::Id den_p = t.sum_per_channel(t.mul_const(probs, dice_weights));
    const Tape::Id den = t.add_const(t.add(den_p, t.constant(den_g)), eps);
    return t.add_const(t.scale(t.mean_all(t.div(num, den)), -1.0f), 1.0f);
}

Tape::Id weighted_ce(Tape& t, Tape::Id probs, const Tensor& onehot,
                     const std::vector<float>& class_weights) {
    const Tensor& pv = t.val(probs);
    if (!same_shape(pv.shape, onehot.shape)) throw std::invalid_argument("weighted_ce: shape mismatch");
    const int n = pv.dim(0), C = pv.dim(1), hw = pv.dim(2) * pv.dim(3);
    if (static_cast<int>(class_weights.size()) != C)
        throw std::invalid_argument("weighted_ce: class weight length");

    Tensor wmask(onehot.shape);
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < C; ++c) {
            const float cw = class_weights[static_cast<std::size_t>(c)];
            const long off = (static_cast<long>(b) * C + c) * hw;
            for (int i = 0; i < hw; ++i)
                wmask.data[static_cast<std::size_t>(off + i)] =
                    onehot.data[static_cast<std::size_t>(off + i)] * cw;
        }
    const Tape::Id lg = t.log_clamped(probs, 1e-12f);
    const Tape::Id s = t.sum_all(t.mul_const(lg, wmask));
    return t.scale(s, -1.0f / static_cast<float>(static_cast<long>(n) * hw));
}

SegLossParts seg_loss(Tape& t, Tape::Id logits, const Tensor& onehot, const Tensor& dice_weights,
                      const std::vector<float>& class_weights) {
    const Tape::Id probs = t.softmax(logits, 1);
    SegLossParts parts;
    parts.dice = dice_loss(t, probs, onehot, dice_weights);
    parts.ce = weighted_ce(t, probs, onehot, class_weights);
    parts.total = t.add(parts.dice, parts.ce);
    return parts;
}

std::vector<ItemRef> split_items(const std::vector<phantom::PhantomVolume>& vols,
                                 const std::vector<int>& volume_ids) {
    std::vector<ItemRef> items;
    for (const int v : volume_ids)
        for (int z = 0; z < vols.at(static_cast<std::size_t>(v)).n_bscans(); ++z)
            items.emplace_back(v, z);
    return items;
}

SegTrainResult train_segmentation(SegNet& model, const std::vector<phantom::PhantomVolume>& vols,
                                  const phantom::FoldPlan& folds, int fold_index,
                                  const SegTrainConfig& cfg, WeightMapParams wm_params) {
    const auto& split = folds.folds.at(static_cast<std::size_t>(fold_index));
    const auto train_items = split_items(vols, split.train);
    const auto val_items = split_items(vols, split.val);
    if (train_items.empty()) throw std::invalid_argument("train_segmentation: empty training split");

    const int C = model.config().n_classes;
    if (wm_params.class_weights.empty()) {
        std::vector<const LabelMap*> train_labels;
        for (const auto& [v, z] : train_items)
            train_labels.push_back(&vols[static_cast<std::size_t>(v)].labels[static_cast<std::size_t>(z)]);
        wm_params.class_weights = compute_class_weights(train_labels, C);
    }

    SegTrainResult res;
    res.class_weights = wm_params.class_weights;
    res.best_val = std::numeric_limits<double>::infinity();
    if (cfg.max_epochs == 0) return res;

    OptimizerConfig ocfg;
    ocfg.kind = OptKind::Adam;
    ocfg.lr = cfg.learning_rate;
    ocfg.weight_decay = cfg.weight_decay;
    Optimizer opt(ocfg);

    auto eval_loss = [&](const std::vector<ItemRef>& items) {
        double sum = 0;
        for (const auto& [v, z] : items) {
            const Image& im = vols[static_cast<std::size_t>(v)].bscans[static_cast<std::size_t>(z)];
            const LabelMap& lm = vols[static_cast<std::size_t>(v)].labels[static_cast<std::size_t>(z)];
            Tape t;
            const auto bound = model.bind(t, false);
            const Tape::Id logits = model.forward(t, t.constant(batch_images({im})), bound);
            const std::vector<const LabelMap*> lb{&lm};
            const auto parts = seg_loss(t, logits, make_onehot(lb, C),
                                        make_dice_weights(lb, wm_params, C), wm_params.class_weights);
            sum += t.scalar(parts.total);
        }
        return items.empty() ? 0.0 : sum / static_cast<double>(items.size());
    };

    std::vector<Param> best_params = model.params();
    int since_best = 0, plateau = 0;
    std::uint64_t aug_counter = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double t0 = now_seconds();
        auto items = train_items;
        Rng order_rng(Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        order_rng.shuffle(items);

        double loss_sum = 0;
        int batches = 0;
        for (std::size_t ofs = 0; ofs < items.size(); ofs += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<Image> imgs;
            std::vector<LabelMap> labs;
            for (std::size_t i = ofs; i < std::min(ofs + static_cast<std::size_t>(cfg.batch_size), items.size()); ++i) {
                Image im = vols[static_cast<std::size_t>(items[i].first)].bscans[static_cast<std::size_t>(items[i].second)];
                LabelMap lm = vols[static_cast<std::size_t>(items[i].first)].labels[static_cast<std::size_t>(items[i].second)];
                if (cfg.augment) phantom::augment(im, lm, Rng::derive(cfg.seed, 0xA0000000ULL + aug_counter));
                ++aug_counter;
                imgs.push_back(std::move(im));
                labs.push_back(std::move(lm));
            }
            std::vector<const LabelMap*> lptr;
            for (const auto& l : labs) lptr.push_back(&l);

            Tape t;
            const auto bound = model.bind(t, true);
            const Tape::Id logits = model.forward(t, t.constant(batch_images(imgs)), bound);
            const auto parts = seg_loss(t, logits, make_onehot(lptr, C),
                                        make_dice_weights(lptr, wm_params, C), wm_params.class_weights);
            t.backward(parts.total);
            std::vector<const std::vector<float>*> grads;
            for (const Tape::Id id : bound) grads.push_back(&t.grad(id));
            opt.step(model.param_ptrs(), grads);
            loss_sum += t.scalar(parts.total);
            ++batches;
        }

        const double val = eval_loss(val_items);
        SegEpochStats row;
        row.epoch = epoch;
        row.train_loss = loss_sum / std::max(batches, 1);
        row.val_loss = val;
        row.lr = opt.lr();
        row.seconds = now_seconds() - t0;
        res.history.push_back(row);

        if (val < res.best_val - 1e-9) {
            res.best_val = val;
            since_best = 0;
            plateau = 0;
            best_params = model.params();
        } else {
            ++since_best;
            ++plateau;
            if (plateau >= cfg.plateau_patience) {
                opt.set_lr(opt.lr() * cfg.plateau_factor);
                plateau = 0;
            }
            if (since_best >= cfg.patience) break;
        }
    }
    model.params() = best_params;
    return res;
}

LabelMap predict(const SegNet& model, const Image& img) {
    Tape t;
    const auto bound = model.bind(t, false);
    const Tape::Id logits = model.forward(t, t.constant(batch_images({img})), bound);
    const Tensor& lv = t.val(logits);
    const int C = lv.dim(1), h = lv.dim(2), w = lv.dim(3);
    LabelMap out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            int best = 0;
            float bv = lv.data[static_cast<std::size_t>(static_cast<long>(r) * w + c)];
            for (int k = 1; k < C; ++k) {
                const float v = lv.data[static_cast<std::size_t>((static_cast<long>(k) * h + r) * w + c)];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            out.at(r, c) = static_cast<std::uint8_t>(best);
        }
    return out;
}

DiceTable evaluate_dice_per_class(const PredictFn& predict_fn,
                                  const std::vector<phantom::PhantomVolume>& vols,
                                  const std::vector<ItemRef>& items, int n_classes) {
    if (items.empty()) throw std::invalid_argument("evaluate_dice_per_class: empty test set");
    const int C = n_classes;
    std::vector<long> inter(static_cast<std::size_t>(C), 0), np(static_cast<std::size_t>(C), 0),
        ng(static_cast<std::size_t>(C), 0);
    for (const auto& [v, z] : items) {
        const LabelMap pred = predict_fn(v, z);
        const LabelMap& gt = vols[static_cast<std::size_t>(v)].labels[static_cast<std::size_t>(z)];
        for (std::size_t i = 0; i < gt.v.size(); ++i) {
            ++np[pred.v[i]];
            ++ng[gt.v[i]];
            if (pred.v[i] == gt.v[i]) ++inter[gt.v[i]];
        }
    }
    DiceTable table;
    table.per_class.resize(static_cast<std::size_t>(C), -1.0);
    table.present.resize(static_cast<std::size_t>(C), false);
    double sum = 0;
    int n_present = 0;
    for (int c = 0; c < C; ++c) {
        const long denom = np[static_cast<std::size_t>(c)] + ng[static_cast<std::size_t>(c)];
        if (denom == 0) continue;
        table.present[static_cast<std::size_t>(c)] = true;
        table.per_class[static_cast<std::size_t>(c)] =
            2.0 * static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(denom);
        sum += table.per_class[static_cast<std::size_t>(c)];
        ++n_present;
    }
    table.average = n_present > 0 ? sum / n_present : 0.0;
    return table;
}

DiceTable evaluate_dice_per_class(const SegNet& model,
                                  const std::vector<phantom::PhantomVolume>& vols,
                                  const std::vector<ItemRef>& items) {
    return evaluate_dice_per_class(
        [&](int v, int z) {
            return predict(model, vols[static_cast<std::size_t>(v)].bscans[static_cast<std::size_t>(z)]);
        },
        vols, items, model.config().n_classes);
}

std::vector<double> per_bscan_mean_dice(const PredictFn& predict_fn,
                                        const std::vector<phantom::PhantomVolume>& vols,
                                        const std::vector<ItemRef>& items, int n_classes) {
    const int C = n_classes;
    std::vector<double> out;
    for (const auto& [v, z] : items) {
        const LabelMap pred = predict_fn(v, z);
        const LabelMap& gt = vols[static_cast<std::size_t>(v)].labels[static_cast<std::size_t>(z)];
        double sum = 0;
        int n_present = 0;
        for (int c = 0; c < C; ++c) {
            long inter = 0, np = 0, ng = 0;
            for (std::size_t i = 0; i < gt.v.size(); ++i) {
                const bool a = pred.v[i] == c, b = gt.v[i] == c;
                np += a;
                ng += b;
                inter += a && b;
            }
            if (np + ng == 0) continue;
            sum += 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
            ++n_present;
        }
        out.push_back(n_present > 0 ? sum / n_present : 1.0);
    }
    return out;
}

std::vector<double> per_bscan_mean_dice(const SegNet& model,
                                        const std::vector<phantom::PhantomVolume>& vols,
                                        const std::vector<ItemRef>& items) {
    return per_bscan_mean_dice(
        [&](int v, int z) {
            return predict(model, vols[static_cast<std::size_t>(v)].bscans[static_cast<std::size_t>(z)]);
        },
        vols, items, model.config().n_classes);
}

int select_best_fold(const std::vector<DiceTable>& tables) {
    if (tables.empty()) throw std::invalid_argument("select_best_fold: empty input");
    int best = 0;
    for (int i = 1; i < static_cast<int>(tables.size()); ++i)
        if (tables[static_cast<std::size_t>(i)].average > tables[static_cast<std::size_t>(best)].average) best = i;
    return best;
}

}  // namespace oct::seg
