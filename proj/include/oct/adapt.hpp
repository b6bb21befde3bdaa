#ifndef OCT_ADAPT_HPP
#define OCT_ADAPT_HPP

#include <functional>
#include <map>
#include <string>

#include "oct/metrics.hpp"
#include "oct/net.hpp"
#include "oct/phantom.hpp"
#include "oct/seg.hpp"

namespace oct::adapt {

struct GeneratorConfig {
    int downsample_stages = 2;
    int n_resblocks = 4;  // desk default; the full-scale setting is 9
    int base_width = 4;
    double dropout_p = 0.5;
};

struct DiscriminatorConfig {
    int conv_stages = 3;
    int base_width = 8;
};

enum class InitMode { Standard, NearIdentity };

struct LossWeights {
    double lambda_x = 20, lambda_y = 20;
    double idt = 0.5;
    double seg = 1, dssim = 1, psnr = 1, feat = 1, grad = 1;
};

struct AdaptTrainConfig {
    double gen_lr = 1e-5;
    double disc_lr_ratio = 5;
    int max_epochs = 100;
    int decay_start_epoch = 50;
    int batch_size = 2;
    double soft_label_amplitude = 0.2;
    int patience = 3;
    int pool_capacity = 50;
    bool augment = false;
    bool asymmetric_gradient_loss = false;
    std::uint64_t seed = 0;
};

enum class Preset { NoAdapt, Baseline, Seg, Sp, Spg, Ssppg };

/// Accepts "sg" as an alias of "sp" (the same model under both names).
Preset preset_from_string(const std::string& name);
std::string preset_name(Preset p);

/// Zeroes the per-preset loss weights on top of a base bundle.
LossWeights preset_weights(Preset preset, LossWeights base);

/// ResNet-style encoder/bottleneck/decoder generator with tanh output.
/// NearIdentity init scales the residual-branch and output convolutions by
/// 1e-3 and routes the input through an atanh bypass so G(x) starts close to
/// the identity map; used by plumbing tests, never in benchmark training.
class Generator : public Net {
public:
    Generator(GeneratorConfig cfg, std::uint64_t seed, InitMode mode = InitMode::Standard);

    Tape::Id forward(Tape& tape, Tape::Id x, const std::vector<Tape::Id>& bound, bool training,
                     std::uint64_t dropout_seed) const;

    const GeneratorConfig& config() const { return cfg_; }
    InitMode init_mode() const { return mode_; }

private:
    GeneratorConfig cfg_;
    InitMode mode_;
    std::map<std::string, int> idx_;
    int p(const std::string& name) const { return idx_.at(name); }
};

/// PatchGAN-style stack of stride-2 convolutions ending in a raw (no
/// sigmoid) single-channel classification map.
class Discriminator : public Net {
public:
    Discriminator(DiscriminatorConfig cfg, std::uint64_t seed);

    Tape::Id forward(Tape& tape, Tape::Id x, const std::vector<Tape::Id>& bound) const;

    const DiscriminatorConfig& config() const { return cfg_; }

private:
    DiscriminatorConfig cfg_;
    std::map<std::string, int> idx_;
    int p(const std::string& name) const { return idx_.at(name); }
};

/// History of synthesized images. Under capacity each query stores and
/// returns the input; at capacity it returns a stored image (replacing it
/// with the input) with the swap probability, else the input.
class ImagePool {
public:
    ImagePool(int capacity, std::uint64_t seed, double swap_prob = 0.5)
        : capacity_(capacity), swap_prob_(swap_prob), rng_(seed) {}

    Tensor query(const Tensor& image);
    int size() const { return static_cast<int>(stored_.size()); }
    int capacity() const { return capacity_; }

private:
    int capacity_;
    double swap_prob_;
    Rng rng_;
    std::vector<Tensor> stored_;
};

/// Generator application seam: losses take callables so tests can pass exact
/// identities; the trainer passes memoizing wrappers so shared applications
/// (cycle/identity/perceptual) are computed once per batch.
using ApplyFn = std::function<Tape::Id(Tape&, Tape::Id)>;

/// Memoizes per (tape, input node); one instance per generator per tape.
class CachedApply {
public:
    explicit CachedApply(ApplyFn fn) : fn_(std::move(fn)) {}
    Tape::Id operator()(Tape& t, Tape::Id x) {
        const auto it = cache_.find(x);
        if (it != cache_.end()) return it->second;
        const Tape::Id out = fn_(t, x);
        cache_.emplace(x, out);
        return out;
    }

private:
    ApplyFn fn_;
    std::map<Tape::Id, Tape::Id> cache_;
};

// ---- adaptation losses (Section headers in [-1,1] unless noted) ----------

/// lambda_x L1(x, G_Y2X(G_X2Y(x))) + lambda_y L1(y, G_X2Y(G_Y2X(y)))
Tape::Id cycle_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x,
                    double lambda_x, double lambda_y);

/// L1(x, G_Y2X(x)) + L1(y, G_X2Y(y))
Tape::Id identity_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x);

/// L_seg(S(x), l) + L_seg(S(G_Y2X(G_X2Y(x))), l) with S frozen; the x batch
/// and its labels live in the source domain.
Tape::Id semantic_loss(Tape& t, Tape::Id x, const Tensor& onehot, const Tensor& dice_weights,
                       const std::vector<float>& class_weights, CachedApply& g_x2y,
                       CachedApply& g_y2x, const seg::SegNet& seg_model,
                       const std::vector<Tape::Id>& seg_bound);

/// (1 - SSIM)/2 with global per-image statistics, averaged over the batch.
Tape::Id dssim_loss(Tape& t, Tape::Id x, Tape::Id y, double dynamic_range);

/// -10 log10(max(x)^2 / max(MSE, 1e-12)) averaged over the batch.
Tape::Id psnr_loss(Tape& t, Tape::Id x, Tape::Id y);

/// Six L1 feature terms per tap over four frozen extractor taps.
Tape::Id perceptual_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x,
                         const metrics::FeatureExtractor& f);

/// Sobel-response MSE between originals and their synthetic counterparts.
/// The asymmetric variant applies the horizontal kernel to the X pair and the
/// vertical kernel to the Y pair only.
Tape::Id gradient_loss(Tape& t, Tape::Id x, Tape::Id y, CachedApply& g_x2y, CachedApply& g_y2x,
                       bool asymmetric = false);

/// Least-squares GAN pair: g = MSE(D(fake), 1); d = (MSE(D(real), 1 + eta) +
/// MSE(D(pooled fake), eta)) / 2 with per-pixel soft labels of the given
/// amplitude. The fake for the discriminator side is drawn through the pool.
std::pair<Tape::Id, Tape::Id> gan_losses(Tape& t, const ApplyFn& discriminator, Tape::Id real,
                                         Tape::Id fake, ImagePool& pool,
                                         double soft_label_amplitude, Rng& rng);

struct LossBreakdown {
    double gan = 0, cyc = 0, idt = 0, sem = 0, dssim = 0, psnr = 0, perc = 0, grad = 0;
    double total = 0;
};

struct TotalLoss {
    Tape::Id node = -1;
    LossBreakdown values;
};

/// Weighted sum per Eq-style bundle; component ids may be -1 when a preset
/// zeroes them. The breakdown records the weighted contributions.
TotalLoss total_loss(Tape& t, Tape::Id gan, Tape::Id cyc, Tape::Id idt, Tape::Id sem,
                     Tape::Id dssim, Tape::Id psnr, Tape::Id perc, Tape::Id grad,
                     const LossWeights& weights, Preset preset);

struct AdaptHistoryRow {
    int epoch = 0;
    double g_loss = 0, d_loss = 0, cyc = 0, idt = 0, sem = 0, dssim = 0, psnr = 0, perc = 0,
           grad = 0;
    double val_monitor = 0, lr_gen = 0, lr_disc = 0, seconds = 0;
};

struct AdaptResult {
    std::vector<AdaptHistoryRow> history;
    double best_monitor = 0;
};

/// Linear decay to zero between decay_start_epoch and max_epochs (1-based).
double scheduled_lr(double base_lr, int epoch, const AdaptTrainConfig& cfg);

/// Generator-first update per batch, pooled fakes for the discriminators,
/// RMSProp with the TTUR ratio, early stopping on the source-domain
/// validation semantic loss. Models are left at the best-monitor epoch.
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
                             const AdaptTrainConfig& cfg);

/// Per-B-scan generator application: [0,1] -> [-1,1] -> G -> [0,1]; labels
/// and boundaries are carried through unchanged.
phantom::PhantomVolume adapt_volume(const phantom::PhantomVolume& vol, const Generator& g);

}  // namespace oct::adapt

#endif
