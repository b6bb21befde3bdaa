#ifndef OCT_SEG_HPP
#define OCT_SEG_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "oct/net.hpp"
#include "oct/phantom.hpp"

namespace oct::seg {

struct SegModelConfig {
    int in_channels = 1;
    int n_classes = phantom::kNumClasses;
    int base_width = 8;
    int depth = 3;  // down-sampling stages
    std::array<int, 3> dilated_head{1, 2, 4};
};

struct WeightMapParams {
    float boundary_weight = 2.0f;
    float fluid_weight = 5.0f;
    int boundary_radius = 1;
    std::vector<float> class_weights;  // length n_classes; empty = unit weights
};

struct SegTrainConfig {
    int batch_size = 2;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int patience = 3;
    double plateau_factor = 0.5;
    int plateau_patience = 2;
    int max_epochs = 40;
    bool augment = true;
    std::uint64_t seed = 0;
};

/// U-Net encoder/decoder plus an auxiliary FCN decoder path; both outputs
/// concatenate before a 3-layer dilated head that emits class logits.
class SegNet : public Net {
public:
    SegNet(SegModelConfig cfg, std::uint64_t seed);

    /// Logits NxCxHxW. H and W must be divisible by 2^depth.
    Tape::Id forward(Tape& tape, Tape::Id x, const std::vector<Tape::Id>& bound) const;

    const SegModelConfig& config() const { return cfg_; }

private:
    SegModelConfig cfg_;
    std::map<std::string, int> idx_;  // param name -> index
    int p(const std::string& name) const { return idx_.at(name); }
    Tape::Id conv_in_lrelu(Tape& t, Tape::Id x, const std::vector<Tape::Id>& b,
                           const std::string& name, int stride, int dilation = 1) const;
};

/// 1 + w_b [near an inter-class boundary] + w_f [fluid]; Chebyshev radius.
Image pixel_weight_map(const LabelMap& label, const WeightMapParams& params);

/// Inverse class frequency over a label set, clipped to [0.25, 4]. Absent
/// classes get the upper clip.
std::vector<float> compute_class_weights(const std::vector<const LabelMap*>& labels,
                                         int n_classes);

// Loss constants built from labels; weights are replicated across channels so
// the tape sees shape-congruent constants.
Tensor make_onehot(const std::vector<const LabelMap*>& batch, int n_classes);
Tensor make_dice_weights(const std::vector<const LabelMap*>& batch, const WeightMapParams& params,
                         int n_classes);

/// 1 - mean_c (2 sum SpSgSdw + eps) / (sum SpSdw + sum SgSdw + eps)
Tape::Id dice_loss(Tape& tape, Tape::Id probs, const Tensor& onehot, const Tensor& dice_weights,
                   float eps = 1e-6f);

/// mean over pixels of -sum_c S_cw S_g log(S_p), probabilities clamped at 1e-12.
Tape::Id weighted_ce(Tape& tape, Tape::Id probs, const Tensor& onehot,
                     const std::vector<float>& class_weights);

struct SegLossParts {
    Tape::Id dice, ce, total;
};

/// Softmax over channels, then Dice + CE on the result.
SegLossParts seg_loss(Tape& tape, Tape::Id logits, const Tensor& onehot,
                      const Tensor& dice_weights, const std::vector<float>& class_weights);

/// (volume index, b-scan index) addressing into a volume list.
using ItemRef = std::pair<int, int>;
std::vector<ItemRef> split_items(const std::vector<phantom::PhantomVolume>& vols,
                                 const std::vector<int>& volume_ids);

struct SegEpochStats {
    int epoch = 0;
    double train_loss = 0, val_loss = 0, lr = 0, seconds = 0;
};

struct SegTrainResult {
    std::vector<SegEpochStats> history;
    double best_val = 0;
    std::vector<float> class_weights;
};

/// Adam with decoupled L2, plateau LR scheduling and early stopping; the
/// model is left at its best-validation parameters.
SegTrainResult train_segmentation(SegNet& model, const std::vector<phantom::PhantomVolume>& vols,
                                  const phantom::FoldPlan& folds, int fold_index,
                                  const SegTrainConfig& cfg, WeightMapParams wm_params = {});

/// Argmax prediction for one [0,1] image.
LabelMap predict(const SegNet& model, const Image& img);

struct DiceTable {
    std::vector<double> per_class;    // micro dice per class; -1 when class absent everywhere
    std::vector<bool> present;
    double average = 0;               // over present classes
};

/// Prediction source for evaluation; tests may inject oracles.
using PredictFn = std::function<LabelMap(int volume, int scan)>;

/// Micro (set-aggregated) per-class Dice of argmax predictions.
DiceTable evaluate_dice_per_class(const PredictFn& predict_fn,
                                  const std::vector<phantom::PhantomVolume>& vols,
                                  const std::vector<ItemRef>& items, int n_classes);
DiceTable evaluate_dice_per_class(const SegNet& model,
                                  const std::vector<phantom::PhantomVolume>& vols,
                                  const std::vector<ItemRef>& items);

/// Per-B-scan Dice averaged over classes present in that B-scan; the grouping
/// unit for the statistical analysis.
std::vector<double> per_bscan_mean_dice(const PredictFn& predict_fn,
                                        const std::vector<phantom::PhantomVolume>& vols,
                                        const std::vector<ItemRef>& items, int n_classes);
std::vector<double> per_bscan_mean_dice(const SegNet& model,
                                        const std::vector<phantom::PhantomVolume>& vols,
                                        const std::vector<ItemRef>& items);

/// Argmax of average Dice; ties resolve to the lowest index.
int select_best_fold(const std::vector<DiceTable>& tables);

}  // namespace oct::seg

#endif
