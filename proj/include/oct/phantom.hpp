#ifndef OCT_PHANTOM_HPP
#define OCT_PHANTOM_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oct/image.hpp"

namespace oct::phantom {

/// Region classes. The five retinal layers sit between Vitreous and Choroid;
/// Fluid only appears inside the ONL band when enabled.
enum ClassId : std::uint8_t {
    kVitreous = 0,
    kIlmNfl = 1,
    kNflIpl = 2,
    kIplOpl = 3,
    kOplIos = 4,
    kIosBm = 5,
    kChoroid = 6,
    kFluid = 7,
};
constexpr int kNumClasses = 8;
const char* class_name(int c);

/// One synthetic acquisition-device profile.
struct DeviceStyle {
    std::string id = "X";
    // Vitreous, 5 retinal layers, Choroid, Fluid
    std::array<float, 8> base_intensity{0.05f, 0.78f, 0.42f, 0.65f, 0.32f, 0.80f, 0.18f, 0.10f};
    float speckle_shape = 9.0f;      // Gamma shape; higher = less multiplicative noise
    float additive_noise_std = 0.01f;
    float gamma = 1.0f;
    float contrast = 1.0f;
    int lateral_jitter_max = 2;
    int axial_jitter_max = 2;

    void validate() const;
};

DeviceStyle source_style();  // bright, low-noise profile
DeviceStyle target_style();  // darker, speckled, gamma-shifted profile

struct PhantomVolume {
    std::vector<Image> bscans;
    std::vector<LabelMap> labels;
    // per B-scan, 6 boundary row curves (ILM .. BM), one row value per column
    std::vector<std::array<std::vector<float>, 6>> boundaries;
    std::string style_id;
    std::uint64_t seed = 0;

    int n_bscans() const { return static_cast<int>(bscans.size()); }
};

/// Layered speckled volume with smooth random boundaries, optional foveal dip
/// and optional fluid pockets inside the ONL band. Throws on degenerate
/// geometry (a layer collapsing below one pixel).
PhantomVolume generate_volume(const DeviceStyle& style, std::uint64_t seed, int n_bscans, int H,
                              int W, bool with_fluid);

/// Pixel counts per class over the whole volume.
std::array<long, kNumClasses> label_histogram(const PhantomVolume& vol);

/// True when every boundary is strictly above the next at every column.
bool boundaries_ordered(const PhantomVolume& vol);

struct FoldPlan {
    struct Split {
        std::vector<int> train, val, test;
    };
    int k = 0;
    std::vector<Split> folds;
};

/// Volume-stratified k-fold split. For k > 1 the shuffled volumes are
/// partitioned into k rotation chunks (the test sets, or the validation sets
/// when the test ratio is zero); remaining volumes split by the ratios.
FoldPlan make_folds(const std::vector<int>& volume_ids, int k,
                    std::array<double, 3> ratios /*train,val,test*/, std::uint64_t seed);

/// Deterministic index pairing; the shorter side cycles so every index of the
/// longer side appears exactly once per epoch.
std::vector<std::pair<int, int>> pair_stream(int n_source, int n_target, std::uint64_t seed);

// Volume persistence: per-volume tensor containers plus volumes.manifest.
void save_volumes(const std::filesystem::path& dir, const std::vector<PhantomVolume>& vols);
std::vector<PhantomVolume> load_volumes(const std::filesystem::path& dir);

}  // namespace oct::phantom

#endif
