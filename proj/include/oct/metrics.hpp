#ifndef OCT_METRICS_HPP
#define OCT_METRICS_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "oct/image.hpp"
#include "oct/optim.hpp"
#include "oct/tape.hpp"

namespace oct::metrics {

/// Row-major double matrix for feature/covariance math.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

/// 2|X∩Y| / (|X|+|Y|); 1.0 when both masks are empty. Nonzero bytes count as in-mask.
double dice_score(const std::vector<std::uint8_t>& x, const std::vector<std::uint8_t>& y);

/// Global-statistics SSIM with c1=(0.01 L)^2, c2=(0.03 L)^2.
double ssim(const Image& x, const Image& y, double dynamic_range);

/// 10*log10(max(x)^2 / MSE), capped at 120 dB when the images coincide.
double psnr(const Image& x, const Image& y);

/// Frozen seeded 4-stage conv encoder; taps after each LeakyReLU carry
/// channel widths {8, 16, 32, 64}. Inputs are expected in [-1, 1].
class FeatureExtractor {
public:
    explicit FeatureExtractor(std::uint64_t seed = 0xFEA7);

    static constexpr std::array<int, 4> kTapWidths{8, 16, 32, 64};

    /// Taps on an existing tape (weights bound frozen); used by the
    /// perceptual loss so gradients flow to the input only.
    std::array<Tape::Id, 4> taps_on_tape(Tape& tape, Tape::Id x) const;

    const std::vector<Param>& params() const { return params_; }

private:
    std::vector<Param> params_;
};

/// Global-average-pooled activations at one tap for a batch of [0,1] images
/// (rescaled to [-1,1] internally); one row per image.
Mat extract_features(const std::vector<Image>& images, const FeatureExtractor& f, int tap);

struct GaussianStats {
    std::vector<double> mean;
    Mat cov;  // unbiased, symmetrized
    int count = 0;
};

GaussianStats gaussian_stats(const Mat& features);

/// Symmetric PSD square root by Jacobi eigendecomposition; negative
/// eigenvalues are clamped to zero. Throws on asymmetric input.
Mat matrix_sqrt_psd(const Mat& a);

/// ||mu_X - mu_Y||^2 + Tr(S_X + S_Y - 2 (S_X S_Y)^{1/2})
double frechet_distance(const GaussianStats& sx, const GaussianStats& sy);

struct KernelParams {
    double gamma = 1.0;
    double c = 1.0;
    int degree = 3;
};

/// Defaults the spec's gamma = 1/d convention for a given feature width.
KernelParams default_kernel(int dim);

double poly_kernel(const std::vector<double>& x, const std::vector<double>& y,
                   const KernelParams& p);

/// Unbiased squared MMD with a polynomial kernel; may be negative.
double mmd_unbiased_sq(const Mat& x, const Mat& y, const KernelParams& p);

/// Mean and population std of mmd_unbiased_sq over seeded subset pairs.
std::pair<double, double> kid(const Mat& x, const Mat& y, const KernelParams& p, int n_subsets,
                              int subset_size, std::uint64_t seed);

}  // namespace oct::metrics

#endif
