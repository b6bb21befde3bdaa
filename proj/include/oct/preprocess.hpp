#ifndef OCT_PREPROCESS_HPP
#define OCT_PREPROCESS_HPP

#include <cstdint>
#include <utility>

#include "oct/image.hpp"
#include "oct/phantom.hpp"

namespace oct::phantom {

/// Integer translation (dy, dx) that maps `reference` content onto `moving`,
/// found at the peak of the spectral phase correlation surface. Wrapped to
/// signed shifts in (-H/2, H/2] x (-W/2, W/2].
std::pair<int, int> phase_xcorr_shift(const Image& reference, const Image& moving);

/// Same surface with a parabolic fit around the peak (optional subpixel mode).
std::pair<double, double> phase_xcorr_shift_subpixel(const Image& reference, const Image& moving);

/// Aligns every B-scan to the first: adjacent-pair shifts are estimated and
/// accumulated against the reference, then undone with bilinear interpolation
/// (nearest-neighbour for labels). Boundary curves are shifted analytically.
PhantomVolume motion_correct(const PhantomVolume& vol, bool subpixel = false);

/// Isotropic discrete total variation.
double total_variation(const Image& im);

/// Chambolle projected-gradient TV denoising; weight 0 or iterations 0 is the
/// identity. Never increases total variation.
Image tv_smooth(const Image& im, double weight, int iterations);

/// Random horizontal flip (p=0.5) plus rotation uniform in [-10, 10] degrees;
/// bilinear for the image, nearest for the label.
void augment(Image& img, LabelMap& lab, std::uint64_t seed);

/// Direct resize: bilinear image, nearest label, no letterboxing.
std::pair<Image, LabelMap> crop_resize(const Image& img, const LabelMap& lab, int target_h,
                                       int target_w);

}  // namespace oct::phantom

#endif
