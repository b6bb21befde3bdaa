#include "oct/preprocess.hpp"

#include <cmath>
#include <complex>

#include "oct/fft.hpp"
#include "oct/rng.hpp"

namespace oct::phantom {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Phase-correlation surface: ifft( F(ref) * conj(F(mov)) / |.| ). A content
// shift of +s in the moving image puts the peak at -s (mod dims).
std::vector<double> phase_surface(const Image& ref, const Image& mov) {
    const int H = ref.h, W = ref.w;
    std::vector<std::complex<double>> fr(static_cast<std::size_t>(H) * W),
        fm(static_cast<std::size_t>(H) * W);
    double mr = 0, mm = 0;
    for (const float v : ref.v) mr += v;
    for (const float v : mov.v) mm += v;
    mr /= ref.numel();
    mm /= mov.numel();
    for (int i = 0; i < H * W; ++i) {
        fr[static_cast<std::size_t>(i)] = ref.v[static_cast<std::size_t>(i)] - mr;
        fm[static_cast<std::size_t>(i)] = mov.v[static_cast<std::size_t>(i)] - mm;
    }
    fft_2d(fr, H, W, false);
    fft_2d(fm, H, W, false);
    for (int i = 0; i < H * W; ++i) {
        std::complex<double> c = fr[static_cast<std::size_t>(i)] *
                                 std::conj(fm[static_cast<std::size_t>(i)]);
        const double mag = std::abs(c);
        fr[static_cast<std::size_t>(i)] = mag > 1e-12 ? c / mag : std::complex<double>(0, 0);
    }
    fft_2d(fr, H, W, true);
    std::vector<double> surf(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H * W; ++i) surf[static_cast<std::size_t>(i)] = fr[static_cast<std::size_t>(i)].real();
    return surf;
}

int wrap_signed(int v, int n) { return v > n / 2 ? v - n : v; }

std::pair<int, int> surface_peak(const std::vector<double>& surf, int H, int W) {
    int best = 0;
    for (int i = 1; i < H * W; ++i)
        if (surf[static_cast<std::size_t>(i)] > surf[static_cast<std::size_t>(best)]) best = i;
    return {best / W, best % W};
}

// 3-point parabolic refinement along one axis of the wrapped surface.
double parabolic(double ym, double y0, double yp) {
    const double denom = ym - 2.0 * y0 + yp;
    if (std::abs(denom) < 1e-12) return 0.0;
    const double d = 0.5 * (ym - yp) / denom;
    return std::clamp(d, -0.5, 0.5);
}

}  // namespace

std::pair<int, int> phase_xcorr_shift(const Image& reference, const Image& moving) {
    if (reference.h != moving.h || reference.w != moving.w)
        throw std::invalid_argument("phase_xcorr_shift: dimension mismatch");
    const int H = reference.h, W = reference.w;
    const auto surf = phase_surface(reference, moving);
    const auto [pr, pc] = surface_peak(surf, H, W);
    // peak at -shift mod dims
    const int dy = wrap_signed((H - pr) % H, H);
    const int dx = wrap_signed((W - pc) % W, W);
    return {dy, dx};
}

std::pair<double, double> phase_xcorr_shift_subpixel(const Image& reference, const Image& moving) {
    if (reference.h != moving.h || reference.w != moving.w)
        throw std::invalid_argument("phase_xcorr_shift: dimension mismatch");
    const int H = reference.h, W = reference.w;
    const auto surf = phase_surface(reference, moving);
    const auto [pr, pc] = surface_peak(surf, H, W);
    auto at = [&](int r, int c) {
        return surf[static_cast<std::size_t>(((r % H + H) % H)) * W + ((c % W + W) % W)];
    };
    const double fr = parabolic(at(pr - 1, pc), at(pr, pc), at(pr + 1, pc));
    const double fc = parabolic(at(pr, pc - 1), at(pr, pc), at(pr, pc + 1));
    const double peak_r = pr + fr, peak_c = pc + fc;
    double dy = std::fmod(H - peak_r, H);
    double dx = std::fmod(W - peak_c, W);
    if (dy > H / 2.0) dy -= H;
    if (dx > W / 2.0) dx -= W;
    return {dy, dx};
}

PhantomVolume motion_correct(const PhantomVolume& vol, bool subpixel) {
    if (vol.bscans.empty()) throw std::invalid_argument("motion_correct: empty volume");
    PhantomVolume out;
    out.style_id = vol.style_id;
    out.seed = vol.seed;
    out.bscans.push_back(vol.bscans[0]);
    out.labels.push_back(vol.labels[0]);
    out.boundaries.push_back(vol.boundaries[0]);

    double acc_y = 0, acc_x = 0;
    for (int z = 1; z < vol.n_bscans(); ++z) {
        double dy, dx;
        if (subpixel) {
            const auto s = phase_xcorr_shift_subpixel(vol.bscans[static_cast<std::size_t>(z - 1)],
                                                      vol.bscans[static_cast<std::size_t>(z)]);
            dy = s.first;
            dx = s.second;
        } else {
            const auto s = phase_xcorr_shift(vol.bscans[static_cast<std::size_t>(z - 1)],
                                             vol.bscans[static_cast<std::size_t>(z)]);
            dy = s.first;
            dx = s.second;
        }
        acc_y += dy;
        acc_x += dx;
        out.bscans.push_back(shift_image(vol.bscans[static_cast<std::size_t>(z)], -acc_y, -acc_x));
        out.labels.push_back(shift_label(vol.labels[static_cast<std::size_t>(z)], -acc_y, -acc_x));
        std::array<std::vector<float>, 6> curves;
        const int W = vol.bscans[0].w;
        for (int b = 0; b < 6; ++b) {
            curves[static_cast<std::size_t>(b)].resize(static_cast<std::size_t>(W));
            const auto& src = vol.boundaries[static_cast<std::size_t>(z)][static_cast<std::size_t>(b)];
            for (int c = 0; c < W; ++c) {
                const double sc = std::clamp(c + acc_x, 0.0, static_cast<double>(W - 1));
                const int c0 = static_cast<int>(std::floor(sc));
                const int c1 = std::min(c0 + 1, W - 1);
                const double f = sc - c0;
                const double v = src[static_cast<std::size_t>(c0)] * (1 - f) +
                                 src[static_cast<std::size_t>(c1)] * f;
                curves[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)] =
                    static_cast<float>(v - acc_y);
            }
        }
        out.boundaries.push_back(std::move(curves));
    }
    return out;
}

double total_variation(const Image& im) {
    double tv = 0;
    for (int r = 0; r < im.h; ++r)
        for (int c = 0; c < im.w; ++c) {
            const double gx = c + 1 < im.w ? im.at(r, c + 1) - im.at(r, c) : 0.0;
            const double gy = r + 1 < im.h ? im.at(r + 1, c) - im.at(r, c) : 0.0;
            tv += std::sqrt(gx * gx + gy * gy);
        }
    return tv;
}

Image tv_smooth(const Image& im, double weight, int iterations) {
    if (weight < 0 || iterations < 0) throw std::invalid_argument("tv_smooth: bad parameters");
    if (weight == 0 || iterations == 0) return im;

    const int H = im.h, W = im.w;
    const double tau = 0.25;
    std::vector<double> px(static_cast<std::size_t>(H) * W, 0.0),
        py(static_cast<std::size_t>(H) * W, 0.0), divp(static_cast<std::size_t>(H) * W, 0.0);

    auto idx = [W](int r, int c) { return static_cast<std::size_t>(r) * W + c; };
    for (int it = 0; it < iterations; ++it) {
        // divergence of p (adjoint of forward differences)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                double d = 0;
                d += (c < W - 1 ? px[idx(r, c)] : 0.0) - (c > 0 ? px[idx(r, c - 1)] : 0.0);
                d += (r < H - 1 ? py[idx(r, c)] : 0.0) - (r > 0 ? py[idx(r - 1, c)] : 0.0);
                divp[idx(r, c)] = d;
            }
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const double u = divp[idx(r, c)] - im.v[idx(r, c)] / weight;
                const double gx = c < W - 1 ? (divp[idx(r, c + 1)] - im.v[idx(r, c + 1)] / weight) - u : 0.0;
                const double gy = r < H - 1 ? (divp[idx(r + 1, c)] - im.v[idx(r + 1, c)] / weight) - u : 0.0;
                const double norm = 1.0 + tau * std::sqrt(gx * gx + gy * gy);
                px[idx(r, c)] = (px[idx(r, c)] + tau * gx) / norm;
                py[idx(r, c)] = (py[idx(r, c)] + tau * gy) / norm;
            }
    }
    // final divergence for the primal solution u = f - weight * div p
    Image out(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double d = 0;
            d += (c < W - 1 ? px[idx(r, c)] : 0.0) - (c > 0 ? px[idx(r, c - 1)] : 0.0);
            d += (r < H - 1 ? py[idx(r, c)] : 0.0) - (r > 0 ? py[idx(r - 1, c)] : 0.0);
            out.v[idx(r, c)] = static_cast<float>(im.v[idx(r, c)] - weight * d);
        }
    return out;
}

void augment(Image& img, LabelMap& lab, std::uint64_t seed) {
    if (img.h != lab.h || img.w != lab.w) throw std::invalid_argument("augment: dim mismatch");
    Rng rng(seed);
    const bool flip = rng.uniform() < 0.5;
    const double angle = rng.uniform(-10.0, 10.0) * kPi / 180.0;

    if (flip) {
        for (int r = 0; r < img.h; ++r)
            for (int c = 0; c < img.w / 2; ++c) {
                std::swap(img.at(r, c), img.at(r, img.w - 1 - c));
                std::swap(lab.at(r, c), lab.at(r, img.w - 1 - c));
            }
    }
    if (angle != 0.0) {
        const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
        const double ca = std::cos(angle), sa = std::sin(angle);
        Image rimg(img.h, img.w);
        LabelMap rlab(img.h, img.w);
        for (int r = 0; r < img.h; ++r)
            for (int c = 0; c < img.w; ++c) {
                const double dy = r - cy, dx = c - cx;
                const double sr = cy + ca * dy - sa * dx;
                const double sc = cx + sa * dy + ca * dx;
                rimg.at(r, c) = sample_bilinear(img, sr, sc);
                rlab.at(r, c) = sample_nearest(lab, sr, sc);
            }
        img = std::move(rimg);
        lab = std::move(rlab);
    }
}

std::pair<Image, LabelMap> crop_resize(const Image& img, const LabelMap& lab, int target_h,
                                       int target_w) {
    if (target_h < 2 || target_w < 2) throw std::invalid_argument("crop_resize: degenerate target");
    if (target_h == img.h && target_w == img.w) return {img, lab};
    Image out(target_h, target_w);
    LabelMap lout(target_h, target_w);
    const double sy = static_cast<double>(img.h) / target_h;
    const double sx = static_cast<double>(img.w) / target_w;
    for (int r = 0; r < target_h; ++r)
        for (int c = 0; c < target_w; ++c) {
            const double srr = (r + 0.5) * sy - 0.5;
            const double scc = (c + 0.5) * sx - 0.5;
            out.at(r, c) = sample_bilinear(img, srr, scc);
            lout.at(r, c) = sample_nearest(lab, srr, scc);
        }
    return {out, lout};
}

}  // namespace oct::phantom
