#ifndef OCT_IMAGE_HPP
#define OCT_IMAGE_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "oct/tensor.hpp"

namespace oct {

/// Single-channel float image, row-major, values nominally in [0,1].
struct Image {
    int h = 0, w = 0;
    std::vector<float> v;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0.0f) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("Image: non-positive dims");
    }
    float& at(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
    float at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
    int numel() const { return h * w; }
};

/// Per-pixel class indices aligned with an Image.
struct LabelMap {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelMap() = default;
    LabelMap(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {
        if (h_ <= 0 || w_ <= 0) throw std::invalid_argument("LabelMap: non-positive dims");
    }
    std::uint8_t& at(int r, int c) { return v[static_cast<std::size_t>(r) * w + c]; }
    std::uint8_t at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
};

inline Tensor image_to_tensor(const Image& im) {
    Tensor t({1, 1, im.h, im.w});
    t.data.assign(im.v.begin(), im.v.end());
    return t;
}

inline Image tensor_to_image(const Tensor& t) {
    int n, c, h, w;
    t.nchw(n, c, h, w);
    if (n != 1 || c != 1) throw std::invalid_argument("tensor_to_image: need 1x1xHxW");
    Image im(h, w);
    im.v.assign(t.data.begin(), t.data.end());
    return im;
}

/// Bilinear sample with replicated borders.
inline float sample_bilinear(const Image& im, double r, double c) {
    const auto clampi = [](int x, int lo, int hi) { return x < lo ? lo : (x > hi ? hi : x); };
    const int r0 = static_cast<int>(std::floor(r)), c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0, fc = c - c0;
    const int r0c = clampi(r0, 0, im.h - 1), r1c = clampi(r0 + 1, 0, im.h - 1);
    const int c0c = clampi(c0, 0, im.w - 1), c1c = clampi(c0 + 1, 0, im.w - 1);
    const double top = im.at(r0c, c0c) * (1 - fc) + im.at(r0c, c1c) * fc;
    const double bot = im.at(r1c, c0c) * (1 - fc) + im.at(r1c, c1c) * fc;
    return static_cast<float>(top * (1 - fr) + bot * fr);
}

/// Nearest-neighbour sample with replicated borders.
inline std::uint8_t sample_nearest(const LabelMap& lm, double r, double c) {
    int ri = static_cast<int>(std::lround(r));
    int ci = static_cast<int>(std::lround(c));
    ri = ri < 0 ? 0 : (ri >= lm.h ? lm.h - 1 : ri);
    ci = ci < 0 ? 0 : (ci >= lm.w ? lm.w - 1 : ci);
    return lm.at(ri, ci);
}

/// Translate content by (+sy, +sx); out(r,c) = in(r-sy, c-sx), replicate border.
inline Image shift_image(const Image& im, double sy, double sx) {
    Image out(im.h, im.w);
    for (int r = 0; r < im.h; ++r)
        for (int c = 0; c < im.w; ++c) out.at(r, c) = sample_bilinear(im, r - sy, c - sx);
    return out;
}

inline LabelMap shift_label(const LabelMap& lm, double sy, double sx) {
    LabelMap out(lm.h, lm.w);
    for (int r = 0; r < lm.h; ++r)
        for (int c = 0; c < lm.w; ++c) out.at(r, c) = sample_nearest(lm, r - sy, c - sx);
    return out;
}

}  // namespace oct

#endif
