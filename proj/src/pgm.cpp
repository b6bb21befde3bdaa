#include "oct/pgm.hpp"

#include <fstream>

namespace oct {

void write_pgm(const std::filesystem::path& file, const Image& im) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + file.string());
    os << "P5\n" << im.w << " " << im.h << "\n255\n";
    for (const float v : im.v) {
        const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        os.put(static_cast<char>(static_cast<int>(c * 255.0f + 0.5f)));
    }
}

void write_pgm(const std::filesystem::path& file, const LabelMap& lm, int n_classes) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + file.string());
    os << "P5\n" << lm.w << " " << lm.h << "\n255\n";
    const int span = n_classes > 1 ? 255 / (n_classes - 1) : 255;
    for (const std::uint8_t v : lm.v) os.put(static_cast<char>(std::min(255, v * span)));
}

Image hconcat(const std::vector<Image>& images) {
    if (images.empty()) throw std::invalid_argument("hconcat: no images");
    const int h = images[0].h;
    int w_total = -1;
    for (const Image& im : images) {
        if (im.h != h) throw std::invalid_argument("hconcat: height mismatch");
        w_total += im.w + 1;
    }
    Image out(h, w_total);
    std::fill(out.v.begin(), out.v.end(), 1.0f);
    int off = 0;
    for (const Image& im : images) {
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < im.w; ++c) out.at(r, off + c) = im.at(r, c);
        off += im.w + 1;
    }
    return out;
}

}  // namespace oct
