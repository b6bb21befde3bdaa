#ifndef OCT_PGM_HPP
#define OCT_PGM_HPP

#include <filesystem>

#include "oct/image.hpp"

namespace oct {

/// 8-bit binary PGM (P5); [0,1] values scaled to 0..255.
void write_pgm(const std::filesystem::path& file, const Image& im);

/// Class indices spread over 0..255 for visual inspection.
void write_pgm(const std::filesystem::path& file, const LabelMap& lm, int n_classes);

/// Side-by-side panel of equally sized images separated by one white column.
Image hconcat(const std::vector<Image>& images);

}  // namespace oct

#endif
