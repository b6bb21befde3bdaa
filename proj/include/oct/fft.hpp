#ifndef OCT_FFT_HPP
#define OCT_FFT_HPP

#include <complex>
#include <vector>

namespace oct {

/// In-place complex DFT (forward) / inverse DFT including the 1/n factor.
/// Radix-2 for power-of-two lengths, Bluestein otherwise.
void fft(std::vector<std::complex<double>>& a, bool inverse);

/// Row-column 2D transform of a row-major h*w buffer.
void fft_2d(std::vector<std::complex<double>>& a, int h, int w, bool inverse);

}  // namespace oct

#endif
