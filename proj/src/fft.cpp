#include "oct/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace oct {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, bit-reversal permutation first.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= static_cast<double>(n);
}

// Bluestein chirp-z: arbitrary-length DFT via a power-of-two convolution.
void fft_bluestein(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;

    std::vector<std::complex<double>> w(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = kPi * static_cast<double>(k2) / static_cast<double>(n) *
                           (inverse ? -1.0 : 1.0);
        w[k] = std::complex<double>(std::cos(ang), std::sin(ang));
    }

    std::vector<std::complex<double>> x(m), y(m);
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * std::conj(w[k]);
    y[0] = w[0];
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = w[k];

    fft_pow2(x, false);
    fft_pow2(y, false);
    for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
    fft_pow2(x, true);

    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * std::conj(w[k]);
    if (inverse)
        for (auto& v : a) v /= static_cast<double>(n);
}

}  // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
    if (a.empty()) throw std::invalid_argument("fft: empty input");
    if (a.size() == 1) return;
    if (is_pow2(a.size()))
        fft_pow2(a, inverse);
    else
        fft_bluestein(a, inverse);
}

void fft_2d(std::vector<std::complex<double>>& a, int h, int w, bool inverse) {
    if (h <= 0 || w <= 0 || a.size() != static_cast<std::size_t>(h) * w)
        throw std::invalid_argument("fft_2d: bad dims");
    std::vector<std::complex<double>> row(static_cast<std::size_t>(w));
    for (int r = 0; r < h; ++r) {
        std::copy(a.begin() + static_cast<long>(r) * w, a.begin() + static_cast<long>(r + 1) * w,
                  row.begin());
        fft(row, inverse);
        std::copy(row.begin(), row.end(), a.begin() + static_cast<long>(r) * w);
    }
    std::vector<std::complex<double>> col(static_cast<std::size_t>(h));
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) col[static_cast<std::size_t>(r)] = a[static_cast<long>(r) * w + c];
        fft(col, inverse);
        for (int r = 0; r < h; ++r) a[static_cast<long>(r) * w + c] = col[static_cast<std::size_t>(r)];
    }
}

}  // namespace oct
