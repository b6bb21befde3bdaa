#include "oct/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "oct/rng.hpp"

namespace oct::metrics {

double dice_score(const std::vector<std::uint8_t>& x, const std::vector<std::uint8_t>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("dice_score: dimension mismatch");
    long nx = 0, ny = 0, inter = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool a = x[i] != 0, b = y[i] != 0;
        nx += a;
        ny += b;
        inter += a && b;
    }
    if (nx + ny == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(nx + ny);
}

double ssim(const Image& x, const Image& y, double dynamic_range) {
    if (x.h != y.h || x.w != y.w) throw std::invalid_argument("ssim: dimension mismatch");
    const double c1 = 0.01 * dynamic_range * 0.01 * dynamic_range;
    const double c2 = 0.03 * dynamic_range * 0.03 * dynamic_range;
    const int n = x.numel();
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        mx += x.v[static_cast<std::size_t>(i)];
        my += y.v[static_cast<std::size_t>(i)];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (int i = 0; i < n; ++i) {
        const double dx = x.v[static_cast<std::size_t>(i)] - mx;
        const double dy = y.v[static_cast<std::size_t>(i)] - my;
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double psnr(const Image& x, const Image& y) {
    if (x.h != y.h || x.w != y.w) throw std::invalid_argument("psnr: dimension mismatch");
    double mx = 0, mse = 0;
    for (int i = 0; i < x.numel(); ++i) {
        mx = std::max(mx, static_cast<double>(x.v[static_cast<std::size_t>(i)]));
        const double d = static_cast<double>(x.v[static_cast<std::size_t>(i)]) -
                         y.v[static_cast<std::size_t>(i)];
        mse += d * d;
    }
    mse /= x.numel();
    const double peak = std::max(mx * mx, 1e-12);
    return 10.0 * std::log10(peak / std::max(mse, 1e-12));
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
    Rng rng(seed);
    int in_ch = 1;
    for (int stage = 0; stage < 4; ++stage) {
        const int out_ch = kTapWidths[static_cast<std::size_t>(stage)];
        Tensor w({out_ch, in_ch, 3, 3});
        const double he = std::sqrt(2.0 / (in_ch * 9));
        for (auto& v : w.data) v = static_cast<float>(rng.normal(0.0, he));
        params_.push_back({"feat.conv" + std::to_string(stage) + ".weight", std::move(w)});
        in_ch = out_ch;
    }
}

std::array<Tape::Id, 4> FeatureExtractor::taps_on_tape(Tape& tape, Tape::Id x) const {
    std::array<Tape::Id, 4> taps{};
    Tape::Id h = x;
    for (int stage = 0; stage < 4; ++stage) {
        const Tape::Id w = tape.constant(params_[static_cast<std::size_t>(stage)].value);
        h = tape.leaky_relu(tape.conv2d(h, w, 2, 1), 0.2f);
        taps[static_cast<std::size_t>(stage)] = h;
    }
    return taps;
}

Mat extract_features(const std::vector<Image>& images, const FeatureExtractor& f, int tap) {
    if (tap < 0 || tap > 3) throw std::invalid_argument("extract_features: invalid tap");
    if (images.empty()) throw std::invalid_argument("extract_features: no images");
    const int d = FeatureExtractor::kTapWidths[static_cast<std::size_t>(tap)];
    Mat out(static_cast<int>(images.size()), d);
    for (std::size_t i = 0; i < images.size(); ++i) {
        Tape tape;
        Tensor t = image_to_tensor(images[i]);
        for (auto& v : t.data) v = 2.0f * v - 1.0f;
        const auto taps = f.taps_on_tape(tape, tape.constant(std::move(t)));
        const Tensor& act = tape.val(taps[static_cast<std::size_t>(tap)]);
        const int hw = act.dim(2) * act.dim(3);
        for (int c = 0; c < d; ++c) {
            double acc = 0;
            const float* row = act.ptr() + static_cast<long>(c) * hw;
            for (int k = 0; k < hw; ++k) acc += row[k];
            out.at(static_cast<int>(i), c) = acc / hw;
        }
    }
    return out;
}

GaussianStats gaussian_stats(const Mat& features) {
    const int n = features.rows, d = features.cols;
    if (n < 2) throw std::invalid_argument("gaussian_stats: need at least 2 samples");
    GaussianStats s;
    s.count = n;
    s.mean.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) s.mean[static_cast<std::size_t>(j)] += features.at(i, j);
    for (double& m : s.mean) m /= n;
    s.cov = Mat(d, d);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            const double da = features.at(i, a) - s.mean[static_cast<std::size_t>(a)];
            for (int b = a; b < d; ++b)
                s.cov.at(a, b) += da * (features.at(i, b) - s.mean[static_cast<std::size_t>(b)]);
        }
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            const double v = s.cov.at(a, b) / (n - 1);
            s.cov.at(a, b) = v;
            s.cov.at(b, a) = v;
        }
    return s;
}

namespace {

// Cyclic Jacobi eigendecomposition for symmetric matrices.
void jacobi_eig(Mat a, std::vector<double>& eigvals, Mat& eigvecs) {
    const int d = a.rows;
    eigvecs = Mat(d, d);
    for (int i = 0; i < d; ++i) eigvecs.at(i, i) = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < 1e-26 * d * d) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < d; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    const double vkp = eigvecs.at(k, p), vkq = eigvecs.at(k, q);
                    eigvecs.at(k, p) = c * vkp - s * vkq;
                    eigvecs.at(k, q) = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) eigvals[static_cast<std::size_t>(i)] = a.at(i, i);
}

Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            const double av = a.at(i, k);
            for (int j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(k, j);
        }
    return c;
}

}  // namespace

Mat matrix_sqrt_psd(const Mat& a) {
    const int d = a.rows;
    if (a.cols != d) throw std::invalid_argument("matrix_sqrt_psd: square matrix required");
    double scale = 0;
    for (const double v : a.a) scale = std::max(scale, std::abs(v));
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-8 * std::max(scale, 1.0))
                throw std::invalid_argument("matrix_sqrt_psd: asymmetric input");

    std::vector<double> vals;
    Mat vecs;
    jacobi_eig(a, vals, vecs);
    Mat r(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int k = 0; k < d; ++k)
                acc += vecs.at(i, k) * std::sqrt(std::max(vals[static_cast<std::size_t>(k)], 0.0)) *
                       vecs.at(j, k);
            r.at(i, j) = acc;
        }
    // exact symmetry despite floating-point accumulation order
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (r.at(i, j) + r.at(j, i));
            r.at(i, j) = v;
            r.at(j, i) = v;
        }
    return r;
}

double frechet_distance(const GaussianStats& sx, const GaussianStats& sy) {
    const int d = static_cast<int>(sx.mean.size());
    if (static_cast<int>(sy.mean.size()) != d) throw std::invalid_argument("frechet: dim mismatch");
    double dist = 0;
    for (int i = 0; i < d; ++i) {
        const double dm = sx.mean[static_cast<std::size_t>(i)] - sy.mean[static_cast<std::size_t>(i)];
        dist += dm * dm;
    }
    const Mat sqx = matrix_sqrt_psd(sx.cov);
    Mat inner = matmul(matmul(sqx, sy.cov), sqx);
    // symmetrize before the second root; the product is symmetric up to rounding
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double v = 0.5 * (inner.at(i, j) + inner.at(j, i));
            inner.at(i, j) = v;
            inner.at(j, i) = v;
        }
    const Mat cross = matrix_sqrt_psd(inner);
    for (int i = 0; i < d; ++i) dist += sx.cov.at(i, i) + sy.cov.at(i, i) - 2.0 * cross.at(i, i);
    return dist;
}

KernelParams default_kernel(int dim) {
    KernelParams p;
    p.gamma = 1.0 / dim;
    return p;
}

double poly_kernel(const std::vector<double>& x, const std::vector<double>& y,
                   const KernelParams& p) {
    if (x.size() != y.size()) throw std::invalid_argument("poly_kernel: length mismatch");
    if (p.degree < 1) throw std::invalid_argument("poly_kernel: degree >= 1");
    double dot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    return std::pow(p.gamma * dot + p.c, p.degree);
}

namespace {

double kernel_rows(const Mat& a, int i, const Mat& b, int j, const KernelParams& p) {
    double dot = 0;
    for (int k = 0; k < a.cols; ++k) dot += a.at(i, k) * b.at(j, k);
    return std::pow(p.gamma * dot + p.c, p.degree);
}

}  // namespace

double mmd_unbiased_sq(const Mat& x, const Mat& y, const KernelParams& p) {
    const int m = x.rows, n = y.rows;
    if (m < 2 || n < 2) throw std::invalid_argument("mmd: need >= 2 samples per side");
    if (x.cols != y.cols) throw std::invalid_argument("mmd: dim mismatch");
    double kxx = 0, kyy = 0, kxy = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) kxx += kernel_rows(x, i, x, j, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) kyy += kernel_rows(y, i, y, j, p);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) kxy += kernel_rows(x, i, y, j, p);
    return kxx / (static_cast<double>(m) * (m - 1)) + kyy / (static_cast<double>(n) * (n - 1)) -
           2.0 * kxy / (static_cast<double>(m) * n);
}

std::pair<double, double> kid(const Mat& x, const Mat& y, const KernelParams& p, int n_subsets,
                              int subset_size, std::uint64_t seed) {
    if (subset_size < 2) throw std::invalid_argument("kid: subset_size >= 2");
    if (subset_size > x.rows || subset_size > y.rows)
        throw std::invalid_argument("kid: subset_size exceeds sample count");
    if (n_subsets < 1) throw std::invalid_argument("kid: n_subsets >= 1");

    Rng rng(seed);
    auto sample_rows = [&](const Mat& src) {
        std::vector<int> idx(static_cast<std::size_t>(src.rows));
        for (int i = 0; i < src.rows; ++i) idx[static_cast<std::size_t>(i)] = i;
        rng.shuffle(idx);
        Mat out(subset_size, src.cols);
        for (int i = 0; i < subset_size; ++i)
            for (int j = 0; j < src.cols; ++j) out.at(i, j) = src.at(idx[static_cast<std::size_t>(i)], j);
        return out;
    };

    std::vector<double> vals(static_cast<std::size_t>(n_subsets));
    for (int s = 0; s < n_subsets; ++s)
        vals[static_cast<std::size_t>(s)] = mmd_unbiased_sq(sample_rows(x), sample_rows(y), p);
    double mean = 0;
    for (const double v : vals) mean += v;
    mean /= n_subsets;
    double var = 0;
    for (const double v : vals) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / n_subsets)};
}

}  // namespace oct::metrics
