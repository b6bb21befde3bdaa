#include "oct/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "oct/rng.hpp"

#include "conv_kernels.hpp"

namespace oct {

namespace {

int conv_out_dim(int in, int k, int stride, int pad, int dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// y[n,oc,oy,ox] = sum_{ic,ky,kx} w[oc,ic,ky,kx] * x[n,ic,oy*s+ky*d-p,ox*s+kx*d-p]
template <typename T>
void conv2d_fwd(const T* x, const T* w, T* y, int N, int C, int H, int W, int OC, int KH,
                int KW, int s, int p, int d, int OH, int OW) {
    const int K = C * KH * KW, NP = OH * OW;
    std::vector<T> col(static_cast<std::size_t>(K) * NP);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x + static_cast<long>(n) * C * H * W, col.data(), C, H, W, KH, KW, s, p,
                       d, OH, OW);
        detail::gemm_nn(OC, NP, K, w, K, col.data(), NP, y + static_cast<long>(n) * OC * NP, NP,
                        false);
    }
}

template <typename T>
void conv2d_bwd_input(const T* gy, const T* w, T* gx, int N, int C, int H, int W, int OC,
                      int KH, int KW, int s, int p, int d, int OH, int OW) {
    const int K = C * KH * KW, NP = OH * OW;
    std::vector<T> col(static_cast<std::size_t>(K) * NP);
    for (int n = 0; n < N; ++n) {
        detail::gemm_tn(K, NP, OC, w, K, gy + static_cast<long>(n) * OC * NP, NP, col.data(),
                        NP, false);
        detail::col2im(col.data(), gx + static_cast<long>(n) * C * H * W, C, H, W, KH, KW, s, p,
                       d, OH, OW);
    }
}

template <typename T>
void conv2d_bwd_weight(const T* gy, const T* x, T* gw, int N, int C, int H, int W, int OC,
                       int KH, int KW, int s, int p, int d, int OH, int OW) {
    const int K = C * KH * KW, NP = OH * OW;
    std::vector<T> col(static_cast<std::size_t>(K) * NP);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x + static_cast<long>(n) * C * H * W, col.data(), C, H, W, KH, KW, s, p,
                       d, OH, OW);
        detail::gemm_nt(OC, K, NP, gy + static_cast<long>(n) * OC * NP, NP, col.data(), NP, gw,
                        K, true);
    }
}

// conv_transpose2d is the input-gradient of a conv going the other way, so the
// same lowering applies with the roles of x and y swapped. Weight layout is
// {IC, OC, KH, KW}; the "hypothetical" conv maps OC-channel OHxOW images to
// C-channel HxW images.
template <typename T>
void convt_fwd(const T* x, const T* w, T* y, int N, int C, int H, int W, int OC, int KH,
               int KW, int s, int p, int OH, int OW) {
    const int K = OC * KH * KW, NP = H * W;
    std::vector<T> col(static_cast<std::size_t>(K) * NP);
    for (int n = 0; n < N; ++n) {
        detail::gemm_tn(K, NP, C, w, K, x + static_cast<long>(n) * C * NP, NP, col.data(), NP,
                        false);
        detail::col2im(col.data(), y + static_cast<long>(n) * OC * OH * OW, OC, OH, OW, KH, KW,
                       s, p, 1, H, W);
    }
}

template <typename T>
void convt_bwd_input(const T* gy, const T* w, T* gx, int N, int C, int H, int W, int OC,
                     int KH, int KW, int s, int p, int OH, int OW) {
    const int K = OC * KH * KW, NP = H * W;
    std::vector<T> col(static_cast<std::size_t>(K) * NP);
    for (int n = 0; n < N; ++n) {
        detail::im2col(gy + static_cast<long>(n) * OC * OH * OW, col.data(), OC, OH, OW, KH, KW,
                       s, p, 1, H, W);
        detail::gemm_nn(C, NP, K, w, K, col.data(), NP, gx + static_cast<long>(n) * C * NP, NP,
                        true);
    }
}

template <typename T>
void convt_bwd_weight(const T* gy, const T* x, T* gw, int N, int C, int H, int W, int OC,
                      int KH, int KW, int s, int p, int OH, int OW) {
    const int K = OC * KH * KW, NP = H * W;
    std::vector<T> col(static_cast<std::size_t>(K) * NP);
    for (int n = 0; n < N; ++n) {
        detail::im2col(gy + static_cast<long>(n) * OC * OH * OW, col.data(), OC, OH, OW, KH, KW,
                       s, p, 1, H, W);
        detail::gemm_nt(C, K, NP, x + static_cast<long>(n) * C * NP, NP, col.data(), NP, gw, K,
                        true);
    }
}

}  // namespace

template <typename T>
typename TapeT<T>::Id TapeT<T>::push(Ten<T> v, bool requires_grad,
                                     std::function<void(TapeT&)> back) {
    v.requires_grad = requires_grad;
    nodes_.push_back(Node{std::move(v), std::move(back)});
    return static_cast<Id>(nodes_.size() - 1);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::leaf(Ten<T> v) {
    const bool rg = v.requires_grad;
    return push(std::move(v), rg, {});
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::constant(Ten<T> v) {
    return push(std::move(v), false, {});
}

template <typename T>
double TapeT<T>::scalar(Id id) const {
    const Ten<T>& v = val(id);
    if (v.numel() != 1) throw std::logic_error("Tape::scalar: non-scalar node");
    return static_cast<double>(v.data[0]);
}

template <typename T>
std::vector<T>& TapeT<T>::grad_buf(Id id) {
    Node& nd = node(id);
    if (nd.v.grad.empty()) nd.v.grad.assign(nd.v.data.size(), T(0));
    return nd.v.grad;
}

template <typename T>
const std::vector<T>& TapeT<T>::grad(Id id) {
    return grad_buf(id);
}

template <typename T>
void TapeT<T>::accum(Id id, const std::vector<T>& g) {
    std::vector<T>& dst = grad_buf(id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <typename T>
void TapeT<T>::check_finite(const Ten<T>& v, const char* op) const {
    if (!finite_checks) return;
    for (const T x : v.data)
        if (!std::isfinite(static_cast<double>(x)))
            throw std::runtime_error(std::string("non-finite value in ") + op);
}

template <typename T>
void TapeT<T>::backward(Id loss) {
    Node& ln = node(loss);
    if (ln.v.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad_buf(loss)[0] = T(1);
    for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
        Node& nd = node(id);
        if (!nd.v.requires_grad || !nd.back) continue;
        if (nd.v.grad.empty()) continue;  // not on any path to the loss
        self_ = id;
        nd.back(*this);
    }
    self_ = -1;
}

// ---------------------------------------------------------------------------
// convolution family

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv2d(Id x, Id w, int stride, int pad, int dilation) {
    const Ten<T>& xv = val(x);
    const Ten<T>& wv = val(w);
    if (xv.rank() != 4 || wv.rank() != 4) throw std::invalid_argument("conv2d: rank-4 required");
    if (stride < 1 || pad < 0 || dilation < 1) throw std::invalid_argument("conv2d: bad stride/pad");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int OC = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
    if (wv.dim(1) != C)
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xv.shape) + " vs " +
                                    shape_str(wv.shape));
    const int OH = conv_out_dim(H, KH, stride, pad, dilation);
    const int OW = conv_out_dim(W, KW, stride, pad, dilation);
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: non-positive output dims");

    Ten<T> y({N, OC, OH, OW});
    conv2d_fwd(xv.ptr(), wv.ptr(), y.ptr(), N, C, H, W, OC, KH, KW, stride, pad, dilation, OH, OW);
    check_finite(y, "conv2d");

    const bool rg = xv.requires_grad || wv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        const Ten<T>& xv2 = t.val(x);
        const Ten<T>& wv2 = t.val(w);
        if (xv2.requires_grad)
            conv2d_bwd_input(gy.data(), wv2.ptr(), t.grad_buf(x).data(), N, C, H, W, OC, KH, KW,
                             stride, pad, dilation, OH, OW);
        if (wv2.requires_grad)
            conv2d_bwd_weight(gy.data(), xv2.ptr(), t.grad_buf(w).data(), N, C, H, W, OC, KH, KW,
                              stride, pad, dilation, OH, OW);
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv_transpose2d(Id x, Id w, int stride, int pad) {
    const Ten<T>& xv = val(x);
    const Ten<T>& wv = val(w);
    if (xv.rank() != 4 || wv.rank() != 4)
        throw std::invalid_argument("conv_transpose2d: rank-4 required");
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv_transpose2d: bad stride/pad");
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int OC = wv.dim(1), KH = wv.dim(2), KW = wv.dim(3);
    if (wv.dim(0) != C)
        throw std::invalid_argument("conv_transpose2d: channel mismatch");
    const int OH = (H - 1) * stride - 2 * pad + KH;
    const int OW = (W - 1) * stride - 2 * pad + KW;
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv_transpose2d: non-positive output");

    Ten<T> y({N, OC, OH, OW});
    convt_fwd(xv.ptr(), wv.ptr(), y.ptr(), N, C, H, W, OC, KH, KW, stride, pad, OH, OW);
    check_finite(y, "conv_transpose2d");

    const bool rg = xv.requires_grad || wv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        const Ten<T>& xv2 = t.val(x);
        const Ten<T>& wv2 = t.val(w);
        if (xv2.requires_grad)
            convt_bwd_input(gy.data(), wv2.ptr(), t.grad_buf(x).data(), N, C, H, W, OC, KH, KW,
                            stride, pad, OH, OW);
        if (wv2.requires_grad)
            convt_bwd_weight(gy.data(), xv2.ptr(), t.grad_buf(w).data(), N, C, H, W, OC, KH, KW,
                             stride, pad, OH, OW);
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::add_channel_bias(Id x, Id b) {
    const Ten<T>& xv = val(x);
    const Ten<T>& bv = val(b);
    if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
        throw std::invalid_argument("add_channel_bias: bias must be {C}");
    const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Ten<T> y = xv;
    y.grad.clear();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* row = y.ptr() + (static_cast<long>(n) * C + c) * HW;
            const T bvc = bv.data[static_cast<std::size_t>(c)];
            for (int i = 0; i < HW; ++i) row[i] += bvc;
        }
    check_finite(y, "add_channel_bias");
    const bool rg = xv.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        if (t.val(x).requires_grad) t.accum(x, gy);
        if (t.val(b).requires_grad) {
            std::vector<T>& gb = t.grad_buf(b);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    const T* row = gy.data() + (static_cast<long>(n) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) acc += row[i];
                    gb[static_cast<std::size_t>(c)] += static_cast<T>(acc);
                }
        }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::instance_norm(Id x, T eps) {
    const Ten<T>& xv = val(x);
    if (xv.rank() != 4) throw std::invalid_argument("instance_norm: rank-4 required");
    const int N = xv.dim(0), C = xv.dim(1), M = xv.dim(2) * xv.dim(3);
    Ten<T> y(xv.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(N) * C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = xv.ptr() + (static_cast<long>(n) * C + c) * M;
            T* dst = y.ptr() + (static_cast<long>(n) * C + c) * M;
            double mean = 0.0;
            for (int i = 0; i < M; ++i) mean += src[i];
            mean /= M;
            double var = 0.0;
            for (int i = 0; i < M; ++i) {
                const double dvi = src[i] - mean;
                var += dvi * dvi;
            }
            var /= M;  // population variance
            const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
            inv_std[static_cast<std::size_t>(n) * C + c] = static_cast<T>(is);
            for (int i = 0; i < M; ++i) dst[i] = static_cast<T>((src[i] - mean) * is);
        }
    check_finite(y, "instance_norm");
    const bool rg = xv.requires_grad;
    auto back = [=, inv = std::move(inv_std)](TapeT& t) {
        const Id self = t.self_;
        const std::vector<T>& gy = t.node(self).v.grad;
        const Ten<T>& yv = t.val(self);
        std::vector<T>& gx = t.grad_buf(x);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const long off = (static_cast<long>(n) * C + c) * M;
                const T* g = gy.data() + off;
                const T* yh = yv.ptr() + off;
                double gm = 0.0, gym = 0.0;
                for (int i = 0; i < M; ++i) {
                    gm += g[i];
                    gym += static_cast<double>(g[i]) * yh[i];
                }
                gm /= M;
                gym /= M;
                const double is = inv[static_cast<std::size_t>(n) * C + c];
                T* dst = gx.data() + off;
                for (int i = 0; i < M; ++i)
                    dst[i] += static_cast<T>(is * (g[i] - gm - yh[i] * gym));
            }
    };
    return push(std::move(y), rg, back);
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
typename TapeT<T>::Id TapeT<T>::relu(Id x) {
    return leaky_relu(x, T(0));
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::leaky_relu(Id x, T slope) {
    if (slope < T(0) || slope >= T(1)) throw std::invalid_argument("leaky_relu: slope in [0,1)");
    const Ten<T>& xv = val(x);
    Ten<T> y(xv.shape);
    for (int i = 0; i < xv.numel(); ++i) {
        const T v = xv.data[static_cast<std::size_t>(i)];
        y.data[static_cast<std::size_t>(i)] = v > T(0) ? v : slope * v;
    }
    check_finite(y, "leaky_relu");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        const Ten<T>& xv2 = t.val(x);
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += xv2.data[i] > T(0) ? gy[i] : slope * gy[i];
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::tanh_act(Id x) {
    const Ten<T>& xv = val(x);
    Ten<T> y(xv.shape);
    for (int i = 0; i < xv.numel(); ++i)
        y.data[static_cast<std::size_t>(i)] =
            static_cast<T>(std::tanh(static_cast<double>(xv.data[static_cast<std::size_t>(i)])));
    check_finite(y, "tanh");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const Id self = t.self_;
        const std::vector<T>& gy = t.node(self).v.grad;
        const Ten<T>& yv = t.val(self);
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += gy[i] * (T(1) - yv.data[i] * yv.data[i]);
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::softmax(Id x, int axis) {
    const Ten<T>& xv = val(x);
    const int r = xv.rank();
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: invalid axis");
    int outer = 1, lane = xv.dim(axis), inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xv.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= xv.dim(i);

    Ten<T> y(xv.shape);
    for (int o = 0; o < outer; ++o)
        for (int i = 0; i < inner; ++i) {
            const long base = static_cast<long>(o) * lane * inner + i;
            double mx = -1e300;
            for (int l = 0; l < lane; ++l)
                mx = std::max(mx, static_cast<double>(xv.data[base + static_cast<long>(l) * inner]));
            double sum = 0.0;
            for (int l = 0; l < lane; ++l) {
                const double e = std::exp(static_cast<double>(xv.data[base + static_cast<long>(l) * inner]) - mx);
                y.data[base + static_cast<long>(l) * inner] = static_cast<T>(e);
                sum += e;
            }
            const double isum = 1.0 / sum;
            for (int l = 0; l < lane; ++l)
                y.data[base + static_cast<long>(l) * inner] =
                    static_cast<T>(y.data[base + static_cast<long>(l) * inner] * isum);
        }
    check_finite(y, "softmax");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const Id self = t.self_;
        const std::vector<T>& gy = t.node(self).v.grad;
        const Ten<T>& yv = t.val(self);
        std::vector<T>& gx = t.grad_buf(x);
        for (int o = 0; o < outer; ++o)
            for (int i = 0; i < inner; ++i) {
                const long base = static_cast<long>(o) * lane * inner + i;
                double dot = 0.0;
                for (int l = 0; l < lane; ++l) {
                    const long k = base + static_cast<long>(l) * inner;
                    dot += static_cast<double>(gy[k]) * yv.data[k];
                }
                for (int l = 0; l < lane; ++l) {
                    const long k = base + static_cast<long>(l) * inner;
                    gx[k] += static_cast<T>(yv.data[k] * (gy[k] - dot));
                }
            }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::dropout(Id x, double p, std::uint64_t seed, bool training) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    const Ten<T>& xv = val(x);
    if (!training || p == 0.0) {
        Ten<T> y = xv;
        y.grad.clear();
        const bool rg = xv.requires_grad;
        auto back = [=](TapeT& t) {
            if (t.val(x).requires_grad) t.accum(x, t.node(t.self_).v.grad);
        };
        return push(std::move(y), rg, back);
    }
    Rng rng(seed);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(xv.data.size());
    Ten<T> y(xv.shape);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < p ? T(0) : keep_scale;
        y.data[i] = xv.data[i] * mask[i];
    }
    const bool rg = xv.requires_grad;
    auto back = [=, m = std::move(mask)](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * m[i];
    };
    return push(std::move(y), rg, back);
}

// ---------------------------------------------------------------------------
// elementwise / structural

template <typename T>
typename TapeT<T>::Id TapeT<T>::add(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (!same_shape(av.shape, bv.shape)) throw std::invalid_argument("add: shape mismatch");
    Ten<T> y(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] + bv.data[i];
    check_finite(y, "add");
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        if (t.val(a).requires_grad) t.accum(a, gy);
        if (t.val(b).requires_grad) t.accum(b, gy);
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sub(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (!same_shape(av.shape, bv.shape)) throw std::invalid_argument("sub: shape mismatch");
    Ten<T> y(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] - bv.data[i];
    check_finite(y, "sub");
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        if (t.val(a).requires_grad) t.accum(a, gy);
        if (t.val(b).requires_grad) {
            std::vector<T>& gb = t.grad_buf(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
        }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mul(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (!same_shape(av.shape, bv.shape)) throw std::invalid_argument("mul: shape mismatch");
    Ten<T> y(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] * bv.data[i];
    check_finite(y, "mul");
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        if (t.val(a).requires_grad) {
            std::vector<T>& ga = t.grad_buf(a);
            const Ten<T>& bv2 = t.val(b);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv2.data[i];
        }
        if (t.val(b).requires_grad) {
            std::vector<T>& gb = t.grad_buf(b);
            const Ten<T>& av2 = t.val(a);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av2.data[i];
        }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::div(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (!same_shape(av.shape, bv.shape)) throw std::invalid_argument("div: shape mismatch");
    Ten<T> y(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] / bv.data[i];
    check_finite(y, "div");
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        const Ten<T>& av2 = t.val(a);
        const Ten<T>& bv2 = t.val(b);
        if (av2.requires_grad) {
            std::vector<T>& ga = t.grad_buf(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] / bv2.data[i];
        }
        if (bv2.requires_grad) {
            std::vector<T>& gb = t.grad_buf(b);
            for (std::size_t i = 0; i < gb.size(); ++i)
                gb[i] -= gy[i] * av2.data[i] / (bv2.data[i] * bv2.data[i]);
        }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::scale(Id x, T c) {
    const Ten<T>& xv = val(x);
    Ten<T> y(xv.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = xv.data[i] * c;
    check_finite(y, "scale");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * c;
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::add_const(Id x, T c) {
    const Ten<T>& xv = val(x);
    Ten<T> y(xv.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = xv.data[i] + c;
    check_finite(y, "add_const");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        if (t.val(x).requires_grad) t.accum(x, t.node(t.self_).v.grad);
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mul_const(Id x, const Ten<T>& k) {
    const Ten<T>& xv = val(x);
    if (!same_shape(xv.shape, k.shape)) throw std::invalid_argument("mul_const: shape mismatch");
    Ten<T> y(xv.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = xv.data[i] * k.data[i];
    check_finite(y, "mul_const");
    const bool rg = xv.requires_grad;
    auto back = [=, kd = k.data](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * kd[i];
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::concat_ch(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (av.rank() != 4 || bv.rank() != 4) throw std::invalid_argument("concat_ch: rank-4 required");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw std::invalid_argument("concat_ch: N/H/W mismatch");
    const int N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), HW = av.dim(2) * av.dim(3);
    Ten<T> y({N, Ca + Cb, av.dim(2), av.dim(3)});
    for (int n = 0; n < N; ++n) {
        std::memcpy(y.ptr() + static_cast<long>(n) * (Ca + Cb) * HW,
                    av.ptr() + static_cast<long>(n) * Ca * HW, sizeof(T) * Ca * HW);
        std::memcpy(y.ptr() + (static_cast<long>(n) * (Ca + Cb) + Ca) * HW,
                    bv.ptr() + static_cast<long>(n) * Cb * HW, sizeof(T) * Cb * HW);
    }
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        if (t.val(a).requires_grad) {
            std::vector<T>& ga = t.grad_buf(a);
            for (int n = 0; n < N; ++n)
                for (long i = 0; i < static_cast<long>(Ca) * HW; ++i)
                    ga[static_cast<long>(n) * Ca * HW + i] +=
                        gy[static_cast<long>(n) * (Ca + Cb) * HW + i];
        }
        if (t.val(b).requires_grad) {
            std::vector<T>& gb = t.grad_buf(b);
            for (int n = 0; n < N; ++n)
                for (long i = 0; i < static_cast<long>(Cb) * HW; ++i)
                    gb[static_cast<long>(n) * Cb * HW + i] +=
                        gy[(static_cast<long>(n) * (Ca + Cb) + Ca) * HW + i];
        }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::slice_batch(Id x, int n_index) {
    const Ten<T>& xv = val(x);
    if (xv.rank() != 4) throw std::invalid_argument("slice_batch: rank-4 required");
    const int N = xv.dim(0), CHW = xv.dim(1) * xv.dim(2) * xv.dim(3);
    if (n_index < 0 || n_index >= N) throw std::invalid_argument("slice_batch: index out of range");
    Ten<T> y({1, xv.dim(1), xv.dim(2), xv.dim(3)});
    std::memcpy(y.ptr(), xv.ptr() + static_cast<long>(n_index) * CHW, sizeof(T) * CHW);
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        std::vector<T>& gx = t.grad_buf(x);
        for (long i = 0; i < CHW; ++i) gx[static_cast<long>(n_index) * CHW + i] += gy[i];
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::log_clamped(Id x, T floor) {
    if (floor <= T(0)) throw std::invalid_argument("log_clamped: floor must be positive");
    const Ten<T>& xv = val(x);
    Ten<T> y(xv.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        y.data[i] = static_cast<T>(std::log(std::max(static_cast<double>(xv.data[i]),
                                                     static_cast<double>(floor))));
    check_finite(y, "log_clamped");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        const Ten<T>& xv2 = t.val(x);
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xv2.data[i] > floor) gx[i] += gy[i] / xv2.data[i];
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::atanh_clamped(Id x, T limit) {
    if (limit <= T(0) || limit >= T(1)) throw std::invalid_argument("atanh_clamped: limit in (0,1)");
    const Ten<T>& xv = val(x);
    Ten<T> y(xv.shape);
    std::vector<T> xc(xv.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        xc[i] = std::clamp(xv.data[i], -limit, limit);
        y.data[i] = static_cast<T>(std::atanh(static_cast<double>(xc[i])));
    }
    check_finite(y, "atanh_clamped");
    const bool rg = xv.requires_grad;
    auto back = [=, c = std::move(xc)](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        const Ten<T>& xv2 = t.val(x);
        std::vector<T>& gx = t.grad_buf(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xv2.data[i] > -limit && xv2.data[i] < limit)
                gx[i] += gy[i] / (T(1) - c[i] * c[i]);
    };
    return push(std::move(y), rg, back);
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
typename TapeT<T>::Id TapeT<T>::sum_all(Id x) {
    const Ten<T>& xv = val(x);
    double acc = 0.0;
    for (const T v : xv.data) acc += v;
    Ten<T> y = Ten<T>::scalar(static_cast<T>(acc));
    check_finite(y, "sum_all");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const T g = t.node(t.self_).v.grad[0];
        std::vector<T>& gx = t.grad_buf(x);
        for (T& v : gx) v += g;
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mean_all(Id x) {
    const Ten<T>& xv = val(x);
    const int n = xv.numel();
    double acc = 0.0;
    for (const T v : xv.data) acc += v;
    Ten<T> y = Ten<T>::scalar(static_cast<T>(acc / n));
    check_finite(y, "mean_all");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const T g = static_cast<T>(static_cast<double>(t.node(t.self_).v.grad[0]) / n);
        std::vector<T>& gx = t.grad_buf(x);
        for (T& v : gx) v += g;
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::max_all(Id x) {
    const Ten<T>& xv = val(x);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < xv.data.size(); ++i)
        if (xv.data[i] > xv.data[arg]) arg = i;
    Ten<T> y = Ten<T>::scalar(xv.data[arg]);
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        t.grad_buf(x)[arg] += t.node(t.self_).v.grad[0];
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sum_per_channel(Id x) {
    const Ten<T>& xv = val(x);
    if (xv.rank() != 4) throw std::invalid_argument("sum_per_channel: rank-4 required");
    const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Ten<T> y({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
            const T* row = xv.ptr() + (static_cast<long>(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) acc += row[i];
        }
        y.data[static_cast<std::size_t>(c)] = static_cast<T>(acc);
    }
    check_finite(y, "sum_per_channel");
    const bool rg = xv.requires_grad;
    auto back = [=](TapeT& t) {
        const std::vector<T>& gy = t.node(t.self_).v.grad;
        std::vector<T>& gx = t.grad_buf(x);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* row = gx.data() + (static_cast<long>(n) * C + c) * HW;
                const T g = gy[static_cast<std::size_t>(c)];
                for (int i = 0; i < HW; ++i) row[i] += g;
            }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::mse(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (!same_shape(av.shape, bv.shape)) throw std::invalid_argument("mse: shape mismatch");
    const int n = av.numel();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dv = static_cast<double>(av.data[static_cast<std::size_t>(i)]) -
                          bv.data[static_cast<std::size_t>(i)];
        acc += dv * dv;
    }
    Ten<T> y = Ten<T>::scalar(static_cast<T>(acc / n));
    check_finite(y, "mse");
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const double g = 2.0 * static_cast<double>(t.node(t.self_).v.grad[0]) / n;
        const Ten<T>& av2 = t.val(a);
        const Ten<T>& bv2 = t.val(b);
        if (av2.requires_grad) {
            std::vector<T>& ga = t.grad_buf(a);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += static_cast<T>(g * (av2.data[i] - bv2.data[i]));
        }
        if (bv2.requires_grad) {
            std::vector<T>& gb = t.grad_buf(b);
            for (std::size_t i = 0; i < gb.size(); ++i)
                gb[i] -= static_cast<T>(g * (av2.data[i] - bv2.data[i]));
        }
    };
    return push(std::move(y), rg, back);
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::l1(Id a, Id b) {
    const Ten<T>& av = val(a);
    const Ten<T>& bv = val(b);
    if (!same_shape(av.shape, bv.shape)) throw std::invalid_argument("l1: shape mismatch");
    const int n = av.numel();
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        acc += std::abs(static_cast<double>(av.data[static_cast<std::size_t>(i)]) -
                        bv.data[static_cast<std::size_t>(i)]);
    Ten<T> y = Ten<T>::scalar(static_cast<T>(acc / n));
    check_finite(y, "l1");
    const bool rg = av.requires_grad || bv.requires_grad;
    auto back = [=](TapeT& t) {
        const double g = static_cast<double>(t.node(t.self_).v.grad[0]) / n;
        const Ten<T>& av2 = t.val(a);
        const Ten<T>& bv2 = t.val(b);
        for (std::size_t i = 0; i < av2.data.size(); ++i) {
            const double dv = static_cast<double>(av2.data[i]) - bv2.data[i];
            const T s = static_cast<T>(dv > 0 ? g : (dv < 0 ? -g : 0.0));
            if (av2.requires_grad) t.grad_buf(a)[i] += s;
            if (bv2.requires_grad) t.grad_buf(b)[i] -= s;
        }
    };
    return push(std::move(y), rg, back);
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace oct
