#ifndef OCT_CONV_KERNELS_HPP
#define OCT_CONV_KERNELS_HPP

#include <cstring>
#include <vector>

// Internal conv lowering: every conv forward/backward is an im2col/col2im
// plus one GEMM. The microkernels below block 4 output rows by 16 columns so
// the accumulators stay in registers under -O3 auto-vectorization.

namespace oct::detail {

// C[M x N] = A[M x K] * B[K x N], row-major; accumulate adds into C.
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool accumulate) {
    constexpr int JB = 16;
    for (int i0 = 0; i0 < M; i0 += 4) {
        const int ib = std::min(4, M - i0);
        for (int j0 = 0; j0 < N; j0 += JB) {
            const int jb = std::min(JB, N - j0);
            if (ib == 4 && jb == JB) {
                T acc0[JB], acc1[JB], acc2[JB], acc3[JB];
                if (accumulate) {
                    std::memcpy(acc0, C + static_cast<long>(i0 + 0) * ldc + j0, sizeof(acc0));
                    std::memcpy(acc1, C + static_cast<long>(i0 + 1) * ldc + j0, sizeof(acc1));
                    std::memcpy(acc2, C + static_cast<long>(i0 + 2) * ldc + j0, sizeof(acc2));
                    std::memcpy(acc3, C + static_cast<long>(i0 + 3) * ldc + j0, sizeof(acc3));
                } else {
                    for (int j = 0; j < JB; ++j) acc0[j] = acc1[j] = acc2[j] = acc3[j] = T(0);
                }
                for (int k = 0; k < K; ++k) {
                    const T* b = B + static_cast<long>(k) * ldb + j0;
                    const T a0 = A[static_cast<long>(i0 + 0) * lda + k];
                    const T a1 = A[static_cast<long>(i0 + 1) * lda + k];
                    const T a2 = A[static_cast<long>(i0 + 2) * lda + k];
                    const T a3 = A[static_cast<long>(i0 + 3) * lda + k];
                    for (int j = 0; j < JB; ++j) {
                        const T bv = b[j];
                        acc0[j] += a0 * bv;
                        acc1[j] += a1 * bv;
                        acc2[j] += a2 * bv;
                        acc3[j] += a3 * bv;
                    }
                }
                std::memcpy(C + static_cast<long>(i0 + 0) * ldc + j0, acc0, sizeof(acc0));
                std::memcpy(C + static_cast<long>(i0 + 1) * ldc + j0, acc1, sizeof(acc1));
                std::memcpy(C + static_cast<long>(i0 + 2) * ldc + j0, acc2, sizeof(acc2));
                std::memcpy(C + static_cast<long>(i0 + 3) * ldc + j0, acc3, sizeof(acc3));
            } else {
                for (int i = i0; i < i0 + ib; ++i)
                    for (int j = j0; j < j0 + jb; ++j) {
                        T acc = accumulate ? C[static_cast<long>(i) * ldc + j] : T(0);
                        for (int k = 0; k < K; ++k)
                            acc += A[static_cast<long>(i) * lda + k] * B[static_cast<long>(k) * ldb + j];
                        C[static_cast<long>(i) * ldc + j] = acc;
                    }
            }
        }
    }
}

// C[M x N] = A^T * B where A is [K x M] row-major (so A^T[i][k] = A[k*lda+i]).
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool accumulate) {
    constexpr int JB = 16;
    for (int i0 = 0; i0 < M; i0 += 4) {
        const int ib = std::min(4, M - i0);
        for (int j0 = 0; j0 < N; j0 += JB) {
            const int jb = std::min(JB, N - j0);
            if (ib == 4 && jb == JB) {
                T acc0[JB], acc1[JB], acc2[JB], acc3[JB];
                if (accumulate) {
                    std::memcpy(acc0, C + static_cast<long>(i0 + 0) * ldc + j0, sizeof(acc0));
                    std::memcpy(acc1, C + static_cast<long>(i0 + 1) * ldc + j0, sizeof(acc1));
                    std::memcpy(acc2, C + static_cast<long>(i0 + 2) * ldc + j0, sizeof(acc2));
                    std::memcpy(acc3, C + static_cast<long>(i0 + 3) * ldc + j0, sizeof(acc3));
                } else {
                    for (int j = 0; j < JB; ++j) acc0[j] = acc1[j] = acc2[j] = acc3[j] = T(0);
                }
                for (int k = 0; k < K; ++k) {
                    const T* b = B + static_cast<long>(k) * ldb + j0;
                    const T* arow = A + static_cast<long>(k) * lda + i0;
                    const T a0 = arow[0], a1 = arow[1], a2 = arow[2], a3 = arow[3];
                    for (int j = 0; j < JB; ++j) {
                        const T bv = b[j];
                        acc0[j] += a0 * bv;
                        acc1[j] += a1 * bv;
                        acc2[j] += a2 * bv;
                        acc3[j] += a3 * bv;
                    }
                }
                std::memcpy(C + static_cast<long>(i0 + 0) * ldc + j0, acc0, sizeof(acc0));
                std::memcpy(C + static_cast<long>(i0 + 1) * ldc + j0, acc1, sizeof(acc1));
                std::memcpy(C + static_cast<long>(i0 + 2) * ldc + j0, acc2, sizeof(acc2));
                std::memcpy(C + static_cast<long>(i0 + 3) * ldc + j0, acc3, sizeof(acc3));
            } else {
                for (int i = i0; i < i0 + ib; ++i)
                    for (int j = j0; j < j0 + jb; ++j) {
                        T acc = accumulate ? C[static_cast<long>(i) * ldc + j] : T(0);
                        for (int k = 0; k < K; ++k)
                            acc += A[static_cast<long>(k) * lda + i] * B[static_cast<long>(k) * ldb + j];
                        C[static_cast<long>(i) * ldc + j] = acc;
                    }
            }
        }
    }
}

// C[M x N] (+)= A[M x K] * B^T where B is [N x K] row-major: rows of A and B
// are contiguous, so each C entry is a dot product. The 16 independent
// accumulation lanes vectorize without needing float reassociation.
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool accumulate) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<long>(i) * lda;
        for (int j = 0; j < N; ++j) {
            const T* b = B + static_cast<long>(j) * ldb;
            T lanes[16] = {};
            int k = 0;
            for (; k + 16 <= K; k += 16)
                for (int u = 0; u < 16; ++u) lanes[u] += a[k + u] * b[k + u];
            T acc = T(0);
            for (int u = 0; u < 16; ++u) acc += lanes[u];
            for (; k < K; ++k) acc += a[k] * b[k];
            C[static_cast<long>(i) * ldc + j] =
                (accumulate ? C[static_cast<long>(i) * ldc + j] : T(0)) + acc;
        }
    }
}

// col[(c*KH + ky)*KW + kx][oy*OW + ox] = x[c][oy*s + ky*d - p][ox*s + kx*d - p], 0 outside.
template <typename T>
void im2col(const T* x, T* col, int C, int H, int W, int KH, int KW, int s, int p, int d,
            int OH, int OW) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < KH; ++ky)
            for (int kx = 0; kx < KW; ++kx) {
                T* dst = col + ((static_cast<long>(c) * KH + ky) * KW + kx) * OH * OW;
                const int offy = ky * d - p, offx = kx * d - p;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * s + offy;
                    T* drow = dst + static_cast<long>(oy) * OW;
                    if (iy < 0 || iy >= H) {
                        std::memset(drow, 0, sizeof(T) * static_cast<std::size_t>(OW));
                        continue;
                    }
                    const T* xrow = x + (static_cast<long>(c) * H + iy) * W;
                    if (s == 1) {
                        int ox0 = offx < 0 ? -offx : 0;
                        int ox1 = std::min(OW, W - offx);
                        if (ox1 < ox0) ox1 = ox0;
                        if (ox0 > 0) std::memset(drow, 0, sizeof(T) * static_cast<std::size_t>(ox0));
                        if (ox1 > ox0)
                            std::memcpy(drow + ox0, xrow + ox0 + offx,
                                        sizeof(T) * static_cast<std::size_t>(ox1 - ox0));
                        if (ox1 < OW)
                            std::memset(drow + ox1, 0, sizeof(T) * static_cast<std::size_t>(OW - ox1));
                    } else {
                        for (int ox = 0; ox < OW; ++ox) {
                            const int ix = ox * s + offx;
                            drow[ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
                        }
                    }
                }
            }
}

// Scatter-add transpose of im2col: x[c][iy][ix] += col rows.
template <typename T>
void col2im(const T* col, T* x, int C, int H, int W, int KH, int KW, int s, int p, int d,
            int OH, int OW) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < KH; ++ky)
            for (int kx = 0; kx < KW; ++kx) {
                const T* src = col + ((static_cast<long>(c) * KH + ky) * KW + kx) * OH * OW;
                const int offy = ky * d - p, offx = kx * d - p;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy * s + offy;
                    if (iy < 0 || iy >= H) continue;
                    const T* srow = src + static_cast<long>(oy) * OW;
                    T* xrow = x + (static_cast<long>(c) * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        const int ix = ox * s + offx;
                        if (ix >= 0 && ix < W) xrow[ix] += srow[ox];
                    }
                }
            }
}

}  // namespace oct::detail

#endif
