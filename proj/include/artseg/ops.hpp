#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "artseg/tensor.hpp"

namespace artseg {

// Batch-norm behaviour switch; everything else is mode-independent.
enum class Mode { train, eval };

namespace detail {

// C (M x N) += A (M x K) * B (K x N), all row-major. The inner loop runs
// along contiguous rows of B and C so it vectorizes without reassociating
// any reduction; the accumulation order is fixed and deterministic.
template <typename T>
inline void gemm_acc(int M, int K, int N, const T* A, const T* B, T* C) {
    for (int m = 0; m < M; ++m) {
        const T* arow = A + static_cast<std::size_t>(m) * K;
        T* crow = C + static_cast<std::size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const T a = arow[k];
            const T* brow = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

template <typename T>
inline void transpose(int rows, int cols, const T* src, T* dst) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

// Patch matrix layout: row (ci*K+kh)*K+kw, column ho*Wo+wo.
template <typename T>
inline void im2col(const T* x, int Cin, int H, int W, int K, int stride, int pad,
                   int Ho, int Wo, T* cols) {
    const int N = Ho * Wo;
    for (int ci = 0; ci < Cin; ++ci) {
        for (int kh = 0; kh < K; ++kh) {
            for (int kw = 0; kw < K; ++kw) {
                T* crow = cols + static_cast<std::size_t>((ci * K + kh) * K + kw) * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    const int ih = ho * stride + kh - pad;
                    T* cout = crow + static_cast<std::size_t>(ho) * Wo;
                    if (ih < 0 || ih >= H) {
                        std::fill(cout, cout + Wo, T(0));
                        continue;
                    }
                    const T* xrow = x + (static_cast<std::size_t>(ci) * H + ih) * W;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int iw = wo * stride + kw - pad;
                        cout[wo] = (iw >= 0 && iw < W) ? xrow[iw] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
inline void col2im_acc(const T* cols, int Cin, int H, int W, int K, int stride, int pad,
                       int Ho, int Wo, T* dx) {
    const int N = Ho * Wo;
    for (int ci = 0; ci < Cin; ++ci) {
        for (int kh = 0; kh < K; ++kh) {
            for (int kw = 0; kw < K; ++kw) {
                const T* crow = cols + static_cast<std::size_t>((ci * K + kh) * K + kw) * N;
                for (int ho = 0; ho < Ho; ++ho) {
                    const int ih = ho * stride + kh - pad;
                    if (ih < 0 || ih >= H) continue;
                    T* xrow = dx + (static_cast<std::size_t>(ci) * H + ih) * W;
                    const T* cin = crow + static_cast<std::size_t>(ho) * Wo;
                    for (int wo = 0; wo < Wo; ++wo) {
                        const int iw = wo * stride + kw - pad;
                        if (iw >= 0 && iw < W) xrow[iw] += cin[wo];
                    }
                }
            }
        }
    }
}

inline void require_rank4(const Shape& s, const char* what) {
    if (s.size() != 4)
        throw DimensionError(std::string(what) + " must be rank-4 (BxCxHxW), got " + shape_str(s));
}

// True when b is B x 1 x H x W against a's B x C x H x W.
inline bool is_channel_broadcast(const Shape& a, const Shape& b) {
    return a.size() == 4 && b.size() == 4 && b[1] == 1 && a[1] != 1 &&
           a[0] == b[0] && a[2] == b[2] && a[3] == b[3];
}

template <typename T>
inline Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = Tape<T>::current();
    if (!tape) return nullptr;
    for (const Tensor<T>* t : inputs)
        if (t->defined() && t->impl()->tape_id == tape->id()) return tape;
    return nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool bcast = detail::is_channel_broadcast(a.shape(), b.shape());
    if (!bcast && a.shape() != b.shape())
        throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));

    Tensor<T> out(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    if (!bcast) {
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    } else {
        const int B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t ao = (static_cast<std::size_t>(n) * C + c) * HW;
                const std::size_t bo = static_cast<std::size_t>(n) * HW;
                for (int i = 0; i < HW; ++i) ov[ao + i] = av[ao + i] + bv[bo + i];
            }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&a, &b})) {
        const bool ra = tape->owns(a), rb = tape->owns(b);
        auto sa = a.impl();
        auto sb = b.impl();
        auto so = out.impl();
        tape->record("add", out, [sa, sb, so, ra, rb, bcast]() {
            if (so->grad.empty()) return;
            const auto& g = so->grad;
            if (ra) {
                detail::ensure_grad(sa);
                for (std::size_t i = 0; i < g.size(); ++i) sa->grad[i] += g[i];
            }
            if (rb) {
                detail::ensure_grad(sb);
                if (!bcast) {
                    for (std::size_t i = 0; i < g.size(); ++i) sb->grad[i] += g[i];
                } else {
                    const int B = sa->shape[0], C = sa->shape[1], HW = sa->shape[2] * sa->shape[3];
                    for (int n = 0; n < B; ++n)
                        for (int c = 0; c < C; ++c) {
                            const std::size_t ao = (static_cast<std::size_t>(n) * C + c) * HW;
                            const std::size_t bo = static_cast<std::size_t>(n) * HW;
                            for (int i = 0; i < HW; ++i) sb->grad[bo + i] += g[ao + i];
                        }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool bcast = detail::is_channel_broadcast(a.shape(), b.shape());
    if (!bcast && a.shape() != b.shape())
        throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));

    Tensor<T> out(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    if (!bcast) {
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    } else {
        const int B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t ao = (static_cast<std::size_t>(n) * C + c) * HW;
                const std::size_t bo = static_cast<std::size_t>(n) * HW;
                for (int i = 0; i < HW; ++i) ov[ao + i] = av[ao + i] * bv[bo + i];
            }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&a, &b})) {
        const bool ra = tape->owns(a), rb = tape->owns(b);
        auto sa = a.impl();
        auto sb = b.impl();
        auto so = out.impl();
        tape->record("mul", out, [sa, sb, so, ra, rb, bcast]() {
            if (so->grad.empty()) return;
            const auto& g = so->grad;
            if (!bcast) {
                if (ra) {
                    detail::ensure_grad(sa);
                    for (std::size_t i = 0; i < g.size(); ++i) sa->grad[i] += g[i] * sb->value[i];
                }
                if (rb) {
                    detail::ensure_grad(sb);
                    for (std::size_t i = 0; i < g.size(); ++i) sb->grad[i] += g[i] * sa->value[i];
                }
            } else {
                const int B = sa->shape[0], C = sa->shape[1], HW = sa->shape[2] * sa->shape[3];
                if (ra) detail::ensure_grad(sa);
                if (rb) detail::ensure_grad(sb);
                for (int n = 0; n < B; ++n)
                    for (int c = 0; c < C; ++c) {
                        const std::size_t ao = (static_cast<std::size_t>(n) * C + c) * HW;
                        const std::size_t bo = static_cast<std::size_t>(n) * HW;
                        for (int i = 0; i < HW; ++i) {
                            if (ra) sa->grad[ao + i] += g[ao + i] * sb->value[bo + i];
                            if (rb) sb->grad[bo + i] += g[ao + i] * sa->value[ao + i];
                        }
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);

    if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
        auto sx = x.impl();
        auto so = out.impl();
        // Subgradient at exactly 0 is 0.
        tape->record("relu", out, [sx, so]() {
            if (so->grad.empty()) return;
            detail::ensure_grad(sx);
            for (std::size_t i = 0; i < so->grad.size(); ++i)
                if (sx->value[i] > T(0)) sx->grad[i] += so->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    // Saturated values are clamped back into the open interval: sigma(x) is
    // never exactly 0 or 1 for finite x, but the straight formula rounds to
    // those endpoints once exp underflows.
    const T hi = std::nextafter(T(1), T(0));
    const T lo = std::numeric_limits<T>::min();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const T v = xv[i];
        // Split by sign to avoid overflow in exp.
        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
        ov[i] = std::clamp(s, lo, hi);
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
        auto sx = x.impl();
        auto so = out.impl();
        tape->record("sigmoid", out, [sx, so]() {
            if (so->grad.empty()) return;
            detail::ensure_grad(sx);
            for (std::size_t i = 0; i < so->grad.size(); ++i) {
                const T s = so->value[i];
                sx->grad[i] += so->grad[i] * s * (T(1) - s);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation (no kernel flip) with per-output-channel bias.
// weight is Cout x Cin x K x K; bias may be an undefined tensor for none.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
    detail::require_rank4(input.shape(), "conv2d input");
    detail::require_rank4(weight.shape(), "conv2d weight");
    const int B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = weight.dim(0), K = weight.dim(2);
    if (weight.dim(2) != weight.dim(3))
        throw ConfigError("conv2d kernel must be square, got " + shape_str(weight.shape()));
    if (K % 2 == 0) throw ConfigError("conv2d kernel size must be odd, got " + std::to_string(K));
    if (weight.dim(1) != Cin)
        throw DimensionError("conv2d input has " + std::to_string(Cin) + " channels but weight expects " +
                             std::to_string(weight.dim(1)));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d padding must be >= 0");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv2d bias must be length " + std::to_string(Cout));

    const int eh = H + 2 * padding - K, ew = W + 2 * padding - K;
    if (eh < 0 || ew < 0 || eh % stride != 0 || ew % stride != 0)
        throw ConfigError("conv2d output size is not integral for input " + shape_str(input.shape()) +
                          ", kernel " + std::to_string(K) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
    const int Ho = eh / stride + 1, Wo = ew / stride + 1;
    const int Kd = Cin * K * K, N = Ho * Wo;

    Tensor<T> out(Shape{B, Cout, Ho, Wo});
    {
        std::vector<T> cols(static_cast<std::size_t>(Kd) * N);
        const T* xp = input.values().data();
        const T* wp = weight.values().data();
        T* op = out.values().data();
        for (int b = 0; b < B; ++b) {
            detail::im2col(xp + static_cast<std::size_t>(b) * Cin * H * W, Cin, H, W, K, stride,
                           padding, Ho, Wo, cols.data());
            T* ob = op + static_cast<std::size_t>(b) * Cout * N;
            detail::gemm_acc(Cout, Kd, N, wp, cols.data(), ob);
            if (bias.defined()) {
                const T* bp = bias.values().data();
                for (int co = 0; co < Cout; ++co) {
                    T* row = ob + static_cast<std::size_t>(co) * N;
                    for (int n = 0; n < N; ++n) row[n] += bp[co];
                }
            }
        }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&input, &weight, &bias})) {
        const bool ri = tape->owns(input), rw = tape->owns(weight);
        const bool rb = bias.defined() && tape->owns(bias);
        auto si = input.impl();
        auto sw = weight.impl();
        auto sb = bias.defined() ? bias.impl() : nullptr;
        auto so = out.impl();
        tape->record("conv2d", out, [=]() {
            if (so->grad.empty()) return;
            const T* g = so->grad.data();
            if (ri) detail::ensure_grad(si);
            if (rw) detail::ensure_grad(sw);
            if (rb) detail::ensure_grad(sb);

            std::vector<T> wt;
            if (ri) {
                wt.resize(static_cast<std::size_t>(Kd) * Cout);
                detail::transpose(Cout, Kd, sw->value.data(), wt.data());
            }
            std::vector<T> cols, colst, dcols;
            if (rw) {
                cols.resize(static_cast<std::size_t>(Kd) * N);
                colst.resize(static_cast<std::size_t>(N) * Kd);
            }
            if (ri) dcols.resize(static_cast<std::size_t>(Kd) * N);

            for (int b = 0; b < B; ++b) {
                const T* gb = g + static_cast<std::size_t>(b) * Cout * N;
                if (rb) {
                    for (int co = 0; co < Cout; ++co) {
                        const T* row = gb + static_cast<std::size_t>(co) * N;
                        T acc = T(0);
                        for (int n = 0; n < N; ++n) acc += row[n];
                        sb->grad[co] += acc;
                    }
                }
                if (rw) {
                    detail::im2col(si->value.data() + static_cast<std::size_t>(b) * Cin * H * W,
                                   Cin, H, W, K, stride, padding, Ho, Wo, cols.data());
                    detail::transpose(Kd, N, cols.data(), colst.data());
                    detail::gemm_acc(Cout, N, Kd, gb, colst.data(), sw->grad.data());
                }
                if (ri) {
                    std::fill(dcols.begin(), dcols.end(), T(0));
                    detail::gemm_acc(Kd, Cout, N, wt.data(), gb, dcols.data());
                    detail::col2im_acc(dcols.data(), Cin, H, W, K, stride, padding, Ho, Wo,
                                       si->grad.data() + static_cast<std::size_t>(b) * Cin * H * W);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// max_pool2d: non-overlapping windows, stride must equal kernel. Backward
// routes each output gradient to the window argmax (first occurrence in
// row-major order on ties).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int kernel, int stride) {
    detail::require_rank4(input.shape(), "max_pool2d input");
    if (kernel < 1) throw ConfigError("max_pool2d kernel must be >= 1");
    if (stride != kernel)
        throw ConfigError("max_pool2d requires stride == kernel (non-overlapping), got kernel " +
                          std::to_string(kernel) + ", stride " + std::to_string(stride));
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % kernel != 0 || W % kernel != 0)
        throw DimensionError("max_pool2d: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                             " not divisible by kernel " + std::to_string(kernel));
    const int Ho = H / kernel, Wo = W / kernel;

    Tensor<T> out(Shape{B, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.values().size());
    {
        const T* xp = input.values().data();
        T* op = out.values().data();
        std::int32_t* am = argmax->data();
        std::size_t oi = 0;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const T* plane = xp + (static_cast<std::size_t>(b) * C + c) * H * W;
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo, ++oi) {
                        T best = plane[static_cast<std::size_t>(ho * kernel) * W + wo * kernel];
                        int besti = ho * kernel * W + wo * kernel;
                        for (int kh = 0; kh < kernel; ++kh)
                            for (int kw = 0; kw < kernel; ++kw) {
                                const int idx = (ho * kernel + kh) * W + (wo * kernel + kw);
                                if (plane[idx] > best) {
                                    best = plane[idx];
                                    besti = idx;
                                }
                            }
                        op[oi] = best;
                        am[oi] = besti;
                    }
            }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&input})) {
        auto si = input.impl();
        auto so = out.impl();
        const int HW = H * W, HWo = Ho * Wo;
        const int planes = B * C;
        tape->record("max_pool2d", out, [si, so, argmax, HW, HWo, planes]() {
            if (so->grad.empty()) return;
            detail::ensure_grad(si);
            for (int p = 0; p < planes; ++p) {
                T* dplane = si->grad.data() + static_cast<std::size_t>(p) * HW;
                const T* gplane = so->grad.data() + static_cast<std::size_t>(p) * HWo;
                const std::int32_t* am = argmax->data() + static_cast<std::size_t>(p) * HWo;
                for (int i = 0; i < HWo; ++i) dplane[am[i]] += gplane[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// upsample_nearest: each pixel replicated into a factor x factor block.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, int factor) {
    detail::require_rank4(input.shape(), "upsample_nearest input");
    if (factor < 1) throw ConfigError("upsample_nearest factor must be >= 1");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Ho = H * factor, Wo = W * factor;

    Tensor<T> out(Shape{B, C, Ho, Wo});
    {
        const T* xp = input.values().data();
        T* op = out.values().data();
        for (int p = 0; p < B * C; ++p) {
            const T* plane = xp + static_cast<std::size_t>(p) * H * W;
            T* oplane = op + static_cast<std::size_t>(p) * Ho * Wo;
            for (int ho = 0; ho < Ho; ++ho) {
                const T* srow = plane + static_cast<std::size_t>(ho / factor) * W;
                T* orow = oplane + static_cast<std::size_t>(ho) * Wo;
                for (int wo = 0; wo < Wo; ++wo) orow[wo] = srow[wo / factor];
            }
        }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&input})) {
        auto si = input.impl();
        auto so = out.impl();
        tape->record("upsample_nearest", out, [si, so, B, C, H, W, factor]() {
            if (so->grad.empty()) return;
            detail::ensure_grad(si);
            const int Ho = H * factor, Wo = W * factor;
            for (int p = 0; p < B * C; ++p) {
                T* dplane = si->grad.data() + static_cast<std::size_t>(p) * H * W;
                const T* gplane = so->grad.data() + static_cast<std::size_t>(p) * Ho * Wo;
                for (int ho = 0; ho < Ho; ++ho) {
                    T* drow = dplane + static_cast<std::size_t>(ho / factor) * W;
                    const T* grow = gplane + static_cast<std::size_t>(ho) * Wo;
                    for (int wo = 0; wo < Wo; ++wo) drow[wo / factor] += grow[wo];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch_norm2d. Train mode normalizes by per-channel batch statistics over
// (B,H,W) with biased variance and updates the running stats in place; eval
// mode normalizes by the running stats as constants.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                       T momentum, T eps) {
    detail::require_rank4(x.shape(), "batch_norm2d input");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C ||
        running_mean.dim(0) != C || running_var.dim(0) != C)
        throw DimensionError("batch_norm2d parameter length must equal channel count " +
                             std::to_string(C));

    const int HW = H * W;
    const std::int64_t n = static_cast<std::int64_t>(B) * HW;
    std::vector<T> mean(C), inv_std(C);

    if (mode == Mode::train) {
        std::vector<T> var(C);
        const T* xp = x.values().data();
        for (int c = 0; c < C; ++c) {
            T acc = T(0);
            for (int b = 0; b < B; ++b) {
                const T* plane = xp + (static_cast<std::size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) acc += plane[i];
            }
            const T mu = acc / static_cast<T>(n);
            T vacc = T(0);
            for (int b = 0; b < B; ++b) {
                const T* plane = xp + (static_cast<std::size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) {
                    const T d = plane[i] - mu;
                    vacc += d * d;
                }
            }
            mean[c] = mu;
            var[c] = vacc / static_cast<T>(n);
            inv_std[c] = T(1) / std::sqrt(var[c] + eps);
        }
        auto rm = running_mean.values();
        auto rv = running_var.values();
        for (int c = 0; c < C; ++c) {
            rm[c] = (T(1) - momentum) * rm[c] + momentum * mean[c];
            rv[c] = (T(1) - momentum) * rv[c] + momentum * var[c];
        }
    } else {
        auto rm = running_mean.values();
        auto rv = running_var.values();
        for (int c = 0; c < C; ++c) {
            mean[c] = rm[c];
            inv_std[c] = T(1) / std::sqrt(rv[c] + eps);
        }
    }

    Tensor<T> out(x.shape());
    {
        const T* xp = x.values().data();
        const T* gp = gamma.values().data();
        const T* bp = beta.values().data();
        T* op = out.values().data();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const std::size_t off = (static_cast<std::size_t>(b) * C + c) * HW;
                const T mu = mean[c], inv = inv_std[c], ga = gp[c], be = bp[c];
                for (int i = 0; i < HW; ++i) op[off + i] = ga * (xp[off + i] - mu) * inv + be;
            }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&x, &gamma, &beta})) {
        const bool rx = tape->owns(x), rg = tape->owns(gamma), rb = tape->owns(beta);
        auto sx = x.impl();
        auto sg = gamma.impl();
        auto sb = beta.impl();
        auto so = out.impl();
        const bool train = mode == Mode::train;
        // mean/inv_std are captured by value; the running buffers are not
        // part of the differentiable graph.
        tape->record("batch_norm2d", out, [=]() {
            if (so->grad.empty()) return;
            if (rx) detail::ensure_grad(sx);
            if (rg) detail::ensure_grad(sg);
            if (rb) detail::ensure_grad(sb);
            const T* g = so->grad.data();
            const T* xp = sx->value.data();
            for (int c = 0; c < C; ++c) {
                const T mu = mean[c], inv = inv_std[c], ga = sg->value[c];
                T sum_g = T(0), sum_gx = T(0);
                for (int b = 0; b < B; ++b) {
                    const std::size_t off = (static_cast<std::size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) {
                        const T gi = g[off + i];
                        sum_g += gi;
                        sum_gx += gi * (xp[off + i] - mu) * inv;
                    }
                }
                if (rg) sg->grad[c] += sum_gx;
                if (rb) sb->grad[c] += sum_g;
                if (rx) {
                    if (train) {
                        const T mg = sum_g / static_cast<T>(n);
                        const T mgx = sum_gx / static_cast<T>(n);
                        for (int b = 0; b < B; ++b) {
                            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * HW;
                            for (int i = 0; i < HW; ++i) {
                                const T xhat = (xp[off + i] - mu) * inv;
                                sx->grad[off + i] += ga * inv * (g[off + i] - mg - xhat * mgx);
                            }
                        }
                    } else {
                        const T k = ga * inv;
                        for (int b = 0; b < B; ++b) {
                            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * HW;
                            for (int i = 0; i < HW; ++i) sx->grad[off + i] += k * g[off + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat_channels: stacks a's channels before b's.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank4(a.shape(), "concat_channels input");
    detail::require_rank4(b.shape(), "concat_channels input");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: operands " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ outside the channel axis");
    const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);

    Tensor<T> out(Shape{B, Ca + Cb, a.dim(2), a.dim(3)});
    {
        const T* ap = a.values().data();
        const T* bp = b.values().data();
        T* op = out.values().data();
        for (int n = 0; n < B; ++n) {
            std::memcpy(op + static_cast<std::size_t>(n) * (Ca + Cb) * HW,
                        ap + static_cast<std::size_t>(n) * Ca * HW, sizeof(T) * Ca * HW);
            std::memcpy(op + (static_cast<std::size_t>(n) * (Ca + Cb) + Ca) * HW,
                        bp + static_cast<std::size_t>(n) * Cb * HW, sizeof(T) * Cb * HW);
        }
    }

    if (Tape<T>* tape = detail::recording_tape<T>({&a, &b})) {
        const bool ra = tape->owns(a), rb = tape->owns(b);
        auto sa = a.impl();
        auto sb = b.impl();
        auto so = out.impl();
        tape->record("concat_channels", out, [sa, sb, so, ra, rb, B, Ca, Cb, HW]() {
            if (so->grad.empty()) return;
            const T* g = so->grad.data();
            if (ra) detail::ensure_grad(sa);
            if (rb) detail::ensure_grad(sb);
            for (int n = 0; n < B; ++n) {
                const T* ga = g + static_cast<std::size_t>(n) * (Ca + Cb) * HW;
                if (ra) {
                    T* da = sa->grad.data() + static_cast<std::size_t>(n) * Ca * HW;
                    for (int i = 0; i < Ca * HW; ++i) da[i] += ga[i];
                }
                if (rb) {
                    T* db = sb->grad.data() + static_cast<std::size_t>(n) * Cb * HW;
                    const T* gb = ga + static_cast<std::size_t>(Ca) * HW;
                    for (int i = 0; i < Cb * HW; ++i) db[i] += gb[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax_cross_entropy: per-pixel softmax over the class axis, mean negative
// log-likelihood over all B*H*W pixels, stabilized by max subtraction.
// Gradient w.r.t. logits is (softmax - onehot) / M.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
    detail::require_rank4(logits.shape(), "softmax_cross_entropy logits");
    const int B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    const std::int64_t M = static_cast<std::int64_t>(B) * H * W;
    if (static_cast<std::int64_t>(labels.size()) != M)
        throw DimensionError("softmax_cross_entropy: expected " + std::to_string(M) +
                             " labels, got " + std::to_string(labels.size()));

    const int HW = H * W;
    auto probs = std::make_shared<std::vector<T>>(logits.values().size());
    auto labels_copy = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());

    double loss_acc = 0.0;
    {
        const T* lp = logits.values().data();
        T* pp = probs->data();
        for (int b = 0; b < B; ++b) {
            const std::size_t base = static_cast<std::size_t>(b) * C * HW;
            for (int i = 0; i < HW; ++i) {
                const std::uint8_t lbl = labels[static_cast<std::size_t>(b) * HW + i];
                if (lbl >= C) {
                    const int h = i / W, w = i % W;
                    throw DataError("label " + std::to_string(int(lbl)) + " at pixel (b=" +
                                    std::to_string(b) + ", h=" + std::to_string(h) + ", w=" +
                                    std::to_string(w) + ") out of range for " + std::to_string(C) +
                                    " classes");
                }
                T mx = lp[base + i];
                for (int c = 1; c < C; ++c)
                    mx = std::max(mx, lp[base + static_cast<std::size_t>(c) * HW + i]);
                T denom = T(0);
                for (int c = 0; c < C; ++c) {
                    const T e = std::exp(lp[base + static_cast<std::size_t>(c) * HW + i] - mx);
                    pp[base + static_cast<std::size_t>(c) * HW + i] = e;
                    denom += e;
                }
                const T invd = T(1) / denom;
                for (int c = 0; c < C; ++c) pp[base + static_cast<std::size_t>(c) * HW + i] *= invd;
                const T zt = lp[base + static_cast<std::size_t>(lbl) * HW + i];
                loss_acc += -static_cast<double>(zt - mx - std::log(denom));
            }
        }
    }

    Tensor<T> out = Tensor<T>::from(Shape{}, {static_cast<T>(loss_acc / static_cast<double>(M))});

    if (Tape<T>* tape = detail::recording_tape<T>({&logits})) {
        auto sl = logits.impl();
        auto so = out.impl();
        tape->record("softmax_cross_entropy", out, [sl, so, probs, labels_copy, B, C, HW, M]() {
            if (so->grad.empty()) return;
            detail::ensure_grad(sl);
            const T g = so->grad[0];
            const T scale = g / static_cast<T>(M);
            const T* pp = probs->data();
            for (int b = 0; b < B; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * C * HW;
                for (int c = 0; c < C; ++c) {
                    const std::size_t off = base + static_cast<std::size_t>(c) * HW;
                    for (int i = 0; i < HW; ++i) sl->grad[off + i] += scale * pp[off + i];
                }
                for (int i = 0; i < HW; ++i) {
                    const std::uint8_t lbl = (*labels_copy)[static_cast<std::size_t>(b) * HW + i];
                    sl->grad[base + static_cast<std::size_t>(lbl) * HW + i] -= scale;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// sum: reduction to a rank-0 scalar, fixed left-to-right order.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    Tensor<T> out = Tensor<T>::from(Shape{}, {acc});

    if (Tape<T>* tape = detail::recording_tape<T>({&x})) {
        auto sx = x.impl();
        auto so = out.impl();
        tape->record("sum", out, [sx, so]() {
            if (so->grad.empty()) return;
            detail::ensure_grad(sx);
            const T g = so->grad[0];
            for (std::size_t i = 0; i < sx->grad.size(); ++i) sx->grad[i] += g;
        });
    }
    return out;
}

}  // namespace artseg
