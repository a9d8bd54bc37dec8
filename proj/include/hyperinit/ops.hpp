#pragma once

#include <cmath>
#include <span>

#include "hyperinit/tensor.hpp"

namespace hyperinit {

// ---------------------------------------------------------------------------
// Bias broadcasts

// x[n,d] + b[d]
template <typename T>
TensorPtr<T> add_bias_row(const TensorPtr<T>& x, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 2 || b->shape.size() != 1 || b->shape[0] != x->shape[1])
        throw DimensionError("add_bias_row: shapes " + format_shape(x->shape) + " and " + format_shape(b->shape));
    const int n = x->shape[0], d = x->shape[1];
    auto out = make_tensor<T>(x->shape);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out->data[static_cast<size_t>(i) * d + j] = x->data[static_cast<size_t>(i) * d + j] + b->data[j];
    if (tape)
        tape->record("add_bias_row", {x, b}, out, [x, b, out, n, d] {
            if (x->needs_grad()) {
                x->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) b->grad[j] += out->grad[static_cast<size_t>(i) * d + j];
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// Convolution: direct im2col lowering to matmul, with optional channel groups.
// The column matrix is rebuilt in the backward pass instead of cached; conv
// activations dominate tape memory otherwise.

namespace detail {

// col is [cin_g*kh*kw, N*Ho*Wo] for the channel group starting at c0
template <typename T>
void im2col_group(const Tensor<T>& x, int c0, int cin_g, int kh, int kw, int stride, int pad, int ho,
                  int wo, std::vector<T>& col) {
    const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const int64_t cols = static_cast<int64_t>(n) * ho * wo;
    col.assign(static_cast<size_t>(cin_g) * kh * kw * cols, T(0));
    for (int c = 0; c < cin_g; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col.data() + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) * cols;
                for (int b = 0; b < n; ++b) {
                    const T* src = &x.data[((static_cast<size_t>(b) * x.shape[1] + c0 + c) * h) * w];
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        T* drow = dst + (static_cast<size_t>(b) * ho + oy) * wo;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < w) drow[ox] = src[static_cast<size_t>(iy) * w + ix];
                        }
                    }
                }
            }
}

// scatter-add of dcol back onto the input gradient (transpose of im2col)
template <typename T>
void col2im_group(const std::vector<T>& dcol, Tensor<T>& xgrad_holder, std::vector<T>& xgrad, int c0,
                  int cin_g, int kh, int kw, int stride, int pad, int ho, int wo) {
    const int n = xgrad_holder.shape[0], h = xgrad_holder.shape[2], w = xgrad_holder.shape[3];
    const int64_t cols = static_cast<int64_t>(n) * ho * wo;
    for (int c = 0; c < cin_g; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = dcol.data() + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) * cols;
                for (int b = 0; b < n; ++b) {
                    T* dst = &xgrad[((static_cast<size_t>(b) * xgrad_holder.shape[1] + c0 + c) * h) * w];
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        const T* srow = src + (static_cast<size_t>(b) * ho + oy) * wo;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < w) dst[static_cast<size_t>(iy) * w + ix] += srow[ox];
                        }
                    }
                }
            }
}

}  // namespace detail

// x[N,Cin,H,W], w[Cout,Cin/groups,kh,kw], bias[Cout] or null
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& bias, int stride,
                    int padding, int groups, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4 || w->shape.size() != 4)
        throw DimensionError("conv2d: need 4-D input and weight, got " + format_shape(x->shape) + " and " +
                             format_shape(w->shape));
    const int n = x->shape[0], cin = x->shape[1], h = x->shape[2], wd = x->shape[3];
    const int cout = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw DimensionError("conv2d: groups " + std::to_string(groups) + " does not divide channels " +
                             std::to_string(cin) + "/" + std::to_string(cout));
    const int cin_g = cin / groups, cout_g = cout / groups;
    if (w->shape[1] != cin_g)
        throw DimensionError("conv2d: weight " + format_shape(w->shape) + " does not match input channels " +
                             std::to_string(cin) + " with groups " + std::to_string(groups));
    if (bias && (bias->shape.size() != 1 || bias->shape[0] != cout))
        throw DimensionError("conv2d: bias " + format_shape(bias->shape) + " does not match Cout " + std::to_string(cout));
    if (stride < 1) throw DimensionError("conv2d: stride must be positive");
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (wd + 2 * padding - kw) / stride + 1;
    if (kh > h + 2 * padding || kw > wd + 2 * padding || ho <= 0 || wo <= 0)
        throw DimensionError("conv2d: non-positive output size for input " + format_shape(x->shape) +
                             " kernel " + format_shape(w->shape) + " stride " + std::to_string(stride) +
                             " padding " + std::to_string(padding));

    auto out = make_tensor<T>({n, cout, ho, wo});
    const int64_t cols = static_cast<int64_t>(n) * ho * wo;
    const int krows = cin_g * kh * kw;
    std::vector<T> col;
    std::vector<T> prod(static_cast<size_t>(cout_g) * cols);
    for (int g = 0; g < groups; ++g) {
        detail::im2col_group(*x, g * cin_g, cin_g, kh, kw, stride, padding, ho, wo, col);
        detail::ECMap<T> W(w->data.data() + static_cast<size_t>(g) * cout_g * krows, cout_g, krows);
        detail::ECMap<T> C(col.data(), krows, cols);
        detail::EMap<T>(prod.data(), cout_g, cols).noalias() = W * C;
        // scatter [cout_g, N*Ho*Wo] into NCHW
        for (int co = 0; co < cout_g; ++co) {
            const T* src = prod.data() + static_cast<size_t>(co) * cols;
            const T b = bias ? bias->data[g * cout_g + co] : T(0);
            for (int bi = 0; bi < n; ++bi) {
                T* dst = &out->data[((static_cast<size_t>(bi) * cout + g * cout_g + co) * ho) * wo];
                const T* s = src + static_cast<size_t>(bi) * ho * wo;
                for (int i = 0; i < ho * wo; ++i) dst[i] = s[i] + b;
            }
        }
    }
    if (tape) {
        std::vector<TensorPtr<T>> inputs = {x, w};
        if (bias) inputs.push_back(bias);
        tape->record("conv2d", std::move(inputs), out,
                     [x, w, bias, out, stride, padding, groups, cin_g, cout_g, kh, kw, ho, wo, n, cout, krows, cols] {
                         std::vector<T> col, gout(static_cast<size_t>(cout_g) * cols), dcol;
                         for (int g = 0; g < groups; ++g) {
                             // gather this group's output gradient as [cout_g, cols]
                             for (int co = 0; co < cout_g; ++co) {
                                 T* dst = gout.data() + static_cast<size_t>(co) * cols;
                                 for (int bi = 0; bi < n; ++bi) {
                                     const T* src = &out->grad[((static_cast<size_t>(bi) * cout + g * cout_g + co) * ho) * wo];
                                     std::copy(src, src + static_cast<size_t>(ho) * wo, dst + static_cast<size_t>(bi) * ho * wo);
                                 }
                             }
                             detail::ECMap<T> G(gout.data(), cout_g, cols);
                             if (w->needs_grad() || x->needs_grad())
                                 detail::im2col_group(*x, g * cin_g, cin_g, kh, kw, stride, padding, ho, wo, col);
                             if (w->needs_grad()) {
                                 w->ensure_grad();
                                 detail::ECMap<T> C(col.data(), krows, cols);
                                 detail::EMap<T>(w->grad.data() + static_cast<size_t>(g) * cout_g * krows, cout_g, krows)
                                     .noalias() += G * C.transpose();
                             }
                             if (x->needs_grad()) {
                                 x->ensure_grad();
                                 detail::ECMap<T> W(w->data.data() + static_cast<size_t>(g) * cout_g * krows, cout_g, krows);
                                 dcol.assign(static_cast<size_t>(krows) * cols, T(0));
                                 detail::EMap<T>(dcol.data(), krows, cols).noalias() = W.transpose() * G;
                                 detail::col2im_group(dcol, *x, x->grad, g * cin_g, cin_g, kh, kw, stride, padding, ho, wo);
                             }
                             if (bias && bias->needs_grad()) {
                                 bias->ensure_grad();
                                 for (int co = 0; co < cout_g; ++co) {
                                     T s = T(0);
                                     const T* src = gout.data() + static_cast<size_t>(co) * cols;
                                     for (int64_t i = 0; i < cols; ++i) s += src[i];
                                     bias->grad[g * cout_g + co] += s;
                                 }
                             }
                         }
                     });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
TensorPtr<T> max_pool2d(const TensorPtr<T>& x, int kernel, int stride, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4) throw DimensionError("max_pool2d: need 4-D, got " + format_shape(x->shape));
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    if (kernel > h || kernel > w)
        throw DimensionError("max_pool2d: kernel " + std::to_string(kernel) + " exceeds input " + format_shape(x->shape));
    const int ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
    auto out = make_tensor<T>({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
    size_t o = 0;
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const size_t base = (static_cast<size_t>(b) * c + ch) * h * w;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    int64_t bidx = -1;
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx) {
                            const int64_t idx = base + static_cast<int64_t>(oy * stride + ky) * w + ox * stride + kx;
                            if (x->data[idx] > best) {
                                best = x->data[idx];
                                bidx = idx;
                            }
                        }
                    out->data[o] = best;
                    (*argmax)[o] = bidx;
                }
        }
    if (tape)
        tape->record("max_pool2d", {x}, out, [x, out, argmax] {
            if (!x->needs_grad()) return;
            x->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) x->grad[(*argmax)[i]] += out->grad[i];
        });
    return out;
}

template <typename T>
TensorPtr<T> avg_pool2d(const TensorPtr<T>& x, int kernel, int stride, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4) throw DimensionError("avg_pool2d: need 4-D, got " + format_shape(x->shape));
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    if (kernel > h || kernel > w)
        throw DimensionError("avg_pool2d: kernel " + std::to_string(kernel) + " exceeds input " + format_shape(x->shape));
    const int ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
    auto out = make_tensor<T>({n, c, ho, wo});
    const T inv = T(1) / static_cast<T>(kernel * kernel);
    size_t o = 0;
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const size_t base = (static_cast<size_t>(b) * c + ch) * h * w;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++o) {
                    T s = T(0);
                    for (int ky = 0; ky < kernel; ++ky)
                        for (int kx = 0; kx < kernel; ++kx)
                            s += x->data[base + static_cast<int64_t>(oy * stride + ky) * w + ox * stride + kx];
                    out->data[o] = s * inv;
                }
        }
    if (tape)
        tape->record("avg_pool2d", {x}, out, [x, out, kernel, stride, n, c, h, w, ho, wo, inv] {
            if (!x->needs_grad()) return;
            x->ensure_grad();
            size_t o = 0;
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const size_t base = (static_cast<size_t>(b) * c + ch) * h * w;
                    for (int oy = 0; oy < ho; ++oy)
                        for (int ox = 0; ox < wo; ++ox, ++o) {
                            const T g = out->grad[o] * inv;
                            for (int ky = 0; ky < kernel; ++ky)
                                for (int kx = 0; kx < kernel; ++kx)
                                    x->grad[base + static_cast<int64_t>(oy * stride + ky) * w + ox * stride + kx] += g;
                        }
                }
        });
    return out;
}

// [N,C,H,W] -> [N,C]
template <typename T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4) throw DimensionError("global_avg_pool: need 4-D, got " + format_shape(x->shape));
    const int n = x->shape[0], c = x->shape[1];
    const int64_t plane = static_cast<int64_t>(x->shape[2]) * x->shape[3];
    auto out = make_tensor<T>({n, c});
    const T inv = T(1) / static_cast<T>(plane);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = &x->data[(static_cast<size_t>(b) * c + ch) * plane];
            T s = T(0);
            for (int64_t i = 0; i < plane; ++i) s += src[i];
            out->data[static_cast<size_t>(b) * c + ch] = s * inv;
        }
    if (tape)
        tape->record("global_avg_pool", {x}, out, [x, out, n, c, plane, inv] {
            if (!x->needs_grad()) return;
            x->ensure_grad();
            for (int b = 0; b < n; ++b)
                for (int ch = 0; ch < c; ++ch) {
                    const T g = out->grad[static_cast<size_t>(b) * c + ch] * inv;
                    T* dst = &x->grad[(static_cast<size_t>(b) * c + ch) * plane];
                    for (int64_t i = 0; i < plane; ++i) dst[i] += g;
                }
        });
    return out;
}

// nearest-neighbor 2x upsampling for decoder paths
template <typename T>
TensorPtr<T> upsample_nearest2(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4) throw DimensionError("upsample_nearest2: need 4-D, got " + format_shape(x->shape));
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(n) * c * 4 * h * w);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const int64_t base = (static_cast<int64_t>(b) * c + ch) * h * w;
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) idx->push_back(base + static_cast<int64_t>(y / 2) * w + xx / 2);
        }
    return gather<T>(x, idx, {n, c, 2 * h, 2 * w}, tape);
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BnStats {
    std::vector<T> mean;  // running mean, per channel
    std::vector<T> var;   // running variance, per channel
};

// Training mode uses batch statistics (and updates *stats when given);
// inference mode uses running statistics, defaulting to mean 0 / var 1.
template <typename T>
TensorPtr<T> batchnorm2d(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta, T eps,
                         bool training, BnStats<T>* stats = nullptr, T momentum = T(0.1),
                         Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4) throw DimensionError("batchnorm2d: need 4-D, got " + format_shape(x->shape));
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    if (gamma->shape != std::vector<int>{c} || beta->shape != std::vector<int>{c})
        throw DimensionError("batchnorm2d: gamma " + format_shape(gamma->shape) + " / beta " +
                             format_shape(beta->shape) + " do not match channels " + std::to_string(c));
    if (eps <= T(0)) throw ValidationError("batchnorm2d: eps must be positive");
    const int64_t m = static_cast<int64_t>(n) * h * w;
    if (m < 1) throw DimensionError("batchnorm2d: empty batch");

    auto out = make_tensor<T>(x->shape);
    auto xhat = std::make_shared<std::vector<T>>(x->data.size());
    auto inv_std = std::make_shared<std::vector<T>>(c);

    std::vector<T> mu(c, T(0)), var(c, T(0));
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            T s = T(0);
            for (int b = 0; b < n; ++b) {
                const T* src = &x->data[((static_cast<size_t>(b) * c + ch) * h) * w];
                for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) s += src[i];
            }
            mu[ch] = s / static_cast<T>(m);
            T v = T(0);
            for (int b = 0; b < n; ++b) {
                const T* src = &x->data[((static_cast<size_t>(b) * c + ch) * h) * w];
                for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
                    const T d = src[i] - mu[ch];
                    v += d * d;
                }
            }
            var[ch] = v / static_cast<T>(m);
        }
        if (stats) {
            if (stats->mean.empty()) {
                stats->mean.assign(c, T(0));
                stats->var.assign(c, T(1));
            }
            for (int ch = 0; ch < c; ++ch) {
                stats->mean[ch] = (T(1) - momentum) * stats->mean[ch] + momentum * mu[ch];
                stats->var[ch] = (T(1) - momentum) * stats->var[ch] + momentum * var[ch];
            }
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mu[ch] = (stats && !stats->mean.empty()) ? stats->mean[ch] : T(0);
            var[ch] = (stats && !stats->var.empty()) ? stats->var[ch] : T(1);
        }
    }

    for (int ch = 0; ch < c; ++ch) (*inv_std)[ch] = T(1) / std::sqrt(var[ch] + eps);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const size_t base = ((static_cast<size_t>(b) * c + ch) * h) * w;
            const T is = (*inv_std)[ch], g = gamma->data[ch], be = beta->data[ch], mm = mu[ch];
            for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
                const T xh = (x->data[base + i] - mm) * is;
                (*xhat)[base + i] = xh;
                out->data[base + i] = g * xh + be;
            }
        }

    if (tape)
        tape->record("batchnorm2d", {x, gamma, beta}, out,
                     [x, gamma, beta, out, xhat, inv_std, n, c, h, w, m, training] {
                         const int64_t plane = static_cast<int64_t>(h) * w;
                         for (int ch = 0; ch < c; ++ch) {
                             T sum_g = T(0), sum_gx = T(0);
                             for (int b = 0; b < n; ++b) {
                                 const size_t base = ((static_cast<size_t>(b) * c + ch) * h) * w;
                                 for (int64_t i = 0; i < plane; ++i) {
                                     sum_g += out->grad[base + i];
                                     sum_gx += out->grad[base + i] * (*xhat)[base + i];
                                 }
                             }
                             if (gamma->needs_grad()) {
                                 gamma->ensure_grad();
                                 gamma->grad[ch] += sum_gx;
                             }
                             if (beta->needs_grad()) {
                                 beta->ensure_grad();
                                 beta->grad[ch] += sum_g;
                             }
                             if (x->needs_grad()) {
                                 x->ensure_grad();
                                 const T gm = gamma->data[ch] * (*inv_std)[ch];
                                 const T mg = sum_g / static_cast<T>(m), mgx = sum_gx / static_cast<T>(m);
                                 for (int b = 0; b < n; ++b) {
                                     const size_t base = ((static_cast<size_t>(b) * c + ch) * h) * w;
                                     for (int64_t i = 0; i < plane; ++i) {
                                         if (training)
                                             x->grad[base + i] +=
                                                 gm * (out->grad[base + i] - mg - (*xhat)[base + i] * mgx);
                                         else
                                             x->grad[base + i] += gm * out->grad[base + i];
                                     }
                                 }
                             }
                         }
                     });
    return out;
}

// ---------------------------------------------------------------------------
// Losses

// mean negative log-softmax of the true labels, max-stabilized
template <typename T>
TensorPtr<T> softmax_cross_entropy(const TensorPtr<T>& logits, const std::vector<int>& labels,
                                   Tape<T>* tape = nullptr) {
    if (logits->shape.size() != 2) throw DimensionError("softmax_cross_entropy: need [n,c] logits, got " + format_shape(logits->shape));
    const int n = logits->shape[0], c = logits->shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw ValidationError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(n) + " rows");
    for (int l : labels)
        if (l < 0 || l >= c) throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
    auto probs = std::make_shared<std::vector<T>>(logits->data.size());
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
        const T* row = &logits->data[static_cast<size_t>(i) * c];
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        const T log_denom = std::log(denom);
        for (int j = 0; j < c; ++j) (*probs)[static_cast<size_t>(i) * c + j] = std::exp(row[j] - mx) / denom;
        loss += -(row[labels[i]] - mx - log_denom);
    }
    auto out = scalar_tensor<T>(loss / static_cast<T>(n));
    if (tape)
        tape->record("softmax_cross_entropy", {logits}, out, [logits, out, probs, labels, n, c] {
            if (!logits->needs_grad()) return;
            logits->ensure_grad();
            const T g = out->grad[0] / static_cast<T>(n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    logits->grad[static_cast<size_t>(i) * c + j] +=
                        g * ((*probs)[static_cast<size_t>(i) * c + j] - (j == labels[i] ? T(1) : T(0)));
        });
    return out;
}

// row-wise softmax probabilities, no tape (metric/eval use)
template <typename T>
std::vector<T> softmax_rows(const TensorPtr<T>& logits) {
    const int n = logits->shape[0], c = logits->shape[1];
    std::vector<T> p(logits->data.size());
    for (int i = 0; i < n; ++i) {
        const T* row = &logits->data[static_cast<size_t>(i) * c];
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) p[static_cast<size_t>(i) * c + j] = std::exp(row[j] - mx) / denom;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Affine layers

// y = x·Wᵀ + b with W stored [out,in]; 4-D inputs are flattened to [N, C·H·W]
template <typename T>
TensorPtr<T> linear(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    TensorPtr<T> x2 = x;
    if (x->shape.size() == 4)
        x2 = reshape(x, {x->shape[0], x->shape[1] * x->shape[2] * x->shape[3]}, tape);
    if (x2->shape.size() != 2 || w->shape.size() != 2 || w->shape[1] != x2->shape[1])
        throw DimensionError("linear: input " + format_shape(x2->shape) + " vs weight " + format_shape(w->shape));
    auto y = matmul(x2, transpose2d(w, tape), tape);
    if (b) y = add_bias_row(y, b, tape);
    return y;
}

// y = x·W + b with W stored [in,out]; the hypernet's internal MLP convention
template <typename T>
TensorPtr<T> affine_rm(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    auto y = matmul(x, w, tape);
    if (b) y = add_bias_row(y, b, tape);
    return y;
}

// row-gather from a learnable table [V,d]
template <typename T>
TensorPtr<T> embedding_lookup(const TensorPtr<T>& table, const std::vector<int>& ids, Tape<T>* tape = nullptr) {
    if (table->shape.size() != 2) throw DimensionError("embedding_lookup: table must be 2-D");
    const int v = table->shape[0], d = table->shape[1];
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(ids.size() * d);
    for (int id : ids) {
        if (id < 0 || id >= v)
            throw ValidationError("embedding_lookup: id " + std::to_string(id) + " outside table of " + std::to_string(v));
        for (int j = 0; j < d; ++j) idx->push_back(static_cast<int64_t>(id) * d + j);
    }
    return gather<T>(table, idx, {static_cast<int>(ids.size()), d}, tape);
}

// ---------------------------------------------------------------------------
// GRU cell

template <typename T>
struct GruWeights {
    // right-multiplication convention: z = sigmoid(m·wz + h·uz + bz)
    TensorPtr<T> wz, uz, bz;
    TensorPtr<T> wr, ur, br;
    TensorPtr<T> wh, uh, bh;
};

// h' = (1-z)⊙h + z⊙ĥ with z = σ(m·Wz + h·Uz), r = σ(m·Wr + h·Ur),
// ĥ = tanh(m·Wh + (r⊙h)·Uh)
template <typename T>
TensorPtr<T> gru_cell(const TensorPtr<T>& h, const TensorPtr<T>& m, const GruWeights<T>& wts,
                      Tape<T>* tape = nullptr) {
    if (h->shape.size() != 2 || m->shape.size() != 2 || h->shape[1] != m->shape[1])
        throw DimensionError("gru_cell: state " + format_shape(h->shape) + " vs input " + format_shape(m->shape));
    auto z = sigmoid(add_bias_row(add(matmul(m, wts.wz, tape), matmul(h, wts.uz, tape), tape), wts.bz, tape), tape);
    auto r = sigmoid(add_bias_row(add(matmul(m, wts.wr, tape), matmul(h, wts.ur, tape), tape), wts.br, tape), tape);
    auto rh = mul(r, h, tape);
    auto hhat = tanh_act(add_bias_row(add(matmul(m, wts.wh, tape), matmul(rh, wts.uh, tape), tape), wts.bh, tape), tape);
    // h + z⊙(ĥ−h) == (1−z)⊙h + z⊙ĥ
    return add(h, mul(z, sub(hhat, h, tape), tape), tape);
}

// ---------------------------------------------------------------------------
// Standardization (decoder output shaping)

// y = w * (target_std / std(w)); the scale is part of the differentiated
// path. eps only guards the all-equal tensor; it must stay far below any
// realistic variance so the target std is hit exactly.
template <typename T>
TensorPtr<T> standardize_to(const TensorPtr<T>& w, T target_std, Tape<T>* tape = nullptr, T eps = T(1e-20)) {
    const int64_t n = w->numel();
    T mu = T(0);
    for (T v : w->data) mu += v;
    mu /= static_cast<T>(n);
    T var = T(0);
    for (T v : w->data) var += (v - mu) * (v - mu);
    var /= static_cast<T>(n);
    const T s = std::sqrt(var + eps);
    const T scale = target_std / s;
    auto out = make_tensor<T>(w->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = w->data[i] * scale;
    if (tape)
        tape->record("standardize_to", {w}, out, [w, out, mu, s, target_std, n] {
            if (!w->needs_grad()) return;
            w->ensure_grad();
            T dot = T(0);
            for (size_t i = 0; i < out->grad.size(); ++i) dot += out->grad[i] * w->data[i];
            const T c_over_s = target_std / s;
            const T k = dot / (static_cast<T>(n) * s * s);
            for (size_t i = 0; i < w->grad.size(); ++i)
                w->grad[i] += c_over_s * (out->grad[i] - (w->data[i] - mu) * k);
        });
    return out;
}

// [N,C,H,W] -> [N·H·W, C] for per-pixel classification losses
template <typename T>
TensorPtr<T> pixelwise_logits(const TensorPtr<T>& x, Tape<T>* tape = nullptr) {
    if (x->shape.size() != 4) throw DimensionError("pixelwise_logits: need 4-D, got " + format_shape(x->shape));
    const int n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(x->data.size());
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                for (int ch = 0; ch < c; ++ch)
                    idx->push_back(((static_cast<int64_t>(b) * c + ch) * h + y) * w + xx);
    return gather<T>(x, idx, {n * h * w, c}, tape);
}

}  // namespace hyperinit
