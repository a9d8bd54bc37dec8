#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hyperinit/errors.hpp"

namespace hyperinit {

// Dense n-d tensor participating in reverse-mode differentiation. Values are
// treated as immutable while a recording tape that consumed them is alive;
// optimizers mutate leaf data only between tapes.

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;   // empty until backward touches this tensor
    bool on_tape = false;  // true when produced by a recorded op
    std::string name;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    bool needs_grad() const { return requires_grad || on_tape; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }

    // Accessors for 2-D / 4-D layouts (row-major).
    T& at2(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    const T& at2(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    T& at4(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
struct NamedParam {
    std::string name;
    TensorPtr<T> value;
};

inline std::string format_shape(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + format_shape(shape));
        n *= d;
    }
    return n;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw DimensionError("value count " + std::to_string(values.size()) + " does not fill shape " +
                             format_shape(shape));
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> scalar_tensor(T v, bool requires_grad = false) {
    return make_tensor<T>({1}, {v}, requires_grad);
}

// ---------------------------------------------------------------------------
// Tape

// Ordered record of primitive applications. Construction order is a
// topological order by definition: an op can only consume tensors that
// already exist. backward() walks it once in reverse, summing gradients
// into shared inputs.
template <typename T>
class Tape {
   public:
    struct Entry {
        const char* op;
        std::vector<TensorPtr<T>> inputs;
        TensorPtr<T> output;
        std::function<void()> backward;
    };

    void record(const char* op, std::vector<TensorPtr<T>> inputs, TensorPtr<T> output,
                std::function<void()> backward) {
        if (consumed_) throw StateError("tape already consumed by backward; recording '" + std::string(op) + "' refused");
        output->on_tape = true;
        entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
    }

    void backward(const TensorPtr<T>& loss) {
        if (consumed_) throw StateError("backward called twice on a consumed tape");
        if (loss->numel() != 1) throw DimensionError("backward requires a scalar loss, got shape " + format_shape(loss->shape));
        consumed_ = true;
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (it->output->grad.empty()) continue;  // no gradient reached this node
            it->backward();
        }
    }

    bool consumed() const { return consumed_; }
    size_t size() const { return entries_.size(); }

   private:
    std::vector<Entry> entries_;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise primitives

namespace detail {

template <typename T>
void check_same_shape(const char* op, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw DimensionError(std::string(op) + ": shapes " + format_shape(a->shape) + " and " +
                             format_shape(b->shape) + " differ");
}

}  // namespace detail

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape("add", a, b);
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (tape)
        tape->record("add", {a, b}, out, [a, b, out] {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    return out;
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape("sub", a, b);
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    if (tape)
        tape->record("sub", {a, b}, out, [a, b, out] {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    return out;
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape("mul", a, b);
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (tape)
        tape->record("mul", {a, b}, out, [a, b, out] {
            if (a->needs_grad()) {
                a->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    return out;
}

template <typename T>
TensorPtr<T> add_scalar(const TensorPtr<T>& a, T c, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + c;
    if (tape)
        tape->record("add_scalar", {a}, out, [a, out] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        });
    return out;
}

// elementwise scale by a constant
template <typename T>
TensorPtr<T> mul_scalar(const TensorPtr<T>& a, T c, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * c;
    if (tape)
        tape->record("mul_scalar", {a}, out, [a, out, c] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * c;
        });
    return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& a, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] > T(0) ? a->data[i] : T(0);
    if (tape)
        tape->record("relu", {a}, out, [a, out] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i)
                if (a->data[i] > T(0)) a->grad[i] += out->grad[i];
        });
    return out;
}

template <typename T>
TensorPtr<T> sigmoid(const TensorPtr<T>& a, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) {
        T x = a->data[i];
        out->data[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
    }
    if (tape)
        tape->record("sigmoid", {a}, out, [a, out] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) {
                T y = out->data[i];
                a->grad[i] += out->grad[i] * y * (T(1) - y);
            }
        });
    return out;
}

template <typename T>
TensorPtr<T> tanh_act(const TensorPtr<T>& a, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::tanh(a->data[i]);
    if (tape)
        tape->record("tanh", {a}, out, [a, out] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) {
                T y = out->data[i];
                a->grad[i] += out->grad[i] * (T(1) - y * y);
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// matmul

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// a[m,k] * b[k,n] -> [m,n]; backward dA = dC·Bᵀ, dB = Aᵀ·dC
template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b, Tape<T>* tape = nullptr) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw DimensionError("matmul: incompatible shapes " + format_shape(a->shape) + " and " +
                             format_shape(b->shape));
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_tensor<T>({m, n});
    detail::ECMap<T> A(a->data.data(), m, k), B(b->data.data(), k, n);
    detail::EMap<T>(out->data.data(), m, n).noalias() = A * B;
    if (tape)
        tape->record("matmul", {a, b}, out, [a, b, out, m, k, n] {
            detail::ECMap<T> A(a->data.data(), m, k), B(b->data.data(), k, n);
            detail::ECMap<T> dC(out->grad.data(), m, n);
            if (a->needs_grad()) {
                a->ensure_grad();
                detail::EMap<T>(a->grad.data(), m, k).noalias() += dC * B.transpose();
            }
            if (b->needs_grad()) {
                b->ensure_grad();
                detail::EMap<T>(b->grad.data(), k, n).noalias() += A.transpose() * dC;
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// Shape & indexing primitives

// Same data, new shape. Copies, keeping tape tensors immutable.
template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& a, std::vector<int> new_shape, Tape<T>* tape = nullptr) {
    if (shape_numel(new_shape) != a->numel())
        throw DimensionError("reshape: " + format_shape(a->shape) + " -> " + format_shape(new_shape) +
                             " changes element count");
    auto out = make_tensor<T>(std::move(new_shape));
    out->data = a->data;
    if (tape)
        tape->record("reshape", {a}, out, [a, out] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
        });
    return out;
}

// out[i] = idx[i] >= 0 ? in[idx[i]] : 0. Backward scatter-adds. One primitive
// covers transposes, slicing, tiling, row lookups, nearest upsampling and
// im2col-style rearrangements.
template <typename T>
TensorPtr<T> gather(const TensorPtr<T>& a, std::shared_ptr<const std::vector<int64_t>> idx,
                    std::vector<int> out_shape, Tape<T>* tape = nullptr) {
    if (static_cast<int64_t>(idx->size()) != shape_numel(out_shape))
        throw DimensionError("gather: index count does not fill output shape " + format_shape(out_shape));
    auto out = make_tensor<T>(std::move(out_shape));
    const int64_t limit = a->numel();
    for (size_t i = 0; i < idx->size(); ++i) {
        int64_t j = (*idx)[i];
        if (j >= limit) throw DimensionError("gather: index " + std::to_string(j) + " out of range");
        out->data[i] = j >= 0 ? a->data[j] : T(0);
    }
    if (tape)
        tape->record("gather", {a}, out, [a, out, idx] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < idx->size(); ++i) {
                int64_t j = (*idx)[i];
                if (j >= 0) a->grad[j] += out->grad[i];
            }
        });
    return out;
}

// out[r,:] = in[rows[r],:] for a 2-D input; backward scatter-adds rows.
template <typename T>
TensorPtr<T> gather_rows(const TensorPtr<T>& a, std::shared_ptr<const std::vector<int>> rows,
                         Tape<T>* tape = nullptr) {
    if (a->shape.size() != 2) throw DimensionError("gather_rows: need 2-D, got " + format_shape(a->shape));
    const int r = a->shape[0], c = a->shape[1];
    auto out = make_tensor<T>({static_cast<int>(rows->size()), c});
    for (size_t i = 0; i < rows->size(); ++i) {
        const int src = (*rows)[i];
        if (src < 0 || src >= r) throw DimensionError("gather_rows: row " + std::to_string(src) + " out of range");
        std::copy(a->data.begin() + static_cast<size_t>(src) * c, a->data.begin() + static_cast<size_t>(src + 1) * c,
                  out->data.begin() + i * c);
    }
    if (tape)
        tape->record("gather_rows", {a}, out, [a, out, rows, c] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < rows->size(); ++i) {
                const size_t src = static_cast<size_t>((*rows)[i]) * c;
                for (int j = 0; j < c; ++j) a->grad[src + j] += out->grad[i * c + j];
            }
        });
    return out;
}

// 2-D transpose via gather
template <typename T>
TensorPtr<T> transpose2d(const TensorPtr<T>& a, Tape<T>* tape = nullptr) {
    if (a->shape.size() != 2) throw DimensionError("transpose2d: need 2-D, got " + format_shape(a->shape));
    const int r = a->shape[0], c = a->shape[1];
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(r) * c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) idx->push_back(static_cast<int64_t>(i) * c + j);
    return gather<T>(a, idx, {c, r}, tape);
}

// Concatenate 4-D tensors along the channel axis.
template <typename T>
TensorPtr<T> concat_channels(const std::vector<TensorPtr<T>>& parts, Tape<T>* tape = nullptr) {
    if (parts.empty()) throw DimensionError("concat_channels: no inputs");
    for (const auto& p : parts)
        if (p->shape.size() != 4) throw DimensionError("concat_channels: need 4-D, got " + format_shape(p->shape));
    const int n = parts[0]->shape[0], h = parts[0]->shape[2], w = parts[0]->shape[3];
    int ctotal = 0;
    for (const auto& p : parts) {
        if (p->shape[0] != n || p->shape[2] != h || p->shape[3] != w)
            throw DimensionError("concat_channels: spatial/batch mismatch between " + format_shape(parts[0]->shape) +
                                 " and " + format_shape(p->shape));
        ctotal += p->shape[1];
    }
    auto out = make_tensor<T>({n, ctotal, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    size_t coff = 0;
    for (const auto& p : parts) {
        const int pc = p->shape[1];
        for (int b = 0; b < n; ++b)
            std::copy(p->data.begin() + static_cast<size_t>(b) * pc * plane,
                      p->data.begin() + static_cast<size_t>(b + 1) * pc * plane,
                      out->data.begin() + (static_cast<size_t>(b) * ctotal + coff) * plane);
        coff += pc;
    }
    if (tape)
        tape->record("concat_channels", parts, out, [parts, out, n, ctotal, plane] {
            size_t coff = 0;
            for (const auto& p : parts) {
                const int pc = p->shape[1];
                if (p->needs_grad()) {
                    p->ensure_grad();
                    for (int b = 0; b < n; ++b) {
                        const T* src = out->grad.data() + (static_cast<size_t>(b) * ctotal + coff) * plane;
                        T* dst = p->grad.data() + static_cast<size_t>(b) * pc * plane;
                        for (size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                    }
                }
                coff += pc;
            }
        });
    return out;
}

template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& a, Tape<T>* tape = nullptr) {
    auto out = make_tensor<T>({1});
    T s = T(0);
    for (T v : a->data) s += v;
    out->data[0] = s;
    if (tape)
        tape->record("sum_all", {a}, out, [a, out] {
            if (!a->needs_grad()) return;
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[0];
        });
    return out;
}

}  // namespace hyperinit
