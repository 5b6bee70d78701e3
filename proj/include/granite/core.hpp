// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors plus the primitive forward/backward ops the
// layer zoo is built from: matrix multiply, valid 1-d cross-correlation,
// window-2 max pooling, last-axis concatenation, and activations. Every
// forward can record an OpCache; the matching *_backward consumes it and
// returns exact vector-Jacobian products.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace granite {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or graph wiring.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or unusable input data (CSV rows, degenerate series, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or unusable request.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or other numerical breakdown mid-run.
class NumericError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

/// SplitMix64 mix of a base seed and a stream index. Used everywhere a
/// derived, schedule-independent RNG stream is needed (rounds, cycles,
/// per-epoch shuffles).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Dense n-dimensional array of doubles, row-major, value semantics.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.assign(checked_size(shape_), 0.0);
    }

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != checked_size(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor full(Shape shape, double value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    /// 1-d tensor from a value list.
    static Tensor row(std::vector<double> values) {
        Shape s{values.size()};
        return Tensor(std::move(s), std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // rank-2 access
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    // rank-3 access
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(Shape shape) const {
        if (checked_size(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

private:
    static std::size_t checked_size(const Shape& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
            n *= d;
        }
        return n;
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
    }
}

inline Tensor& add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
}

inline Tensor& scale_inplace(Tensor& a, double s) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
    return a;
}

/// Retained state linking one forward call to its backward. `op` names the
/// producing forward; backwards refuse caches from a different op.
struct OpCache {
    const char* op = "";
    std::vector<Tensor> saved;
    std::vector<std::size_t> indices;
};

inline void require_cache(const OpCache& cache, const char* op, std::size_t saved_count) {
    if (std::string(cache.op) != op || cache.saved.size() < saved_count) {
        throw Error(std::string("backward for '") + op + "' got cache from '" +
                    (cache.op[0] ? cache.op : "<empty>") + "'");
    }
}

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b, OpCache* cache = nullptr) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    }
    if (cache) {
        cache->op = "matmul";
        cache->saved = {a, b};
    }
    return out;
}

/// Grads w.r.t. both operands: (g . b^T, a^T . g).
inline std::pair<Tensor, Tensor> matmul_backward(const OpCache& cache, const Tensor& grad) {
    require_cache(cache, "matmul", 2);
    const Tensor& a = cache.saved[0];
    const Tensor& b = cache.saved[1];
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (grad.rank() != 2 || grad.dim(0) != m || grad.dim(1) != n) {
        throw ShapeError("matmul backward: grad shape " + shape_str(grad.shape()) +
                         " does not match output (" + std::to_string(m) + "," + std::to_string(n) + ")");
    }
    Tensor ga({m, k});
    Tensor gb({k, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double g = grad.at(i, j);
            if (g == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) {
                ga.at(i, p) += g * b.at(p, j);
                gb.at(p, j) += g * a.at(i, p);
            }
        }
    }
    return {std::move(ga), std::move(gb)};
}

// ---------------------------------------------------------------------------
// conv1d: valid cross-correlation, stride 1, no padding.
// input [L, Cin], kernels [f, k, Cin], bias [f] -> [L-k+1, f]

inline Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                     OpCache* cache = nullptr) {
    if (input.rank() != 2 || kernels.rank() != 3 || bias.rank() != 1) {
        throw ShapeError("conv1d: want input [L,Cin], kernels [f,k,Cin], bias [f]; got " +
                         shape_str(input.shape()) + ", " + shape_str(kernels.shape()) + ", " +
                         shape_str(bias.shape()));
    }
    const std::size_t L = input.dim(0), cin = input.dim(1);
    const std::size_t f = kernels.dim(0), k = kernels.dim(1);
    if (kernels.dim(2) != cin || bias.dim(0) != f) {
        throw ShapeError("conv1d: kernels " + shape_str(kernels.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match input " + shape_str(input.shape()));
    }
    if (L < k) {
        throw ShapeError("conv1d: input length " + std::to_string(L) + " shorter than kernel " +
                         std::to_string(k));
    }
    const std::size_t lout = L - k + 1;
    Tensor out({lout, f});
    for (std::size_t p = 0; p < lout; ++p) {
        for (std::size_t j = 0; j < f; ++j) {
            double acc = bias[j];
            for (std::size_t u = 0; u < k; ++u) {
                for (std::size_t c = 0; c < cin; ++c) {
                    acc += input.at(p + u, c) * kernels.at(j, u, c);
                }
            }
            out.at(p, j) = acc;
        }
    }
    if (cache) {
        cache->op = "conv1d";
        cache->saved = {input, kernels};
    }
    return out;
}

struct Conv1dGrads {
    Tensor input;
    Tensor kernels;
    Tensor bias;
};

inline Conv1dGrads conv1d_backward(const OpCache& cache, const Tensor& grad) {
    require_cache(cache, "conv1d", 2);
    const Tensor& input = cache.saved[0];
    const Tensor& kernels = cache.saved[1];
    const std::size_t L = input.dim(0), cin = input.dim(1);
    const std::size_t f = kernels.dim(0), k = kernels.dim(1);
    const std::size_t lout = L - k + 1;
    if (grad.rank() != 2 || grad.dim(0) != lout || grad.dim(1) != f) {
        throw ShapeError("conv1d backward: grad shape " + shape_str(grad.shape()) + ", expected (" +
                         std::to_string(lout) + "," + std::to_string(f) + ")");
    }
    Conv1dGrads g{Tensor({L, cin}), Tensor({f, k, cin}), Tensor({f})};
    for (std::size_t p = 0; p < lout; ++p) {
        for (std::size_t j = 0; j < f; ++j) {
            const double go = grad.at(p, j);
            if (go == 0.0) continue;
            g.bias[j] += go;
            for (std::size_t u = 0; u < k; ++u) {
                for (std::size_t c = 0; c < cin; ++c) {
                    g.input.at(p + u, c) += go * kernels.at(j, u, c);
                    g.kernels.at(j, u, c) += go * input.at(p + u, c);
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// maxpool1d: non-overlapping window-2 max over the first axis, trailing
// element dropped when the length is odd. Ties route to the lower index,
// and the backward sends gradient only to the argmax positions.

inline Tensor maxpool1d(const Tensor& input, OpCache* cache = nullptr) {
    if (input.rank() != 2) {
        throw ShapeError("maxpool1d: want input [L,C], got " + shape_str(input.shape()));
    }
    const std::size_t L = input.dim(0), C = input.dim(1);
    if (L < 2) {
        throw ShapeError("maxpool1d: input length " + std::to_string(L) +
                         " would pool to an empty output");
    }
    const std::size_t lout = L / 2;
    Tensor out({lout, C});
    std::vector<std::size_t> argmax(lout * C);
    for (std::size_t p = 0; p < lout; ++p) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t r0 = 2 * p, r1 = 2 * p + 1;
            const bool first = input.at(r0, c) >= input.at(r1, c);
            out.at(p, c) = first ? input.at(r0, c) : input.at(r1, c);
            argmax[p * C + c] = first ? r0 : r1;
        }
    }
    if (cache) {
        cache->op = "maxpool1d";
        cache->saved = {Tensor({L, C})};  // shape carrier only
        cache->indices = std::move(argmax);
    }
    return out;
}

inline Tensor maxpool1d_backward(const OpCache& cache, const Tensor& grad) {
    require_cache(cache, "maxpool1d", 1);
    const std::size_t L = cache.saved[0].dim(0), C = cache.saved[0].dim(1);
    const std::size_t lout = L / 2;
    if (grad.rank() != 2 || grad.dim(0) != lout || grad.dim(1) != C) {
        throw ShapeError("maxpool1d backward: grad shape " + shape_str(grad.shape()));
    }
    // argmax entries hold the source row index per (p, c)
    Tensor gin({L, C});
    for (std::size_t p = 0; p < lout; ++p) {
        for (std::size_t c = 0; c < C; ++c) {
            gin.at(cache.indices[p * C + c], c) += grad.at(p, c);
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// concat along the final axis; all leading dimensions must agree.

inline Tensor concat(const std::vector<Tensor>& parts, OpCache* cache = nullptr) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const Shape& lead = parts[0].shape();
    std::size_t total_last = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != lead.size() ||
            !std::equal(lead.begin(), lead.end() - 1, p.shape().begin())) {
            throw ShapeError("concat: leading dims differ, " + shape_str(lead) + " vs " +
                             shape_str(p.shape()));
        }
        total_last += p.shape().back();
    }
    Shape out_shape = lead;
    out_shape.back() = total_last;
    Tensor out(out_shape);
    const std::size_t rows = out.size() / total_last;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.shape().back();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) {
                out.values()[r * total_last + offset + j] = p.values()[r * w + j];
            }
        }
        offset += w;
    }
    if (cache) {
        cache->op = "concat";
        cache->saved = {Tensor(out_shape)};
        cache->indices.clear();
        for (const Tensor& p : parts) cache->indices.push_back(p.shape().back());
    }
    return out;
}

/// Splits the output gradient back into per-part gradients by width.
inline std::vector<Tensor> concat_backward(const OpCache& cache, const Tensor& grad) {
    require_cache(cache, "concat", 1);
    if (!grad.same_shape(cache.saved[0])) {
        throw ShapeError("concat backward: grad shape " + shape_str(grad.shape()) + ", expected " +
                         shape_str(cache.saved[0].shape()));
    }
    const std::size_t total_last = grad.shape().back();
    const std::size_t rows = grad.size() / total_last;
    std::vector<Tensor> grads;
    std::size_t offset = 0;
    for (std::size_t w : cache.indices) {
        Shape s = grad.shape();
        s.back() = w;
        Tensor g(s);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) {
                g.values()[r * w + j] = grad.values()[r * total_last + offset + j];
            }
        }
        offset += w;
        grads.push_back(std::move(g));
    }
    return grads;
}

// ---------------------------------------------------------------------------
// activations

enum class Activation { Identity, Relu, Sigmoid, Tanh, Softmax };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
        case Activation::Softmax: return "softmax";
    }
    return "?";
}

/// Elementwise activation; softmax is applied along the final axis.
inline Tensor activate(Activation kind, const Tensor& x, OpCache* cache = nullptr) {
    Tensor out = x;
    switch (kind) {
        case Activation::Identity:
            break;
        case Activation::Relu:
            for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::Sigmoid:
            for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
            break;
        case Activation::Tanh:
            for (double& v : out.values()) v = std::tanh(v);
            break;
        case Activation::Softmax: {
            const std::size_t w = x.shape().back();
            const std::size_t rows = x.size() / w;
            for (std::size_t r = 0; r < rows; ++r) {
                double* row = out.data() + r * w;
                const double mx = *std::max_element(row, row + w);
                double sum = 0.0;
                for (std::size_t j = 0; j < w; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                for (std::size_t j = 0; j < w; ++j) row[j] /= sum;
            }
            break;
        }
    }
    if (cache) {
        cache->op = "activation";
        cache->saved = {out};
        cache->indices = {static_cast<std::size_t>(kind)};
    }
    return out;
}

inline Tensor activate_backward(const OpCache& cache, const Tensor& grad) {
    require_cache(cache, "activation", 1);
    const Tensor& y = cache.saved[0];
    require_same_shape(y, grad, "activation backward");
    const auto kind = static_cast<Activation>(cache.indices.at(0));
    Tensor gin = grad;
    switch (kind) {
        case Activation::Identity:
            break;
        case Activation::Relu:
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = y[i] > 0.0 ? gin[i] : 0.0;
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= y[i] * (1.0 - y[i]);
            break;
        case Activation::Tanh:
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= 1.0 - y[i] * y[i];
            break;
        case Activation::Softmax: {
            const std::size_t w = y.shape().back();
            const std::size_t rows = y.size() / w;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * w;
                const double* gr = grad.data() + r * w;
                double dot = 0.0;
                for (std::size_t j = 0; j < w; ++j) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < w; ++j) gin[r * w + j] = yr[j] * (gr[j] - dot);
            }
            break;
        }
    }
    return gin;
}

}  // namespace granite
