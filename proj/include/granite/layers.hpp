// SPDX-License-Identifier: Apache-2.0
//
// Layer specifications and trainable states for every layer kind the ten
// forecasting models use, with forward/backward passes and closed-form
// parameter counting that matches what build() actually allocates.
//
// Parameter counts per kind (d/y/Cin = input feature count, x/f = units):
//   Conv1D                (k*d + 1) * f
//   Dense / TDDense       p_prev * p_curr + p_curr
//   LSTM                  4 * ((x + y) * x + x)
//   ConvLSTM1D            4 * x * (k * (Cin + x) + 1)
//   pool / flatten / dropout / repeat / concat   0

#pragma once

#include <map>
#include <optional>
#include <random>

#include "granite/core.hpp"

namespace granite {

enum class LayerKind {
    Conv1D,
    MaxPool1D,
    Flatten,
    Dense,
    Dropout,
    LSTM,
    RepeatVector,
    TimeDistributedDense,
    ConvLSTM1D,
    Concatenate,
};

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv1D: return "conv1d";
        case LayerKind::MaxPool1D: return "maxpool1d";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::LSTM: return "lstm";
        case LayerKind::RepeatVector: return "repeat_vector";
        case LayerKind::TimeDistributedDense: return "time_dist_dense";
        case LayerKind::ConvLSTM1D: return "conv_lstm1d";
        case LayerKind::Concatenate: return "concatenate";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t units = 0;       // Dense/TDDense width, LSTM units, Conv1D feature maps, ConvLSTM filters
    std::size_t kernel = 0;      // Conv1D / ConvLSTM1D kernel size
    std::size_t repeat = 0;      // RepeatVector count
    std::size_t time_steps = 0;  // ConvLSTM1D: how many steps the [L,Cin] input splits into
    double rate = 0.0;           // Dropout rate
    bool return_sequences = false;
    Activation activation = Activation::Identity;

    static LayerSpec conv1d(std::size_t f, std::size_t k, Activation act = Activation::Relu) {
        check_positive(f, "feature maps");
        check_positive(k, "kernel size");
        LayerSpec s;
        s.kind = LayerKind::Conv1D;
        s.units = f;
        s.kernel = k;
        s.activation = act;
        return s;
    }
    static LayerSpec maxpool1d() {
        LayerSpec s;
        s.kind = LayerKind::MaxPool1D;
        return s;
    }
    static LayerSpec flatten() {
        LayerSpec s;
        s.kind = LayerKind::Flatten;
        return s;
    }
    static LayerSpec dense(std::size_t units, Activation act = Activation::Relu) {
        check_positive(units, "units");
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.units = units;
        s.activation = act;
        return s;
    }
    static LayerSpec dropout(double rate) {
        if (rate < 0.0 || rate >= 1.0) {
            throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
        }
        LayerSpec s;
        s.kind = LayerKind::Dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec lstm(std::size_t units, bool return_sequences = false) {
        check_positive(units, "units");
        LayerSpec s;
        s.kind = LayerKind::LSTM;
        s.units = units;
        s.return_sequences = return_sequences;
        return s;
    }
    static LayerSpec repeat_vector(std::size_t t) {
        check_positive(t, "repeat count");
        LayerSpec s;
        s.kind = LayerKind::RepeatVector;
        s.repeat = t;
        return s;
    }
    static LayerSpec time_dist_dense(std::size_t units, Activation act = Activation::Relu) {
        check_positive(units, "units");
        LayerSpec s;
        s.kind = LayerKind::TimeDistributedDense;
        s.units = units;
        s.activation = act;
        return s;
    }
    static LayerSpec conv_lstm1d(std::size_t filters, std::size_t k, std::size_t time_steps) {
        check_positive(filters, "filters");
        check_positive(k, "kernel size");
        check_positive(time_steps, "time steps");
        LayerSpec s;
        s.kind = LayerKind::ConvLSTM1D;
        s.units = filters;
        s.kernel = k;
        s.time_steps = time_steps;
        return s;
    }
    static LayerSpec concatenate() {
        LayerSpec s;
        s.kind = LayerKind::Concatenate;
        return s;
    }

private:
    static void check_positive(std::size_t v, const char* what) {
        if (v == 0) throw ConfigError(std::string(what) + " must be >= 1");
    }
};

/// Per-parameter keep/drop mask; a set bit means the weight is pruned and
/// must read exactly 0.
struct PruneMask {
    std::map<std::string, std::vector<std::uint8_t>> by_param;

    bool empty() const {
        for (const auto& [name, m] : by_param) {
            for (std::uint8_t bit : m) {
                if (bit) return false;
            }
        }
        return true;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [name, m] : by_param) {
            for (std::uint8_t bit : m) n += bit ? 1 : 0;
        }
        return n;
    }
};

struct LayerState {
    LayerSpec spec;
    std::map<std::string, Tensor> params;
    PruneMask mask;
    bool frozen = false;
};

// ---------------------------------------------------------------------------
// shape inference

/// Output shape of `spec` applied to `input`. Throws ShapeError on
/// incompatible input. MaxPool1D clamps its window to the available length,
/// so a length-1 input passes through unchanged (the CNN_MULTV_10 case).
inline Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
    auto want_rank = [&](std::size_t r) {
        if (input.size() != r) {
            throw ShapeError(std::string(to_string(spec.kind)) + ": want rank-" + std::to_string(r) +
                             " input, got " + shape_str(input));
        }
    };
    switch (spec.kind) {
        case LayerKind::Conv1D: {
            want_rank(2);
            if (input[0] < spec.kernel) {
                throw ShapeError("conv1d: input length " + std::to_string(input[0]) +
                                 " shorter than kernel " + std::to_string(spec.kernel));
            }
            return {input[0] - spec.kernel + 1, spec.units};
        }
        case LayerKind::MaxPool1D: {
            want_rank(2);
            return {std::max<std::size_t>(input[0] / 2, 1), input[1]};
        }
        case LayerKind::Flatten: {
            std::size_t n = 1;
            for (std::size_t d : input) n *= d;
            return {n};
        }
        case LayerKind::Dense: {
            want_rank(1);
            return {spec.units};
        }
        case LayerKind::Dropout:
        case LayerKind::Concatenate:
            return input;
        case LayerKind::LSTM: {
            want_rank(2);
            if (spec.return_sequences) return {input[0], spec.units};
            return {spec.units};
        }
        case LayerKind::RepeatVector: {
            want_rank(1);
            return {spec.repeat, input[0]};
        }
        case LayerKind::TimeDistributedDense: {
            want_rank(2);
            return {input[0], spec.units};
        }
        case LayerKind::ConvLSTM1D: {
            want_rank(2);
            if (input[0] % spec.time_steps != 0) {
                throw ShapeError("conv_lstm1d: length " + std::to_string(input[0]) +
                                 " not divisible into " + std::to_string(spec.time_steps) + " steps");
            }
            const std::size_t spatial = input[0] / spec.time_steps;
            if (spatial < spec.kernel) {
                throw ShapeError("conv_lstm1d: spatial length " + std::to_string(spatial) +
                                 " shorter than kernel " + std::to_string(spec.kernel));
            }
            return {spatial - spec.kernel + 1, spec.units};
        }
    }
    throw Error("unreachable layer kind");
}

// ---------------------------------------------------------------------------
// parameter counting

/// Trainable-scalar count of `spec` on `input_features` incoming features
/// (channels for conv/recurrent kinds, width for dense kinds).
inline std::size_t count_params(const LayerSpec& spec, std::size_t input_features) {
    const std::size_t d = input_features;
    switch (spec.kind) {
        case LayerKind::Conv1D:
            return (spec.kernel * d + 1) * spec.units;
        case LayerKind::Dense:
        case LayerKind::TimeDistributedDense:
            return d * spec.units + spec.units;
        case LayerKind::LSTM:
            return 4 * ((spec.units + d) * spec.units + spec.units);
        case LayerKind::ConvLSTM1D:
            return 4 * spec.units * (spec.kernel * (d + spec.units) + 1);
        default:
            return 0;
    }
}

/// Feature count a layer hands to count_params, derived from its input shape.
inline std::size_t input_feature_count(const LayerSpec& spec, const Shape& input) {
    switch (spec.kind) {
        case LayerKind::Dense:
            return input.at(0);
        case LayerKind::Conv1D:
        case LayerKind::LSTM:
        case LayerKind::TimeDistributedDense:
        case LayerKind::ConvLSTM1D:
            return input.at(1);
        default:
            return 0;
    }
}

// ---------------------------------------------------------------------------
// build

namespace detail {

inline void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : t.values()) v = dist(rng);
}

}  // namespace detail

/// Allocates and initializes the trainable state for `spec` on `input_shape`:
/// Glorot-uniform weights, zero biases, LSTM-family forget-gate bias 1.0.
/// Deterministic given the rng state. Gate packing order is [i, f, g, o].
inline LayerState build_layer(const LayerSpec& spec, const Shape& input_shape, std::mt19937_64& rng) {
    layer_output_shape(spec, input_shape);  // validates compatibility
    LayerState state;
    state.spec = spec;
    switch (spec.kind) {
        case LayerKind::Conv1D: {
            const std::size_t cin = input_shape[1], f = spec.units, k = spec.kernel;
            Tensor kernels({f, k, cin});
            detail::glorot_fill(kernels, k * cin, k * f, rng);
            state.params.emplace("K", std::move(kernels));
            state.params.emplace("b", Tensor({f}));
            break;
        }
        case LayerKind::Dense:
        case LayerKind::TimeDistributedDense: {
            const std::size_t in = spec.kind == LayerKind::Dense ? input_shape[0] : input_shape[1];
            Tensor w({in, spec.units});
            detail::glorot_fill(w, in, spec.units, rng);
            state.params.emplace("W", std::move(w));
            state.params.emplace("b", Tensor({spec.units}));
            break;
        }
        case LayerKind::LSTM: {
            const std::size_t y = input_shape[1], x = spec.units;
            Tensor wx({y, 4 * x});
            Tensor wh({x, 4 * x});
            detail::glorot_fill(wx, y, 4 * x, rng);
            detail::glorot_fill(wh, x, 4 * x, rng);
            Tensor b({4 * x});
            for (std::size_t j = x; j < 2 * x; ++j) b[j] = 1.0;  // forget gate
            state.params.emplace("Wh", std::move(wh));
            state.params.emplace("Wx", std::move(wx));
            state.params.emplace("b", std::move(b));
            break;
        }
        case LayerKind::ConvLSTM1D: {
            const std::size_t cin = input_shape[1], f = spec.units, k = spec.kernel;
            Tensor wx({4 * f, k, cin});
            Tensor wh({4 * f, k, f});
            detail::glorot_fill(wx, k * cin, k * 4 * f, rng);
            detail::glorot_fill(wh, k * f, k * 4 * f, rng);
            Tensor b({4 * f});
            for (std::size_t j = f; j < 2 * f; ++j) b[j] = 1.0;
            state.params.emplace("Wh", std::move(wh));
            state.params.emplace("Wx", std::move(wx));
            state.params.emplace("b", std::move(b));
            break;
        }
        default:
            break;  // parameterless kinds
    }
    return state;
}

/// Scalars actually allocated; must agree with count_params for every kind.
inline std::size_t allocated_params(const LayerState& state) {
    std::size_t n = 0;
    for (const auto& [name, t] : state.params) n += t.size();
    return n;
}

/// Forces every masked position in the stored parameters to exactly 0.
inline void enforce_mask(LayerState& state) {
    for (auto& [name, bits] : state.mask.by_param) {
        auto it = state.params.find(name);
        if (it == state.params.end()) continue;
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i]) it->second[i] = 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// forward / backward

enum class Mode { Train, Infer };

struct LstmStepCache {
    Tensor x, h_prev, c_prev;
    Tensor gi, gf, gg, go;  // post-nonlinearity gate values
    Tensor c;
};

/// Everything a backward pass needs from its forward. Produced and consumed
/// in matching pairs; layer_backward rejects a cache from a different kind.
struct LayerCache {
    LayerKind kind = LayerKind::Dense;
    Mode mode = Mode::Infer;
    Shape in_shape;
    Tensor input;
    OpCache op;
    OpCache act;
    Tensor dropout_keep;                // keep mask with 1/(1-r) folded in
    std::vector<LstmStepCache> steps;   // recurrent kinds
    bool passthrough = false;           // maxpool clamp case
};

namespace detail {

inline Tensor pad_rows(const Tensor& x, std::size_t left, std::size_t right) {
    const std::size_t rows = x.dim(0), w = x.dim(1);
    Tensor out({rows + left + right, w});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) out.at(r + left, j) = x.at(r, j);
    }
    return out;
}

inline Tensor crop_rows(const Tensor& x, std::size_t left, std::size_t right) {
    const std::size_t rows = x.dim(0) - left - right, w = x.dim(1);
    Tensor out({rows, w});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) out.at(r, j) = x.at(r + left, j);
    }
    return out;
}

inline Tensor row_of(const Tensor& seq, std::size_t t) {
    const std::size_t w = seq.dim(1);
    Tensor out({w});
    for (std::size_t j = 0; j < w; ++j) out[j] = seq.at(t, j);
    return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

inline Tensor layer_forward(const LayerState& state, const Tensor& input, Mode mode,
                            std::mt19937_64* rng = nullptr, LayerCache* cache = nullptr) {
    const LayerSpec& spec = state.spec;
    layer_output_shape(spec, input.shape());  // shape validation up front
    if (cache) {
        *cache = LayerCache{};
        cache->kind = spec.kind;
        cache->mode = mode;
        cache->in_shape = input.shape();
    }
    switch (spec.kind) {
        case LayerKind::Conv1D: {
            OpCache conv_cache;
            Tensor pre = conv1d(input, state.params.at("K"), state.params.at("b"),
                                cache ? &conv_cache : nullptr);
            OpCache act_cache;
            Tensor out = activate(spec.activation, pre, cache ? &act_cache : nullptr);
            if (cache) {
                cache->op = std::move(conv_cache);
                cache->act = std::move(act_cache);
            }
            return out;
        }
        case LayerKind::MaxPool1D: {
            if (input.dim(0) < 2) {  // window clamps to length 1: identity
                if (cache) cache->passthrough = true;
                return input;
            }
            OpCache pool_cache;
            Tensor out = maxpool1d(input, cache ? &pool_cache : nullptr);
            if (cache) cache->op = std::move(pool_cache);
            return out;
        }
        case LayerKind::Flatten:
            return input.reshaped({input.size()});
        case LayerKind::Dense: {
            const Tensor& w = state.params.at("W");
            const Tensor& b = state.params.at("b");
            const std::size_t in = w.dim(0), out_n = w.dim(1);
            Tensor pre({out_n});
            for (std::size_t j = 0; j < out_n; ++j) pre[j] = b[j];
            for (std::size_t i = 0; i < in; ++i) {
                const double xv = input[i];
                if (xv == 0.0) continue;
                for (std::size_t j = 0; j < out_n; ++j) pre[j] += xv * w.at(i, j);
            }
            OpCache act_cache;
            Tensor out = activate(spec.activation, pre, cache ? &act_cache : nullptr);
            if (cache) {
                cache->input = input;
                cache->act = std::move(act_cache);
            }
            return out;
        }
        case LayerKind::Dropout: {
            if (mode == Mode::Infer || spec.rate == 0.0) {
                if (cache) cache->passthrough = true;
                return input;
            }
            if (!rng) throw ConfigError("dropout in train mode needs an rng");
            std::uniform_real_distribution<double> u(0.0, 1.0);
            const double scale = 1.0 / (1.0 - spec.rate);
            Tensor keep(input.shape());
            Tensor out(input.shape());
            for (std::size_t i = 0; i < input.size(); ++i) {
                keep[i] = u(*rng) < spec.rate ? 0.0 : scale;
                out[i] = input[i] * keep[i];
            }
            if (cache) cache->dropout_keep = std::move(keep);
            return out;
        }
        case LayerKind::LSTM:
        case LayerKind::ConvLSTM1D:
            break;  // handled below
        case LayerKind::RepeatVector: {
            const std::size_t n = input.dim(0);
            Tensor out({spec.repeat, n});
            for (std::size_t t = 0; t < spec.repeat; ++t) {
                for (std::size_t j = 0; j < n; ++j) out.at(t, j) = input[j];
            }
            return out;
        }
        case LayerKind::TimeDistributedDense: {
            OpCache mm_cache;
            Tensor pre = matmul(input, state.params.at("W"), cache ? &mm_cache : nullptr);
            const Tensor& b = state.params.at("b");
            for (std::size_t t = 0; t < pre.dim(0); ++t) {
                for (std::size_t j = 0; j < pre.dim(1); ++j) pre.at(t, j) += b[j];
            }
            OpCache act_cache;
            Tensor out = activate(spec.activation, pre, cache ? &act_cache : nullptr);
            if (cache) {
                cache->op = std::move(mm_cache);
                cache->act = std::move(act_cache);
            }
            return out;
        }
        case LayerKind::Concatenate:
            if (cache) cache->passthrough = true;
            return input;
    }

    if (spec.kind == LayerKind::LSTM) {
        const Tensor& wx = state.params.at("Wx");
        const Tensor& wh = state.params.at("Wh");
        const Tensor& b = state.params.at("b");
        const std::size_t T = input.dim(0), y = input.dim(1), x = spec.units;
        Tensor h({x});
        Tensor c({x});
        Tensor seq_out = spec.return_sequences ? Tensor({T, x}) : Tensor();
        for (std::size_t t = 0; t < T; ++t) {
            Tensor z({4 * x});
            for (std::size_t q = 0; q < 4 * x; ++q) z[q] = b[q];
            for (std::size_t i = 0; i < y; ++i) {
                const double xv = input.at(t, i);
                if (xv == 0.0) continue;
                for (std::size_t q = 0; q < 4 * x; ++q) z[q] += xv * wx.at(i, q);
            }
            for (std::size_t r = 0; r < x; ++r) {
                const double hv = h[r];
                if (hv == 0.0) continue;
                for (std::size_t q = 0; q < 4 * x; ++q) z[q] += hv * wh.at(r, q);
            }
            LstmStepCache step;
            if (cache) {
                step.x = detail::row_of(input, t);
                step.h_prev = h;
                step.c_prev = c;
            }
            Tensor gi({x}), gf({x}), gg({x}), go({x});
            Tensor c_new({x});
            for (std::size_t j = 0; j < x; ++j) {
                gi[j] = detail::sigmoid(z[j]);
                gf[j] = detail::sigmoid(z[x + j]);
                gg[j] = std::tanh(z[2 * x + j]);
                go[j] = detail::sigmoid(z[3 * x + j]);
                c_new[j] = gf[j] * c[j] + gi[j] * gg[j];
            }
            c = c_new;
            for (std::size_t j = 0; j < x; ++j) h[j] = go[j] * std::tanh(c[j]);
            if (cache) {
                step.gi = std::move(gi);
                step.gf = std::move(gf);
                step.gg = std::move(gg);
                step.go = std::move(go);
                step.c = c;
                cache->steps.push_back(std::move(step));
            }
            if (spec.return_sequences) {
                for (std::size_t j = 0; j < x; ++j) seq_out.at(t, j) = h[j];
            }
        }
        return spec.return_sequences ? seq_out : h;
    }

    // ConvLSTM1D: input [T*S, Cin] treated as T steps of a length-S map.
    // Gate maps come from a valid conv of the step input (spatial S -> S')
    // plus a same-padded conv of the previous hidden map (S' -> S').
    const Tensor& wx = state.params.at("Wx");
    const Tensor& wh = state.params.at("Wh");
    const Tensor& b = state.params.at("b");
    const std::size_t T = spec.time_steps;
    const std::size_t S = input.dim(0) / T;
    const std::size_t cin = input.dim(1), f = spec.units, k = spec.kernel;
    const std::size_t sp = S - k + 1;
    const std::size_t pad_l = (k - 1) / 2, pad_r = k - 1 - pad_l;
    Tensor h({sp, f});
    Tensor c({sp, f});
    const Tensor zero_bias({4 * f});
    for (std::size_t t = 0; t < T; ++t) {
        Tensor x_t({S, cin});
        for (std::size_t r = 0; r < S; ++r) {
            for (std::size_t cc = 0; cc < cin; ++cc) x_t.at(r, cc) = input.at(t * S + r, cc);
        }
        Tensor z = conv1d(x_t, wx, b);
        Tensor zh = conv1d(detail::pad_rows(h, pad_l, pad_r), wh, zero_bias);
        add_inplace(z, zh);
        LstmStepCache step;
        if (cache) {
            step.x = x_t;
            step.h_prev = h;
            step.c_prev = c;
        }
        Tensor gi({sp, f}), gf({sp, f}), gg({sp, f}), go({sp, f});
        Tensor c_new({sp, f});
        for (std::size_t r = 0; r < sp; ++r) {
            for (std::size_t j = 0; j < f; ++j) {
                gi.at(r, j) = detail::sigmoid(z.at(r, j));
                gf.at(r, j) = detail::sigmoid(z.at(r, f + j));
                gg.at(r, j) = std::tanh(z.at(r, 2 * f + j));
                go.at(r, j) = detail::sigmoid(z.at(r, 3 * f + j));
                c_new.at(r, j) = gf.at(r, j) * c.at(r, j) + gi.at(r, j) * gg.at(r, j);
            }
        }
        c = c_new;
        for (std::size_t r = 0; r < sp; ++r) {
            for (std::size_t j = 0; j < f; ++j) h.at(r, j) = go.at(r, j) * std::tanh(c.at(r, j));
        }
        if (cache) {
            step.gi = std::move(gi);
            step.gf = std::move(gf);
            step.gg = std::move(gg);
            step.go = std::move(go);
            step.c = c;
            cache->steps.push_back(std::move(step));
        }
    }
    return h;
}

struct LayerGrads {
    Tensor input;
    std::map<std::string, Tensor> params;
};

inline LayerGrads lstm_backward(const LayerState& state, const LayerCache& cache,
                                const Tensor& grad_out);
inline LayerGrads conv_lstm_backward(const LayerState& state, const LayerCache& cache,
                                     const Tensor& grad_out);

namespace detail {

inline void zero_masked(const LayerState& state, LayerGrads& grads) {
    if (state.frozen) {
        for (auto& [name, g] : grads.params) std::fill(g.values().begin(), g.values().end(), 0.0);
        return;
    }
    for (const auto& [name, bits] : state.mask.by_param) {
        auto it = grads.params.find(name);
        if (it == grads.params.end()) continue;
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i]) it->second[i] = 0.0;
        }
    }
}

}  // namespace detail

/// Exact chain-rule gradients for one layer. grad_params carries a zero
/// tensor at masked positions and is entirely zero for frozen layers.
inline LayerGrads layer_backward(const LayerState& state, const LayerCache& cache,
                                 const Tensor& grad_out) {
    const LayerSpec& spec = state.spec;
    if (cache.kind != spec.kind) {
        throw Error(std::string("layer_backward: cache from ") + to_string(cache.kind) +
                    " used with " + to_string(spec.kind));
    }
    LayerGrads grads;
    switch (spec.kind) {
        case LayerKind::Conv1D: {
            Tensor gpre = activate_backward(cache.act, grad_out);
            Conv1dGrads cg = conv1d_backward(cache.op, gpre);
            grads.input = std::move(cg.input);
            grads.params.emplace("K", std::move(cg.kernels));
            grads.params.emplace("b", std::move(cg.bias));
            break;
        }
        case LayerKind::MaxPool1D: {
            grads.input = cache.passthrough ? grad_out : maxpool1d_backward(cache.op, grad_out);
            break;
        }
        case LayerKind::Flatten: {
            grads.input = grad_out.reshaped(cache.in_shape);
            break;
        }
        case LayerKind::Dense: {
            Tensor gpre = activate_backward(cache.act, grad_out);
            const Tensor& w = state.params.at("W");
            const std::size_t in = w.dim(0), out_n = w.dim(1);
            Tensor gin({in});
            Tensor gw({in, out_n});
            for (std::size_t i = 0; i < in; ++i) {
                const double xv = cache.input[i];
                double acc = 0.0;
                for (std::size_t j = 0; j < out_n; ++j) {
                    acc += gpre[j] * w.at(i, j);
                    gw.at(i, j) = gpre[j] * xv;
                }
                gin[i] = acc;
            }
            grads.input = std::move(gin);
            grads.params.emplace("W", std::move(gw));
            grads.params.emplace("b", std::move(gpre));
            break;
        }
        case LayerKind::Dropout: {
            if (cache.passthrough) {
                grads.input = grad_out;
            } else {
                Tensor gin = grad_out;
                for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= cache.dropout_keep[i];
                grads.input = std::move(gin);
            }
            break;
        }
        case LayerKind::LSTM: {
            grads = lstm_backward(state, cache, grad_out);
            break;
        }
        case LayerKind::RepeatVector: {
            const std::size_t n = cache.in_shape[0];
            Tensor gin({n});
            for (std::size_t t = 0; t < spec.repeat; ++t) {
                for (std::size_t j = 0; j < n; ++j) gin[j] += grad_out.at(t, j);
            }
            grads.input = std::move(gin);
            break;
        }
        case LayerKind::TimeDistributedDense: {
            Tensor gpre = activate_backward(cache.act, grad_out);
            auto [gin, gw] = matmul_backward(cache.op, gpre);
            Tensor gb({gpre.dim(1)});
            for (std::size_t t = 0; t < gpre.dim(0); ++t) {
                for (std::size_t j = 0; j < gpre.dim(1); ++j) gb[j] += gpre.at(t, j);
            }
            grads.input = std::move(gin);
            grads.params.emplace("W", std::move(gw));
            grads.params.emplace("b", std::move(gb));
            break;
        }
        case LayerKind::Concatenate: {
            grads.input = grad_out;
            break;
        }
        case LayerKind::ConvLSTM1D: {
            grads = conv_lstm_backward(state, cache, grad_out);
            break;
        }
    }
    detail::zero_masked(state, grads);
    return grads;
}

// Backpropagation through time over the cached steps. Gradient arrives at
// the final hidden state only, or at every step when return_sequences.
inline LayerGrads lstm_backward(const LayerState& state, const LayerCache& cache,
                                const Tensor& grad_out) {
    const LayerSpec& spec = state.spec;
    const Tensor& wx = state.params.at("Wx");
    const Tensor& wh = state.params.at("Wh");
    const std::size_t T = cache.steps.size();
    if (T == 0) throw Error("lstm backward: cache holds no steps");
    const std::size_t y = wx.dim(0), x = spec.units;
    Tensor g_wx({y, 4 * x}), g_wh({x, 4 * x}), g_b({4 * x});
    Tensor g_in({T, y});
    Tensor dh({x}), dc({x});
    for (std::size_t ti = T; ti-- > 0;) {
        const LstmStepCache& st = cache.steps[ti];
        if (spec.return_sequences) {
            for (std::size_t j = 0; j < x; ++j) dh[j] += grad_out.at(ti, j);
        } else if (ti == T - 1) {
            for (std::size_t j = 0; j < x; ++j) dh[j] += grad_out[j];
        }
        Tensor dz({4 * x});
        for (std::size_t j = 0; j < x; ++j) {
            const double tc = std::tanh(st.c[j]);
            const double d_o = dh[j] * tc;
            double d_c = dh[j] * st.go[j] * (1.0 - tc * tc) + dc[j];
            const double d_i = d_c * st.gg[j];
            const double d_g = d_c * st.gi[j];
            const double d_f = d_c * st.c_prev[j];
            dz[j] = d_i * st.gi[j] * (1.0 - st.gi[j]);
            dz[x + j] = d_f * st.gf[j] * (1.0 - st.gf[j]);
            dz[2 * x + j] = d_g * (1.0 - st.gg[j] * st.gg[j]);
            dz[3 * x + j] = d_o * st.go[j] * (1.0 - st.go[j]);
            dc[j] = d_c * st.gf[j];
        }
        for (std::size_t q = 0; q < 4 * x; ++q) {
            const double dzq = dz[q];
            if (dzq == 0.0) continue;
            g_b[q] += dzq;
            for (std::size_t i = 0; i < y; ++i) g_wx.at(i, q) += st.x[i] * dzq;
            for (std::size_t r = 0; r < x; ++r) g_wh.at(r, q) += st.h_prev[r] * dzq;
        }
        for (std::size_t i = 0; i < y; ++i) {
            double acc = 0.0;
            for (std::size_t q = 0; q < 4 * x; ++q) acc += dz[q] * wx.at(i, q);
            g_in.at(ti, i) = acc;
        }
        for (std::size_t r = 0; r < x; ++r) {
            double acc = 0.0;
            for (std::size_t q = 0; q < 4 * x; ++q) acc += dz[q] * wh.at(r, q);
            dh[r] = acc;  // becomes grad into h_{t-1}
        }
    }
    LayerGrads grads;
    grads.input = std::move(g_in);
    grads.params.emplace("Wh", std::move(g_wh));
    grads.params.emplace("Wx", std::move(g_wx));
    grads.params.emplace("b", std::move(g_b));
    return grads;
}

inline LayerGrads conv_lstm_backward(const LayerState& state, const LayerCache& cache,
                                     const Tensor& grad_out) {
    const LayerSpec& spec = state.spec;
    const Tensor& wx = state.params.at("Wx");
    const Tensor& wh = state.params.at("Wh");
    const std::size_t T = cache.steps.size();
    if (T == 0) throw Error("conv_lstm backward: cache holds no steps");
    const std::size_t f = spec.units, k = spec.kernel;
    const std::size_t cin = wx.dim(2);
    const std::size_t S = cache.in_shape[0] / T;
    const std::size_t sp = S - k + 1;
    const std::size_t pad_l = (k - 1) / 2, pad_r = k - 1 - pad_l;
    Tensor g_wx({4 * f, k, cin}), g_wh({4 * f, k, f}), g_b({4 * f});
    Tensor g_in({T * S, cin});
    Tensor dh({sp, f}), dc({sp, f});
    for (std::size_t ti = T; ti-- > 0;) {
        const LstmStepCache& st = cache.steps[ti];
        if (ti == T - 1) add_inplace(dh, grad_out);
        Tensor dz({sp, 4 * f});
        for (std::size_t r = 0; r < sp; ++r) {
            for (std::size_t j = 0; j < f; ++j) {
                const double tc = std::tanh(st.c.at(r, j));
                const double d_o = dh.at(r, j) * tc;
                double d_c = dh.at(r, j) * st.go.at(r, j) * (1.0 - tc * tc) + dc.at(r, j);
                const double d_i = d_c * st.gg.at(r, j);
                const double d_g = d_c * st.gi.at(r, j);
                const double d_f = d_c * st.c_prev.at(r, j);
                dz.at(r, j) = d_i * st.gi.at(r, j) * (1.0 - st.gi.at(r, j));
                dz.at(r, f + j) = d_f * st.gf.at(r, j) * (1.0 - st.gf.at(r, j));
                dz.at(r, 2 * f + j) = d_g * (1.0 - st.gg.at(r, j) * st.gg.at(r, j));
                dz.at(r, 3 * f + j) = d_o * st.go.at(r, j) * (1.0 - st.go.at(r, j));
                dc.at(r, j) = d_c * st.gf.at(r, j);
            }
        }
        // input conv side
        {
            OpCache cc;
            cc.op = "conv1d";
            cc.saved = {st.x, wx};
            Conv1dGrads cg = conv1d_backward(cc, dz);
            for (std::size_t r = 0; r < S; ++r) {
                for (std::size_t c2 = 0; c2 < cin; ++c2) g_in.at(ti * S + r, c2) = cg.input.at(r, c2);
            }
            add_inplace(g_wx, cg.kernels);
            add_inplace(g_b, cg.bias);
        }
        // recurrent conv side
        {
            OpCache cc;
            cc.op = "conv1d";
            cc.saved = {detail::pad_rows(st.h_prev, pad_l, pad_r), wh};
            Conv1dGrads cg = conv1d_backward(cc, dz);
            add_inplace(g_wh, cg.kernels);
            dh = detail::crop_rows(cg.input, pad_l, pad_r);
        }
    }
    LayerGrads grads;
    grads.input = std::move(g_in);
    grads.params.emplace("Wh", std::move(g_wh));
    grads.params.emplace("Wx", std::move(g_wx));
    grads.params.emplace("b", std::move(g_b));
    return grads;
}

}  // namespace granite
