// SPDX-License-Identifier: Apache-2.0
//
// Adam with decoupled weight decay, the MSE / cross-entropy losses, and the
// seeded epoch/mini-batch loop shared by the forecasting and progressive
// experiments. A train run owns its graph; distinct runs derive independent
// RNG streams so schedules cannot leak into results.

#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "granite/model.hpp"

namespace granite {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void validate() const {
        if (lr <= 0.0) throw ConfigError("adam: lr must be > 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ConfigError("adam: betas must lie in [0,1)");
        }
        if (eps <= 0.0) throw ConfigError("adam: eps must be > 0");
        if (weight_decay < 0.0) throw ConfigError("adam: weight decay must be >= 0");
    }

    /// Continual-training settings: lr 1e-3, beta1 0.99 (as printed; see the
    /// beta1 knob), beta2 0.999, decoupled weight decay 1e-3.
    static AdamConfig progressive() { return {0.001, 0.99, 0.999, 1e-8, 0.001}; }
};

/// First/second moments aligned with list_params order.
struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t step = 0;

    static AdamState for_graph(const ModelGraph& g) {
        AdamState s;
        for (const ParamRef& r : list_params(g)) {
            s.m.emplace_back(param_tensor(g, r).shape());
            s.v.emplace_back(param_tensor(g, r).shape());
        }
        return s;
    }
};

/// One bias-corrected Adam update of a single tensor. Decoupled weight decay
/// is applied before the update; masked positions are forced back to exactly
/// 0 afterwards.
inline void adam_update(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, std::int64_t t,
                        const AdamConfig& cfg, const std::vector<std::uint8_t>* mask = nullptr) {
    require_same_shape(w, g, "adam_update");
    require_same_shape(w, m, "adam_update moments");
    if (t < 1) throw ConfigError("adam_update: step index must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (cfg.weight_decay != 0.0) w[i] -= cfg.lr * cfg.weight_decay * w[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        w[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
        if (mask && (*mask)[i]) w[i] = 0.0;
    }
}

/// Whole-graph Adam step. Frozen layers/blocks are untouched (their moments
/// do not advance either).
inline void adam_step(ModelGraph& g, const std::vector<Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg) {
    cfg.validate();
    const auto refs = list_params(g);
    if (grads.size() != refs.size() || state.m.size() != refs.size()) {
        throw ShapeError("adam_step: got " + std::to_string(grads.size()) + " grads / " +
                         std::to_string(state.m.size()) + " moments for " +
                         std::to_string(refs.size()) + " parameters");
    }
    ++state.step;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const ParamRef& r = refs[i];
        if (r.frozen || param_layer(g, r).frozen) continue;
        adam_update(param_tensor(g, r), grads[i], state.m[i], state.v[i], state.step, cfg,
                    param_mask(g, r));
    }
}

// ---------------------------------------------------------------------------
// losses

enum class LossKind { MSE, CrossEntropy };

inline const char* to_string(LossKind k) {
    return k == LossKind::MSE ? "mse" : "cross_entropy";
}

struct LossResult {
    double value = 0.0;
    Tensor grad;
};

/// Mean-reduced loss and its exact gradient w.r.t. the prediction.
/// CrossEntropy expects probabilities (a softmax output); the target is
/// either one-hot with the prediction's shape or a class-index tensor with
/// one entry per row.
inline LossResult loss(LossKind kind, const Tensor& pred, const Tensor& target) {
    LossResult res;
    res.grad = Tensor(pred.shape());
    if (kind == LossKind::MSE) {
        require_same_shape(pred, target, "mse");
        const double n = static_cast<double>(pred.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - target[i];
            res.value += d * d / n;
            res.grad[i] = 2.0 * d / n;
        }
        return res;
    }
    const std::size_t klass = pred.shape().back();
    const std::size_t rows = pred.size() / klass;
    constexpr double kFloor = 1e-12;
    if (target.same_shape(pred)) {  // one-hot (or soft) targets
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < klass; ++j) {
                const double t = target[r * klass + j];
                if (t == 0.0) continue;
                const double p = std::max(pred[r * klass + j], kFloor);
                res.value -= t * std::log(p) / static_cast<double>(rows);
                res.grad[r * klass + j] = -t / p / static_cast<double>(rows);
            }
        }
        return res;
    }
    if (target.size() != rows) {
        throw ShapeError("cross_entropy: target shape " + shape_str(target.shape()) +
                         " fits neither one-hot nor class-index form for prediction " +
                         shape_str(pred.shape()));
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double raw = target[r];
        const auto cls = static_cast<std::size_t>(raw);
        if (raw < 0.0 || cls >= klass || static_cast<double>(cls) != raw) {
            throw DataError("cross_entropy: class index " + std::to_string(raw) + " out of range");
        }
        const double p = std::max(pred[r * klass + cls], kFloor);
        res.value -= std::log(p) / static_cast<double>(rows);
        res.grad[r * klass + cls] = -1.0 / p / static_cast<double>(rows);
    }
    return res;
}

// ---------------------------------------------------------------------------
// datasets as tensors

/// X is [N, ...sample shape]; y is [N, out] for regression or [N] class
/// indices for classification.
struct Samples {
    Tensor X;
    Tensor y;

    std::size_t count() const { return X.empty() ? 0 : X.dim(0); }
};

inline Tensor sample_x(const Samples& s, std::size_t i) {
    Shape shape(s.X.shape().begin() + 1, s.X.shape().end());
    if (shape.empty()) shape = {1};
    const std::size_t stride = s.X.size() / s.X.dim(0);
    Tensor out(shape);
    for (std::size_t j = 0; j < stride; ++j) out[j] = s.X.values()[i * stride + j];
    return out;
}

inline Tensor sample_y(const Samples& s, std::size_t i) {
    const std::size_t stride = s.y.size() / s.y.dim(0);
    Tensor out({stride});
    for (std::size_t j = 0; j < stride; ++j) out[j] = s.y.values()[i * stride + j];
    return out;
}

enum class Metric { Accuracy, NegRmse };

inline const char* to_string(Metric m) {
    return m == Metric::Accuracy ? "accuracy" : "neg_rmse";
}

/// Inference-mode metric over a sample set. Accuracy takes argmax of the
/// flattened output against a class-index (or one-hot) target; neg_rmse is
/// the negated root mean squared error so that larger is always better.
inline double evaluate(const ModelGraph& g, const Samples& data, Metric metric) {
    if (data.count() == 0) throw DataError("evaluate: empty sample set");
    double acc = 0.0;
    for (std::size_t i = 0; i < data.count(); ++i) {
        Tensor out = graph_forward(g, sample_x(data, i), Mode::Infer);
        Tensor target = sample_y(data, i);
        if (metric == Metric::Accuracy) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < out.size(); ++j) {
                if (out[j] > out[best]) best = j;
            }
            std::size_t want;
            if (target.size() == 1) {
                want = static_cast<std::size_t>(target[0]);
            } else {
                want = 0;
                for (std::size_t j = 1; j < target.size(); ++j) {
                    if (target[j] > target[want]) want = j;
                }
            }
            acc += best == want ? 1.0 : 0.0;
        } else {
            if (out.size() != target.size()) {
                throw ShapeError("evaluate: output size " + std::to_string(out.size()) +
                                 " vs target " + std::to_string(target.size()));
            }
            for (std::size_t j = 0; j < out.size(); ++j) {
                const double d = out[j] - target[j];
                acc += d * d;
            }
        }
    }
    if (metric == Metric::Accuracy) return acc / static_cast<double>(data.count());
    const std::size_t per = sample_y(data, 0).size();
    return -std::sqrt(acc / static_cast<double>(data.count() * per));
}

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    LossKind loss_kind = LossKind::MSE;
    bool shuffle = true;
    Metric val_metric = Metric::NegRmse;
};

struct EpochStat {
    double train_loss = 0.0;
    std::optional<double> val_metric;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochStat> epochs;
};

/// Seeded mini-batch training. The shuffle stream depends only on
/// (seed, epoch); the last short batch is kept. A non-finite loss aborts
/// with epoch/batch diagnostics rather than propagating NaNs.
inline TrainLog train(ModelGraph& g, const Samples& data, const TrainConfig& cfg,
                      const AdamConfig& adam, const Samples* validation = nullptr,
                      AdamState* opt_state = nullptr) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (data.count() == 0) throw DataError("train: empty dataset");
    adam.validate();

    AdamState local;
    AdamState& opt = opt_state ? *opt_state : local;
    const auto refs = list_params(g);
    if (opt.m.empty()) {
        opt = AdamState::for_graph(g);
    } else if (opt.m.size() != refs.size()) {
        throw ShapeError("train: optimizer state holds " + std::to_string(opt.m.size()) +
                         " moments for " + std::to_string(refs.size()) + " parameters");
    }

    const std::size_t n = data.count();
    std::vector<std::size_t> order(n);
    TrainLog log;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        if (cfg.shuffle) {
            std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 1000 + epoch));
            std::shuffle(order.begin(), order.end(), shuffle_rng);
        }
        std::mt19937_64 dropout_rng(mix_seed(cfg.seed, 5000 + epoch));

        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            std::vector<Tensor> grad_sum;
            grad_sum.reserve(refs.size());
            for (const ParamRef& r : refs) grad_sum.emplace_back(param_tensor(g, r).shape());
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                GraphCache cache;
                Tensor out = graph_forward(g, sample_x(data, i), Mode::Train, &dropout_rng, &cache);
                LossResult l = loss(cfg.loss_kind, out, sample_y(data, i));
                batch_loss += l.value;
                GraphGrads grads = graph_backward(g, cache, l.grad);
                for (std::size_t p = 0; p < refs.size(); ++p) add_inplace(grad_sum[p], grads.params[p]);
            }
            const double count = static_cast<double>(end - start);
            if (!std::isfinite(batch_loss)) {
                throw NumericError("non-finite loss " + std::to_string(batch_loss / count) +
                                   " at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            }
            for (Tensor& t : grad_sum) scale_inplace(t, 1.0 / count);
            adam_step(g, grad_sum, opt, adam);
            epoch_loss += batch_loss;
        }
        EpochStat stat;
        stat.train_loss = epoch_loss / static_cast<double>(n);
        if (validation && validation->count() > 0) {
            stat.val_metric = evaluate(g, *validation, cfg.val_metric);
        }
        stat.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(stat);
    }
    return log;
}

}  // namespace granite
