// SPDX-License-Identifier: Apache-2.0
//
// Week-by-week multi-step evaluation: predict the coming week's five opens,
// then fold the week's actuals into the training window and move on. Every
// record the model sees during the walk flows through one instrumented
// reader, so tests can prove nothing from the future leaks in. Metrics are
// computed in original price units after inverse scaling.

#pragma once

#include <atomic>
#include <functional>
#include <future>
#include <thread>

#include "granite/data.hpp"

namespace granite {

/// (target week being predicted, record index read) pairs, in read order.
/// The causality contract: every read for target week w has index < w*5.
struct AccessLog {
    std::vector<std::pair<std::size_t, std::size_t>> reads;
};

enum class RefitPolicy { None, Incremental, Full };

inline const char* to_string(RefitPolicy p) {
    switch (p) {
        case RefitPolicy::None: return "none";
        case RefitPolicy::Incremental: return "incremental";
        case RefitPolicy::Full: return "full";
    }
    return "?";
}

struct WalkForwardConfig {
    ModelId model = ModelId::CNN_UNIV_5;
    std::size_t rounds = 10;
    std::uint64_t base_seed = 0;
    RefitPolicy refit = RefitPolicy::None;
    std::size_t refit_epochs = 1;  // incremental only
    std::optional<std::size_t> epochs;      // override the model's train_config
    std::optional<std::size_t> batch_size;  // override the model's train_config
    std::size_t jobs = 1;

    void validate() const {
        if (rounds < 1) throw ConfigError("walkforward: rounds must be >= 1");
        if (refit == RefitPolicy::Incremental && refit_epochs < 1) {
            throw ConfigError("walkforward: incremental refit needs epochs >= 1");
        }
    }
};

struct WeekForecast {
    std::size_t week = 0;
    std::array<double, kWeekLen> pred{};
    std::array<double, kWeekLen> actual{};
};

struct WalkMetrics {
    double agg_rmse = 0.0;
    std::array<double, kWeekLen> day_rmse{};
    double ratio = 0.0;
};

struct WalkForwardReport {
    std::vector<WeekForecast> weeks;
    WalkMetrics metrics;
    double wall_seconds = 0.0;
};

struct RoundSummary {
    std::vector<WalkForwardReport> rounds;
    WalkMetrics mean;
    double mean_wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// metrics

/// Aggregate RMSE over all (week, day) cells, per-day RMSE across weeks at
/// each forecast position, and the RMSE / mean-actual ratio.
inline WalkMetrics metrics(const std::vector<std::array<double, kWeekLen>>& preds,
                           const std::vector<std::array<double, kWeekLen>>& actuals) {
    if (preds.empty() || preds.size() != actuals.size()) {
        throw ShapeError("metrics: got " + std::to_string(preds.size()) + " prediction weeks vs " +
                         std::to_string(actuals.size()) + " actual weeks");
    }
    WalkMetrics m;
    const double weeks = static_cast<double>(preds.size());
    double total_sq = 0.0;
    double mean_actual = 0.0;
    for (std::size_t d = 0; d < kWeekLen; ++d) {
        double day_sq = 0.0;
        for (std::size_t w = 0; w < preds.size(); ++w) {
            const double e = preds[w][d] - actuals[w][d];
            day_sq += e * e;
            mean_actual += actuals[w][d];
        }
        m.day_rmse[d] = std::sqrt(day_sq / weeks);
        total_sq += day_sq;
    }
    m.agg_rmse = std::sqrt(total_sq / (weeks * kWeekLen));
    mean_actual /= weeks * kWeekLen;
    if (mean_actual == 0.0) throw DataError("metrics: mean actual is zero, ratio undefined");
    m.ratio = m.agg_rmse / mean_actual;
    return m;
}

// ---------------------------------------------------------------------------
// the walk skeleton

/// Predicts the 5 scaled opens of `target_week` from the supplied scaled
/// input window.
using PredictFn = std::function<Tensor(const Tensor& scaled_input, std::size_t target_week)>;

/// Called after a test week's actuals joined the training window; the next
/// prediction target is passed so refits can assemble their data through
/// the instrumented reader.
using ExtendFn = std::function<void(std::size_t next_target_week)>;

namespace detail {

inline double read_scaled(const SeriesDataset& ds, std::size_t record_index, std::size_t feature,
                          std::size_t target_week, AccessLog* log) {
    if (log) log->reads.emplace_back(target_week, record_index);
    return ds.scaler.apply(field(ds.records[record_index], feature), feature);
}

/// Scaled input window covering the `lookback` weeks before `target_week`.
inline Tensor assemble_input(const SeriesDataset& ds, std::size_t target_week, std::size_t lookback,
                             bool multivariate, AccessLog* log) {
    const std::size_t t_len = lookback * kWeekLen;
    const std::size_t c = multivariate ? kFeatureCount : 1;
    const std::size_t base = (target_week - lookback) * kWeekLen;
    Tensor x({t_len, c});
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t f = 0; f < c; ++f) {
            x.at(t, f) = read_scaled(ds, base + t, f, target_week, log);
        }
    }
    return x;
}

/// Training samples whose target weeks lie in [lookback, visible_weeks),
/// assembled through the instrumented reader on behalf of `target_week`.
inline Samples assemble_training(const SeriesDataset& ds, std::size_t visible_weeks,
                                 std::size_t lookback, bool multivariate, std::size_t target_week,
                                 AccessLog* log) {
    if (visible_weeks <= lookback) {
        throw DataError("insufficient history: " + std::to_string(visible_weeks) +
                        " visible weeks with lookback " + std::to_string(lookback));
    }
    const std::size_t n = visible_weeks - lookback;
    const std::size_t t_len = lookback * kWeekLen;
    const std::size_t c = multivariate ? kFeatureCount : 1;
    Samples s;
    s.X = Tensor({n, t_len, c});
    s.y = Tensor({n, kWeekLen});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t tw = lookback + i;
        const std::size_t base = (tw - lookback) * kWeekLen;
        for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t f = 0; f < c; ++f) {
                s.X.at(i, t, f) = read_scaled(ds, base + t, f, target_week, log);
            }
        }
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            s.y.at(i, d) = read_scaled(ds, tw * kWeekLen + d, 0, target_week, log);
        }
    }
    return s;
}

}  // namespace detail

/// The protocol skeleton: walk the test weeks in order, predict, record,
/// extend. Predictions and actuals are reported in original price units.
inline WalkForwardReport walk_forecast(const SeriesDataset& ds, std::size_t lookback,
                                       bool multivariate, const PredictFn& predict_week,
                                       const ExtendFn& extend = {}, AccessLog* log = nullptr) {
    if (ds.split_week < lookback) {
        throw DataError("insufficient history: split week " + std::to_string(ds.split_week) +
                        " < lookback " + std::to_string(lookback));
    }
    WalkForwardReport report;
    std::vector<std::array<double, kWeekLen>> preds, actuals;
    for (std::size_t w = ds.split_week; w < ds.num_weeks; ++w) {
        Tensor x = detail::assemble_input(ds, w, lookback, multivariate, log);
        Tensor scaled = predict_week(x, w);
        if (scaled.size() != kWeekLen) {
            throw ShapeError("predictor returned " + std::to_string(scaled.size()) +
                             " values, expected " + std::to_string(kWeekLen));
        }
        WeekForecast fc;
        fc.week = w;
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            fc.pred[d] = ds.scaler.invert(scaled[d], 0);
            fc.actual[d] = ds.at(w, d).open;
        }
        preds.push_back(fc.pred);
        actuals.push_back(fc.actual);
        report.weeks.push_back(fc);
        if (extend && w + 1 < ds.num_weeks) extend(w + 1);
    }
    report.metrics = metrics(preds, actuals);
    return report;
}

// ---------------------------------------------------------------------------
// model-backed rounds

/// One full round: build the model from the round seed, train on the initial
/// window, then walk the test weeks under the configured refit policy.
/// Wall time covers the whole round (train + walk).
inline WalkForwardReport run_walkforward(const SeriesDataset& ds, const WalkForwardConfig& cfg,
                                         std::uint64_t round_seed, AccessLog* log = nullptr) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ModelGraph g = build_model(cfg.model, round_seed);
    const std::size_t lookback = g.input_shape.at(0) / kWeekLen;
    const bool multivariate = g.input_shape.at(1) == kFeatureCount;

    TrainConfig tc;
    tc.epochs = cfg.epochs.value_or(g.train_config.epochs);
    tc.batch_size = cfg.batch_size.value_or(g.train_config.batch_size);
    tc.seed = round_seed;
    tc.loss_kind = LossKind::MSE;

    AdamConfig adam;  // forecasting defaults
    AdamState opt = AdamState::for_graph(g);

    Samples initial =
        detail::assemble_training(ds, ds.split_week, lookback, multivariate, ds.split_week, log);
    train(g, initial, tc, adam, nullptr, &opt);

    PredictFn predict_week = [&](const Tensor& x, std::size_t) {
        return graph_forward(g, x, Mode::Infer).reshaped({kWeekLen});
    };
    ExtendFn extend;
    if (cfg.refit == RefitPolicy::Incremental) {
        extend = [&, lookback, multivariate](std::size_t next_target) {
            Samples extended = detail::assemble_training(ds, next_target, lookback, multivariate,
                                                         next_target, log);
            TrainConfig rc = tc;
            rc.epochs = cfg.refit_epochs;
            rc.seed = mix_seed(round_seed, 300 + next_target);
            train(g, extended, rc, adam, nullptr, &opt);
        };
    } else if (cfg.refit == RefitPolicy::Full) {
        extend = [&, lookback, multivariate](std::size_t next_target) {
            g = build_model(cfg.model, mix_seed(round_seed, 400 + next_target));
            opt = AdamState::for_graph(g);
            Samples extended = detail::assemble_training(ds, next_target, lookback, multivariate,
                                                         next_target, log);
            TrainConfig rc = tc;
            rc.seed = mix_seed(round_seed, 500 + next_target);
            train(g, extended, rc, adam, nullptr, &opt);
        };
    }

    WalkForwardReport report = walk_forecast(ds, lookback, multivariate, predict_week, extend, log);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

/// Round r derives its seed from (base seed, r); results are identical
/// whether rounds run serially or across threads.
inline RoundSummary run_rounds(const SeriesDataset& ds, const WalkForwardConfig& cfg) {
    cfg.validate();
    RoundSummary summary;
    summary.rounds.resize(cfg.rounds);
    const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, cfg.rounds));
    if (jobs == 1) {
        for (std::size_t r = 0; r < cfg.rounds; ++r) {
            summary.rounds[r] = run_walkforward(ds, cfg, mix_seed(cfg.base_seed, r));
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(jobs);
        for (std::size_t t = 0; t < jobs; ++t) {
            workers.emplace_back([&, t] {
                try {
                    for (std::size_t r = next.fetch_add(1); r < cfg.rounds; r = next.fetch_add(1)) {
                        summary.rounds[r] = run_walkforward(ds, cfg, mix_seed(cfg.base_seed, r));
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (std::thread& w : workers) w.join();
        for (const std::exception_ptr& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    const double n = static_cast<double>(cfg.rounds);
    for (const WalkForwardReport& r : summary.rounds) {
        summary.mean.agg_rmse += r.metrics.agg_rmse / n;
        summary.mean.ratio += r.metrics.ratio / n;
        summary.mean_wall_seconds += r.wall_seconds / n;
        for (std::size_t d = 0; d < kWeekLen; ++d) summary.mean.day_rmse[d] += r.metrics.day_rmse[d] / n;
    }
    return summary;
}

/// Naive forecaster: every day of the coming week is predicted to equal the
/// last observed open. The brute-force baseline any learned model must beat.
inline WalkForwardReport persistence_baseline(const SeriesDataset& ds) {
    PredictFn predict_last = [&](const Tensor& x, std::size_t) {
        Tensor out({kWeekLen});
        const double last_open = x.at(x.dim(0) - 1, 0);
        for (std::size_t d = 0; d < kWeekLen; ++d) out[d] = last_open;
        return out;
    };
    return walk_forecast(ds, 1, false, predict_last);
}

}  // namespace granite
