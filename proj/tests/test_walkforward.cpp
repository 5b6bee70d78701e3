// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "support.hpp"

using namespace granite;

namespace {

using Week = std::array<double, kWeekLen>;

// Independent spreadsheet-style recomputation of all three metrics.
WalkMetrics brute_force_metrics(const std::vector<Week>& preds, const std::vector<Week>& actuals) {
    WalkMetrics m;
    double total = 0.0, mean = 0.0;
    std::size_t cells = 0;
    for (std::size_t d = 0; d < kWeekLen; ++d) {
        double acc = 0.0;
        for (std::size_t w = 0; w < preds.size(); ++w) {
            const double e = preds[w][d] - actuals[w][d];
            acc += e * e;
            total += e * e;
            mean += actuals[w][d];
            ++cells;
        }
        m.day_rmse[d] = std::sqrt(acc / static_cast<double>(preds.size()));
    }
    m.agg_rmse = std::sqrt(total / static_cast<double>(cells));
    m.ratio = m.agg_rmse / (mean / static_cast<double>(cells));
    return m;
}

SeriesDataset sine_dataset(std::size_t weeks, std::size_t split, std::uint64_t seed) {
    return make_dataset(synth_series(SynthKind::Sine, weeks * kWeekLen, seed), split);
}

}  // namespace

TEST_CASE("metrics of identical arrays are all zero") {
    std::vector<Week> a = {{100, 101, 102, 103, 104}, {105, 104, 103, 102, 101}};
    WalkMetrics m = metrics(a, a);
    REQUIRE(m.agg_rmse == 0.0);
    REQUIRE(m.ratio == 0.0);
    for (double d : m.day_rmse) REQUIRE(d == 0.0);
}

TEST_CASE("constant 3-point offset gives agg 3 and ratio 0.03") {
    std::vector<Week> actuals(4, Week{100, 100, 100, 100, 100});
    std::vector<Week> preds(4, Week{103, 103, 103, 103, 103});
    WalkMetrics m = metrics(preds, actuals);
    REQUIRE(m.agg_rmse == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(m.ratio == Catch::Approx(0.03).margin(1e-12));
    for (double d : m.day_rmse) REQUIRE(d == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("hand-built two-week case matches the spreadsheet numbers") {
    std::vector<Week> actuals = {{100, 101, 102, 103, 104}, {110, 111, 112, 113, 114}};
    std::vector<Week> preds = {{101, 101, 102, 105, 104}, {110, 112, 112, 113, 110}};
    WalkMetrics m = metrics(preds, actuals);
    REQUIRE(m.agg_rmse == Catch::Approx(std::sqrt(2.2)).margin(1e-12));
    REQUIRE(m.day_rmse[0] == Catch::Approx(std::sqrt(0.5)).margin(1e-12));
    REQUIRE(m.day_rmse[1] == Catch::Approx(std::sqrt(0.5)).margin(1e-12));
    REQUIRE(m.day_rmse[2] == 0.0);
    REQUIRE(m.day_rmse[3] == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
    REQUIRE(m.day_rmse[4] == Catch::Approx(std::sqrt(8.0)).margin(1e-12));
    REQUIRE(m.ratio == Catch::Approx(std::sqrt(2.2) / 107.0).margin(1e-12));
}

TEST_CASE("metrics match a brute-force recomputation on random data") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(90.0, 110.0);
    std::vector<Week> preds(4), actuals(4);
    for (auto& w : preds) {
        for (double& v : w) v = u(rng);
    }
    for (auto& w : actuals) {
        for (double& v : w) v = u(rng);
    }
    WalkMetrics got = metrics(preds, actuals);
    WalkMetrics want = brute_force_metrics(preds, actuals);
    REQUIRE(got.agg_rmse == Catch::Approx(want.agg_rmse).margin(1e-12));
    REQUIRE(got.ratio == Catch::Approx(want.ratio).margin(1e-12));
    for (std::size_t d = 0; d < kWeekLen; ++d) {
        REQUIRE(got.day_rmse[d] == Catch::Approx(want.day_rmse[d]).margin(1e-12));
    }
}

TEST_CASE("metrics reject empty or mismatched input") {
    REQUIRE_THROWS_AS(metrics({}, {}), ShapeError);
    REQUIRE_THROWS_AS(metrics(std::vector<Week>(2), std::vector<Week>(3)), ShapeError);
}

TEST_CASE("an oracle that replays actuals scores zero") {
    SeriesDataset ds = sine_dataset(20, 14, 3);
    PredictFn oracle = [&](const Tensor&, std::size_t w) {
        Tensor out({kWeekLen});
        for (std::size_t d = 0; d < kWeekLen; ++d) out[d] = ds.scaler.apply(ds.at(w, d).open, 0);
        return out;
    };
    WalkForwardReport r = walk_forecast(ds, 1, false, oracle);
    REQUIRE(r.weeks.size() == 6);
    REQUIRE(r.metrics.agg_rmse == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(r.metrics.ratio == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("a constant-offset predictor scores the offset everywhere") {
    SeriesDataset ds = sine_dataset(20, 14, 4);
    const double offset = 2.5;
    PredictFn shifted = [&](const Tensor&, std::size_t w) {
        Tensor out({kWeekLen});
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            out[d] = ds.scaler.apply(ds.at(w, d).open + offset, 0);
        }
        return out;
    };
    WalkForwardReport r = walk_forecast(ds, 1, false, shifted);
    REQUIRE(r.metrics.agg_rmse == Catch::Approx(offset).margin(1e-9));
    for (double d : r.metrics.day_rmse) REQUIRE(d == Catch::Approx(offset).margin(1e-9));
}

TEST_CASE("metric identities hold on a real model run") {
    SeriesDataset ds = sine_dataset(30, 24, 7);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.epochs = 3;
    WalkForwardReport r = run_walkforward(ds, cfg, 11);
    // ratio * mean(actual) == agg_rmse
    double mean_actual = 0.0;
    double total_sq = 0.0;
    std::size_t cells = 0;
    for (const WeekForecast& w : r.weeks) {
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            mean_actual += w.actual[d];
            const double e = w.pred[d] - w.actual[d];
            total_sq += e * e;
            ++cells;
        }
    }
    mean_actual /= static_cast<double>(cells);
    REQUIRE(std::abs(r.metrics.ratio * mean_actual - r.metrics.agg_rmse) <= 1e-9);
    REQUIRE(std::abs(r.metrics.agg_rmse * r.metrics.agg_rmse -
                     total_sq / static_cast<double>(cells)) <= 1e-9);
}

TEST_CASE("causality: no model-visible read ever touches the target week or later") {
    SeriesDataset ds = sine_dataset(60, 10, 9);  // 50 test weeks
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.epochs = 2;
    cfg.refit = RefitPolicy::Incremental;
    cfg.refit_epochs = 1;
    AccessLog log;
    run_walkforward(ds, cfg, 1, &log);
    REQUIRE_FALSE(log.reads.empty());
    std::size_t violations = 0;
    for (const auto& [target_week, record_index] : log.reads) {
        if (record_index >= target_week * kWeekLen) ++violations;
    }
    REQUIRE(violations == 0);

    // monotone data growth: the refit ahead of target week w sees exactly
    // the records of weeks < w
    std::map<std::size_t, std::size_t> max_read;
    for (const auto& [target_week, record_index] : log.reads) {
        auto [it, inserted] = max_read.try_emplace(target_week, record_index);
        if (!inserted) it->second = std::max(it->second, record_index);
    }
    for (std::size_t w = ds.split_week; w < ds.num_weeks; ++w) {
        REQUIRE(max_read.at(w) == w * kWeekLen - 1);
    }
}

TEST_CASE("a single round summary equals the round itself") {
    SeriesDataset ds = sine_dataset(20, 16, 13);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.rounds = 1;
    cfg.base_seed = 21;
    cfg.epochs = 2;
    RoundSummary s = run_rounds(ds, cfg);
    REQUIRE(s.rounds.size() == 1);
    REQUIRE(s.mean.agg_rmse == s.rounds[0].metrics.agg_rmse);
    REQUIRE(s.mean.ratio == s.rounds[0].metrics.ratio);
}

TEST_CASE("serial and parallel rounds are bit-identical") {
    SeriesDataset ds = sine_dataset(24, 18, 17);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.rounds = 4;
    cfg.base_seed = 33;
    cfg.epochs = 2;
    cfg.jobs = 1;
    RoundSummary serial = run_rounds(ds, cfg);
    cfg.jobs = 4;
    RoundSummary parallel = run_rounds(ds, cfg);
    REQUIRE(serial.rounds.size() == parallel.rounds.size());
    for (std::size_t r = 0; r < serial.rounds.size(); ++r) {
        REQUIRE(serial.rounds[r].metrics.agg_rmse == parallel.rounds[r].metrics.agg_rmse);
        REQUIRE(serial.rounds[r].metrics.ratio == parallel.rounds[r].metrics.ratio);
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            REQUIRE(serial.rounds[r].metrics.day_rmse[d] == parallel.rounds[r].metrics.day_rmse[d]);
        }
        for (std::size_t w = 0; w < serial.rounds[r].weeks.size(); ++w) {
            REQUIRE(serial.rounds[r].weeks[w].pred == parallel.rounds[r].weeks[w].pred);
        }
    }
}

TEST_CASE("identical derived seeds give zero variance across rounds") {
    SeriesDataset ds = sine_dataset(20, 16, 19);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.epochs = 2;
    WalkForwardReport a = run_walkforward(ds, cfg, 55);
    WalkForwardReport b = run_walkforward(ds, cfg, 55);
    REQUIRE(a.metrics.agg_rmse == b.metrics.agg_rmse);
    for (std::size_t w = 0; w < a.weeks.size(); ++w) REQUIRE(a.weeks[w].pred == b.weeks[w].pred);
}

TEST_CASE("insufficient history is rejected") {
    SeriesDataset ds = sine_dataset(6, 1, 23);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_10;  // needs 2 weeks of lookback
    cfg.epochs = 1;
    REQUIRE_THROWS_AS(run_walkforward(ds, cfg, 1), DataError);
}

TEST_CASE("persistence baseline predicts the last observed open") {
    SeriesDataset ds = sine_dataset(20, 15, 29);
    WalkForwardReport r = persistence_baseline(ds);
    for (const WeekForecast& w : r.weeks) {
        const double last_open = ds.at(w.week - 1, kWeekLen - 1).open;
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            REQUIRE(w.pred[d] == Catch::Approx(last_open).margin(1e-9));
        }
    }
    REQUIRE(r.metrics.agg_rmse > 0.0);
}
