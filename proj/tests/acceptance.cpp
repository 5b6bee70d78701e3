// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// fail. Criteria run everything end to end at fixed seeds and pinned
// tolerances; timing budgets are checked alongside the substance.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "json.hpp"

#include "granite/granite.hpp"

using namespace granite;

namespace {

int g_failures = 0;

void run_criterion(int n, const std::string& name, double budget_seconds,
                   const std::function<std::string()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
        detail = body();
    } catch (const std::exception& e) {
        ok = false;
        detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ok && secs > budget_seconds) {
        ok = false;
        detail += (detail.empty() ? "" : "; ") + std::string("over budget ") +
                  std::to_string(budget_seconds) + "s";
    }
    if (!ok && detail.empty()) detail = "failed";
    std::printf("[%s] criterion %d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", n, name.c_str(), secs,
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

void expect(bool cond, const std::string& what) {
    if (!cond) throw Error(what);
}

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(GRANITE_BIN) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    expect(pipe != nullptr, "popen failed");
    CliResult res;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) res.out.append(buf, n);
    res.code = WEXITSTATUS(pclose(pipe));
    return res;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("granite_acc_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    expect(in.good(), "cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void scrub_timing(nlohmann::ordered_json& j) {
    if (j.is_object()) {
        j.erase("wall_seconds");
        for (auto& [key, value] : j.items()) scrub_timing(value);
    } else if (j.is_array()) {
        for (auto& value : j) scrub_timing(value);
    }
}

double fd(double* coord, const std::function<double()>& f, double h = 1e-5) {
    const double orig = *coord;
    *coord = orig + h;
    const double up = f();
    *coord = orig - h;
    const double down = f();
    *coord = orig;
    return (up - down) / (2.0 * h);
}

std::size_t g_fd_checked = 0;
std::size_t g_fd_skipped = 0;

// Central differences are only a derivative estimate at differentiable
// points; relu and max-pool introduce kinks that a random perturbation can
// straddle. Probe two step sizes: where they disagree the point is locally
// non-smooth and the coordinate is skipped (counted, and capped below).
std::optional<double> fd_smooth(double* coord, const std::function<double()>& f) {
    const double d1 = fd(coord, f, 1e-5);
    const double d2 = fd(coord, f, 5e-6);
    ++g_fd_checked;
    if (std::abs(d1 - d2) > 1e-3 * std::max({1.0, std::abs(d1), std::abs(d2)})) {
        ++g_fd_skipped;
        return std::nullopt;
    }
    return d2;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

// ---------------------------------------------------------------------------

std::string criterion1_audit() {
    const std::vector<std::pair<ModelId, std::size_t>> want_totals = {
        {ModelId::CNN_UNIV_5, 289},         {ModelId::CNN_UNIV_10, 769},
        {ModelId::CNN_MULTV_10, 7373},      {ModelId::CNN_MULTH_10, 132965},
        {ModelId::LSTM_UNIV_5, 182235},     {ModelId::LSTM_UNIV_10, 182235},
        {ModelId::LSTM_UNIV_ED_10, 502601}, {ModelId::LSTM_MULTV_ED_10, 505801},
        {ModelId::LSTM_UNIV_CNN_10, 347209},{ModelId::LSTM_UNIV_CONV_10, 384777},
    };
    using V = std::vector<std::size_t>;
    const std::map<ModelId, V> want_rows = {
        {ModelId::CNN_UNIV_5, {64, 170, 55}},
        {ModelId::CNN_UNIV_10, {64, 650, 55}},
        {ModelId::CNN_MULTV_10, {512, 3104, 1552, 1700, 505}},
        {ModelId::CNN_MULTH_10,
         {128, 3104, 128, 3104, 128, 3104, 128, 3104, 128, 3104, 96200, 20100, 505}},
        {ModelId::LSTM_UNIV_5, {161600, 20100, 505, 30}},
        {ModelId::LSTM_UNIV_10, {161600, 20100, 505, 30}},
        {ModelId::LSTM_UNIV_ED_10, {161600, 320800, 20100, 101}},
        {ModelId::LSTM_MULTV_ED_10, {164800, 320800, 20100, 101}},
        {ModelId::LSTM_UNIV_CNN_10, {256, 12352, 314400, 20100, 101}},
        {ModelId::LSTM_UNIV_CONV_10, {50176, 314400, 20100, 101}},
    };
    for (auto [id, total] : want_totals) {
        ModelGraph g = build_model(id, 1);
        ParamAudit audit = audit_params(g);
        expect(audit.total == total, std::string(to_string(id)) + " total " +
                                         std::to_string(audit.total) + " != " + std::to_string(total));
        // an independent recomputation from the allocation itself
        expect(graph_total_params(g) == total,
               std::string(to_string(id)) + " allocation disagrees with the formula total");
        V rows;
        for (const ParamAuditEntry& e : audit.entries) {
            if (e.count > 0) rows.push_back(e.count);
        }
        expect(rows == want_rows.at(id), std::string(to_string(id)) + " per-layer rows differ");
    }
    CliResult cli = run_cli("audit --seed 1");
    expect(cli.code == 0, "cli audit exit " + std::to_string(cli.code));
    return "ten totals + per-layer rows exact; cli audit exit 0";
}

std::string criterion2_traces() {
    using S = std::vector<Shape>;
    auto shapes = [](ModelId id) {
        S out;
        for (const TraceEntry& e : shape_trace(build_model(id, 1))) out.push_back(e.shape);
        return out;
    };
    const std::map<ModelId, S> want = {
        {ModelId::CNN_UNIV_5, {{5, 1}, {3, 16}, {1, 16}, {16}, {10}, {5}}},
        {ModelId::CNN_UNIV_10, {{10, 1}, {8, 16}, {4, 16}, {64}, {10}, {5}}},
        {ModelId::CNN_MULTV_10,
         {{10, 5}, {8, 32}, {6, 32}, {3, 32}, {1, 16}, {1, 16}, {16}, {100}, {5}}},
        {ModelId::LSTM_UNIV_5, {{5, 1}, {200}, {100}, {5}, {5}}},
        {ModelId::LSTM_UNIV_10, {{10, 1}, {200}, {100}, {5}, {5}}},
        {ModelId::LSTM_UNIV_ED_10, {{10, 1}, {200}, {5, 200}, {5, 200}, {5, 100}, {5, 1}}},
        {ModelId::LSTM_MULTV_ED_10, {{10, 5}, {200}, {5, 200}, {5, 200}, {5, 100}, {5, 1}}},
        {ModelId::LSTM_UNIV_CNN_10,
         {{10, 1}, {8, 64}, {6, 64}, {3, 64}, {192}, {5, 192}, {5, 200}, {5, 100}, {5, 1}}},
        {ModelId::LSTM_UNIV_CONV_10,
         {{10, 1}, {3, 64}, {192}, {5, 192}, {5, 200}, {5, 100}, {5, 1}}},
    };
    for (const auto& [id, expected] : want) {
        expect(shapes(id) == expected, std::string(to_string(id)) + " trace differs");
    }
    // multi-head: five flattened 96s joined into 480
    {
        ModelGraph g = build_model(ModelId::CNN_MULTH_10, 1);
        std::size_t n96 = 0;
        bool c480 = false;
        for (const TraceEntry& e : shape_trace(g)) {
            if (e.shape == Shape{96}) ++n96;
            if (e.label == "head/concat" && e.shape == Shape{480}) c480 = true;
        }
        expect(n96 == 5 && c480, "CNN_MULTH_10 branch/concat trace differs");
    }
    // symbolic/concrete agreement on every model
    std::mt19937_64 rng(2);
    for (ModelId id : kAllModels) {
        ModelGraph g = build_model(id, 3);
        auto ins = graph_input_shapes(g);
        GraphCache cache;
        graph_forward(g, random_tensor(g.input_shape, rng, 0.05, 0.95), Mode::Infer, nullptr,
                      &cache);
        for (std::size_t p = 0; p < g.positions.size(); ++p) {
            for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
                expect(cache.blocks[p][b].output.shape() ==
                           block_output_shape(g.positions[p][b], ins[p][b]),
                       std::string(to_string(id)) + " concrete shape mismatch");
            }
        }
    }
    return "all quoted shapes reproduced symbolically and concretely";
}

std::string criterion3_gradients() {
    constexpr double kTol = 1e-4;
    double worst = 0.0;
    // every layer kind, full-coordinate checks, 20 seeds
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(mix_seed(1234, seed));
        const std::vector<std::pair<LayerSpec, Shape>> cases = {
            {LayerSpec::conv1d(3, 2, Activation::Tanh), {6, 2}},
            {LayerSpec::conv1d(2, 3, Activation::Relu), {7, 1}},
            {LayerSpec::maxpool1d(), {6, 3}},
            {LayerSpec::flatten(), {4, 3}},
            {LayerSpec::dense(5, Activation::Sigmoid), {7}},
            {LayerSpec::dense(4, Activation::Softmax), {6}},
            {LayerSpec::dropout(0.3), {12}},
            {LayerSpec::lstm(4, false), {3, 2}},
            {LayerSpec::lstm(3, true), {4, 2}},
            {LayerSpec::repeat_vector(3), {5}},
            {LayerSpec::time_dist_dense(3, Activation::Tanh), {4, 5}},
            {LayerSpec::conv_lstm1d(3, 3, 2), {10, 2}},
            {LayerSpec::concatenate(), {8}},
        };
        for (const auto& [spec, in] : cases) {
            LayerState st = build_layer(spec, in, rng);
            Tensor x = random_tensor(in, rng, -1.2, 1.2);
            auto forward_once = [&](LayerCache* cache) {
                std::mt19937_64 dropout_rng(999);
                return layer_forward(st, x, Mode::Train, &dropout_rng, cache);
            };
            Tensor probe = forward_once(nullptr);
            Tensor weights = random_tensor(probe.shape(), rng, 0.2, 1.0);
            auto scalar = [&] {
                Tensor out = forward_once(nullptr);
                double acc = 0.0;
                for (std::size_t i = 0; i < out.size(); ++i) acc += weights[i] * out[i];
                return acc;
            };
            LayerCache cache;
            forward_once(&cache);
            LayerGrads grads = layer_backward(st, cache, weights);
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (auto numeric = fd_smooth(&x[i], scalar)) {
                    worst = std::max(worst, rel_err(grads.input[i], *numeric));
                }
            }
            for (auto& [name, g] : grads.params) {
                Tensor& p = st.params.at(name);
                for (std::size_t i = 0; i < p.size(); ++i) {
                    if (auto numeric = fd_smooth(&p[i], scalar)) {
                        worst = std::max(worst, rel_err(g[i], *numeric));
                    }
                }
            }
            expect(worst <= kTol, std::string("layer ") + to_string(spec.kind) + " seed " +
                                      std::to_string(seed) + " rel err " + std::to_string(worst));
        }
    }
    // every full model graph, sampled coordinates, 20 seeds each
    for (ModelId id : kAllModels) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(mix_seed(500 + static_cast<std::uint64_t>(id), seed));
            ModelGraph g = build_model(id, mix_seed(77, seed));
            Tensor x = random_tensor(g.input_shape, rng, 0.05, 0.95);
            Tensor probe = graph_forward(g, x, Mode::Infer);
            Tensor weights = random_tensor(probe.shape(), rng, 0.2, 1.0);
            auto scalar = [&] {
                Tensor out = graph_forward(g, x, Mode::Infer);
                double acc = 0.0;
                for (std::size_t i = 0; i < out.size(); ++i) acc += weights[i] * out[i];
                return acc;
            };
            GraphCache cache;
            graph_forward(g, x, Mode::Infer, nullptr, &cache);
            GraphGrads grads = graph_backward(g, cache, weights);
            const auto refs = list_params(g);
            std::uniform_int_distribution<std::size_t> pick_ref(0, refs.size() - 1);
            for (int c = 0; c < 4; ++c) {
                for (int attempt = 0; attempt < 8; ++attempt) {
                    const std::size_t r = pick_ref(rng);
                    Tensor& w = param_tensor(g, refs[r]);
                    std::uniform_int_distribution<std::size_t> pick(0, w.size() - 1);
                    const std::size_t i = pick(rng);
                    auto numeric = fd_smooth(&w[i], scalar);
                    if (!numeric) continue;
                    const double err = rel_err(grads.params[r][i], *numeric);
                    worst = std::max(worst, err);
                    expect(err <= kTol, std::string(to_string(id)) + " param grad err " +
                                            std::to_string(err) + " at seed " + std::to_string(seed));
                    break;
                }
            }
            std::uniform_int_distribution<std::size_t> pick_in(0, x.size() - 1);
            for (int c = 0; c < 2; ++c) {
                for (int attempt = 0; attempt < 8; ++attempt) {
                    const std::size_t i = pick_in(rng);
                    auto numeric = fd_smooth(&x[i], scalar);
                    if (!numeric) continue;
                    const double err = rel_err(grads.input[i], *numeric);
                    worst = std::max(worst, err);
                    expect(err <= kTol, std::string(to_string(id)) + " input grad err " +
                                            std::to_string(err));
                    break;
                }
            }
        }
    }
    expect(g_fd_skipped * 50 <= g_fd_checked,
           "too many non-smooth skips: " + std::to_string(g_fd_skipped) + " of " +
               std::to_string(g_fd_checked));
    char buf[96];
    std::snprintf(buf, sizeof buf, "worst rel err %.2e; %zu kink skips of %zu coords", worst,
                  g_fd_skipped, g_fd_checked);
    return buf;
}

std::string criterion4_protocol() {
    SeriesDataset ds = make_dataset(synth_series(SynthKind::Sine, 60 * kWeekLen, 9), 10);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.epochs = 2;
    cfg.refit = RefitPolicy::Incremental;
    cfg.refit_epochs = 1;
    AccessLog log;
    WalkForwardReport report = run_walkforward(ds, cfg, 5, &log);
    expect(report.weeks.size() == 50, "expected 50 test weeks");
    std::size_t future_reads = 0;
    for (const auto& [target_week, record_index] : log.reads) {
        if (record_index >= target_week * kWeekLen) ++future_reads;
    }
    expect(future_reads == 0, std::to_string(future_reads) + " future-record reads");

    // metric identities to 1e-9
    double mean_actual = 0.0, total_sq = 0.0;
    std::size_t cells = 0;
    for (const WeekForecast& w : report.weeks) {
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            mean_actual += w.actual[d];
            const double e = w.pred[d] - w.actual[d];
            total_sq += e * e;
            ++cells;
        }
    }
    mean_actual /= static_cast<double>(cells);
    expect(std::abs(report.metrics.ratio * mean_actual - report.metrics.agg_rmse) <= 1e-9,
           "ratio*mean != agg_rmse");
    expect(std::abs(report.metrics.agg_rmse * report.metrics.agg_rmse -
                    total_sq / static_cast<double>(cells)) <= 1e-9,
           "agg^2 != mean squared cell error");

    // serial vs parallel bit-identical
    WalkForwardConfig rc;
    rc.model = ModelId::CNN_UNIV_5;
    rc.rounds = 3;
    rc.base_seed = 21;
    rc.epochs = 2;
    rc.jobs = 1;
    SeriesDataset small = make_dataset(synth_series(SynthKind::Sine, 30 * kWeekLen, 11), 24);
    RoundSummary serial = run_rounds(small, rc);
    rc.jobs = 3;
    RoundSummary parallel = run_rounds(small, rc);
    for (std::size_t r = 0; r < rc.rounds; ++r) {
        expect(serial.rounds[r].metrics.agg_rmse == parallel.rounds[r].metrics.agg_rmse &&
                   serial.rounds[r].metrics.day_rmse == parallel.rounds[r].metrics.day_rmse,
               "serial/parallel round " + std::to_string(r) + " differ");
        for (std::size_t w = 0; w < serial.rounds[r].weeks.size(); ++w) {
            expect(serial.rounds[r].weeks[w].pred == parallel.rounds[r].weeks[w].pred,
                   "serial/parallel predictions differ");
        }
    }
    return "zero future reads over 50 weeks; identities at 1e-9; schedule-independent";
}

std::string criterion5_learnability() {
    SynthParams p;  // noiseless sine: amplitude 10 around 100, 10-week period
    p.amplitude = 10.0;
    p.offset = 100.0;
    p.period = 50.0;
    SeriesDataset ds = make_dataset(synth_series(SynthKind::Sine, 500 * kWeekLen, 42, p), 400);
    WalkForwardConfig cfg;
    cfg.model = ModelId::CNN_UNIV_5;
    cfg.refit = RefitPolicy::None;
    cfg.epochs = 80;  // the 20-epoch field default underfits this gate
    WalkForwardReport model_report = run_walkforward(ds, cfg, 42);
    WalkForwardReport baseline = persistence_baseline(ds);
    expect(model_report.metrics.ratio <= 0.05,
           "ratio " + std::to_string(model_report.metrics.ratio) + " > 0.05");
    expect(model_report.metrics.ratio < baseline.metrics.ratio,
           "model ratio " + std::to_string(model_report.metrics.ratio) +
               " does not beat persistence " + std::to_string(baseline.metrics.ratio));
    char buf[96];
    std::snprintf(buf, sizeof buf, "ratio %.5f vs persistence %.5f", model_report.metrics.ratio,
                  baseline.metrics.ratio);
    return buf;
}

std::string criterion6_mechanics() {
    // (a) freeze bit-exactness across a training cycle
    {
        ModelGraph g = build_mlp({2}, {6}, 2, Activation::Softmax, 3);
        progress(g, 1, 5);
        freeze_priors(g, 1);
        const Tensor before = g.positions[0][0].layers[0].params.at("W");
        auto batches = gaussian_stream(1, 60, 50, 2, 7);
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 10;
        tc.seed = 9;
        tc.loss_kind = LossKind::CrossEntropy;
        train(g, batches[0].train, tc, AdamConfig::progressive());
        expect(g.positions[0][0].layers[0].params.at("W").values() == before.values(),
               "frozen weights changed during training");
    }
    // (b) exact prune counts and monotone masks
    {
        ModelGraph g = build_mlp({20}, {}, 5, Activation::Identity, 4);
        expect(prunable_count(g) == 100, "expected 100 prunable weights");
        expect(prune_step(g, 0.1) == 10, "first prune should mask 10");
        expect(prune_step(g, 0.1) == 9, "second prune should mask 9 of the remaining 90");
        expect(prunable_count(g) == 81, "mask count not monotone");
    }
    // (c) restore-on-degradation returns bit-identical state
    {
        ModelGraph g = build_mlp({2}, {}, 1, Activation::Identity, 16);
        LayerState& lyr = g.positions[0][0].layers[0];
        lyr.params.at("W").values() = {0.001, 5.0};
        lyr.params.at("b").values() = {0.0};
        const std::size_t n = 24;
        Tensor x({n, 2}), y({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            x.at(i, 0) = static_cast<double>(i) - 12.0;
            x.at(i, 1) = 0.0;
            y.at(i, 0) = 0.001 * x.at(i, 0);
        }
        DataBatch batch{{x, y}, {x, y}};
        CycleConfig cfg;
        cfg.prune_fraction = 0.5;
        cfg.post_prune_epochs = 2;
        cfg.train.batch_size = 8;
        cfg.train.seed = 21;
        std::vector<double> weights_before = lyr.params.at("W").values();
        AdamState opt = AdamState::for_graph(g);
        std::vector<EpochPoint> sink;
        PruneLoopResult res =
            prune_loop(g, batch, cfg, opt, evaluate(g, batch.val, Metric::NegRmse), sink, 0);
        expect(res.iterations == 1, "expected exactly one prune iteration");
        expect(g.positions[0][0].layers[0].params.at("W").values() == weights_before,
               "restore was not bit-identical");
        expect(g.positions[0][0].layers[0].mask.count() == 0, "mask not restored");
    }
    // (d) wiring law after 3 progressions on a 3-layer MLP
    {
        ModelGraph g = build_mlp({2}, {10, 6}, 2, Activation::Softmax, 8);
        for (int c = 1; c <= 3; ++c) progress(g, c, 13);
        check_wiring(g);
        for (const Block& blk : g.positions[1]) {
            std::size_t want = 0;
            for (const Block& src : g.positions[0]) {
                if (src.cycle_added <= blk.cycle_added) want += src.layers.back().spec.units;
            }
            expect(blk.layers[0].params.at("W").dim(0) == want,
                   "wiring law violated at " + blk.name);
        }
        expect(g.positions[0].size() == 4 && g.positions[1].size() == 4,
               "expected k+1 blocks after k progressions");
    }
    // (e) BAPC recomputation matches the incremental bookkeeping
    {
        auto batches = gaussian_stream(3, 80, 60, 3, 33);
        ModelGraph g = build_mlp({2}, {10}, 3, Activation::Softmax, 23);
        CycleConfig cfg;
        cfg.epochs_per_cycle = 4;
        cfg.post_prune_epochs = 2;
        cfg.max_prune_iterations = 3;
        cfg.train.batch_size = 16;
        cfg.train.loss_kind = LossKind::CrossEntropy;
        cfg.train.val_metric = Metric::Accuracy;
        cfg.train.seed = 13;
        CycleLog log = run_cycles(g, batches, CycleMode::ProgressiveFree, cfg);
        double bapc = 0.0, max_val = -1e300;
        for (const CycleEntry& c : log.cycles) {
            double best = -1e300;
            for (const EpochPoint& pt : c.epochs) best = std::max(best, pt.val_metric);
            expect(best == c.best_val, "cycle best differs from its epoch log");
            bapc += best / static_cast<double>(log.cycles.size());
            max_val = std::max(max_val, best);
        }
        expect(std::abs(log.bapc - bapc) <= 1e-15 && log.max_val == max_val,
               "BAPC bookkeeping mismatch");
    }
    return "freeze, prune counts, restore, wiring, BAPC all exact";
}

std::string criterion7_directional() {
    auto attempt = [](std::uint64_t seed, double* free_bapc, double* static_bapc) {
        auto batches = gaussian_stream(10, 600, 500, 3, seed);
        ModelGraph g = build_mlp({2}, {16}, 3, Activation::Softmax, seed);
        CycleConfig cfg;
        cfg.epochs_per_cycle = 15;
        cfg.train.batch_size = 32;
        cfg.train.loss_kind = LossKind::CrossEntropy;
        cfg.train.val_metric = Metric::Accuracy;
        cfg.train.seed = seed;
        CycleLog log_static = run_cycles(g, batches, CycleMode::Static, cfg);
        CycleLog log_free = run_cycles(g, batches, CycleMode::ProgressiveFree, cfg);
        *free_bapc = log_free.bapc;
        *static_bapc = log_static.bapc;
        return log_free.bapc >= log_static.bapc - 0.01;
    };
    double f = 0.0, s = 0.0;
    if (attempt(42, &f, &s)) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "free bapc %.4f vs static %.4f (seed 42)", f, s);
        return buf;
    }
    // flaky-failure policy: three fixed alternate seeds, pass on 2 of 3
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed : {1001ull, 2002ull, 3003ull}) {
        double ff = 0.0, ss = 0.0;
        if (attempt(seed, &ff, &ss)) ++wins;
        detail += " seed" + std::to_string(seed) + ": " + std::to_string(ff) + "/" +
                  std::to_string(ss);
    }
    expect(wins >= 2, "directional check failed on primary and " + std::to_string(3 - wins) +
                          " of 3 alternates;" + detail);
    return "passed via alternate-seed policy (" + std::to_string(wins) + "/3)" + detail;
}

std::string criterion8_determinism() {
    const std::string series = temp_path("series.csv");
    CliResult gen = run_cli("synth --kind sine --n 120 --seed 3 --out " + series);
    expect(gen.code == 0, "synth failed");
    const std::string a = temp_path("wf_a.json");
    const std::string b = temp_path("wf_b.json");
    const std::string args = "walkforward --model CNN_UNIV_5 --data " + series +
                             " --rounds 2 --epochs 2 --seed 7 --out ";
    expect(run_cli(args + a).code == 0, "walkforward run 1 failed");
    expect(run_cli(args + b).code == 0, "walkforward run 2 failed");
    auto ja = nlohmann::ordered_json::parse(slurp(a));
    auto jb = nlohmann::ordered_json::parse(slurp(b));
    scrub_timing(ja);
    scrub_timing(jb);
    expect(ja.dump() == jb.dump(), "walkforward reruns differ beyond timing fields");

    const std::string s2 = temp_path("series2.csv");
    expect(run_cli("synth --kind sine --n 120 --seed 3 --out " + s2).code == 0, "synth rerun failed");
    expect(slurp(series) == slurp(s2), "synth reruns differ");

    const std::string pa = temp_path("prog_a.json");
    const std::string pb = temp_path("prog_b.json");
    const std::string pargs = "progressive --mode free --batches 2 --epochs 2 --seed 5 --out ";
    expect(run_cli(pargs + pa).code == 0, "progressive run 1 failed");
    expect(run_cli(pargs + pb).code == 0, "progressive run 2 failed");
    expect(slurp(pa) == slurp(pb), "progressive reruns differ");
    for (const std::string& f : {series, a, b, s2, pa, pb}) std::remove(f.c_str());
    return "byte-identical reruns modulo timing fields";
}

}  // namespace

int main() {
    std::printf("granite acceptance suite\n");
    run_criterion(1, "parameter-audit oracle", 1.0, criterion1_audit);
    run_criterion(2, "shape-trace oracle", 1.0, criterion2_traces);
    run_criterion(3, "gradient suite (20 seeds)", 120.0, criterion3_gradients);
    run_criterion(4, "walk-forward protocol suite", 60.0, criterion4_protocol);
    run_criterion(5, "learnability gate", 180.0, criterion5_learnability);
    run_criterion(6, "progressive mechanics suite", 120.0, criterion6_mechanics);
    run_criterion(7, "progressive directional check", 300.0, criterion7_directional);
    run_criterion(8, "determinism gate", 120.0, criterion8_determinism);
    if (g_failures) {
        std::printf("%d criterion(s) FAILED\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
