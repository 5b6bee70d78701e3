// SPDX-License-Identifier: Apache-2.0
//
// Batch experiment front-end: build/audit models, generate data, run
// training, walk-forward, and progressive experiments; emit JSON/CSV
// reports. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
// abort.

#include <cstdlib>
#include <iostream>
#include <random>

#include "CLI11.hpp"

#include "granite/granite.hpp"

#ifndef GRANITE_BUILD_ID
#define GRANITE_BUILD_ID "unknown"
#endif

namespace {

constexpr int kSchemaVersion = 1;

using granite::Json;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("GRANITE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw granite::ConfigError("GRANITE_SEED is not an unsigned integer: '" +
                                       std::string(env) + "'");
        }
    }
    std::random_device rd;
    const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    std::cerr << "granite: no --seed given; using random seed " << seed << "\n";
    return seed;
}

Json envelope(const std::string& command, std::uint64_t seed, Json config) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["build_id"] = GRANITE_BUILD_ID;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = std::move(config);
    return j;
}

void emit(const std::string& out_path, const std::string& content) {
    if (out_path.empty()) {
        std::cout << content;
        if (!content.empty() && content.back() != '\n') std::cout << '\n';
    } else {
        granite::write_text_file(out_path, content);
    }
}

granite::ModelId require_model(const std::string& name) {
    auto id = granite::parse_model_id(name);
    if (!id) {
        throw granite::ConfigError("unknown model '" + name + "'; expected one of the ten ids (e.g. CNN_UNIV_5)");
    }
    return *id;
}

granite::SeriesDataset load_dataset(const std::string& path, double split_fraction = 0.8) {
    auto loaded = granite::load_csv(path);
    for (const std::string& w : loaded.warnings) std::cerr << "granite: warning: " << w << "\n";
    const std::size_t weeks = loaded.records.size() / granite::kWeekLen;
    if (weeks < 2) throw granite::DataError("'" + path + "' holds fewer than 2 complete weeks");
    auto split = static_cast<std::size_t>(split_fraction * static_cast<double>(weeks));
    split = std::min(std::max<std::size_t>(split, 1), weeks - 1);
    granite::SeriesDataset ds = granite::make_dataset(std::move(loaded.records), split);
    for (const std::string& w : ds.warnings) std::cerr << "granite: warning: " << w << "\n";
    return ds;
}

// ---------------------------------------------------------------------------

int cmd_audit(const std::string& model, const std::string& out_path, std::uint64_t seed) {
    std::vector<granite::ModelId> ids;
    if (model == "all") {
        ids.assign(granite::kAllModels.begin(), granite::kAllModels.end());
    } else {
        ids.push_back(require_model(model));
    }
    Json cards = Json::array();
    bool all_match = true;
    for (granite::ModelId id : ids) {
        granite::ModelGraph g = granite::build_model(id, seed);
        granite::ParamAudit audit = granite::audit_params(g);
        std::printf("%s  input %s  epochs %zu  batch %zu\n", g.id.c_str(),
                    granite::shape_str(g.input_shape).c_str(), g.train_config.epochs,
                    g.train_config.batch_size);
        std::printf("  %-12s %-16s %10s %10s\n", "block", "layer", "features", "params");
        for (const granite::ParamAuditEntry& e : audit.entries) {
            std::printf("  %-12s %-16s %10zu %10zu\n", e.block.c_str(), e.layer.c_str(),
                        e.input_features, e.count);
        }
        const std::size_t want = granite::expected_total(id);
        const bool ok = audit.total == want;
        all_match = all_match && ok;
        std::printf("  total %zu (published %zu) %s\n\n", audit.total, want, ok ? "ok" : "MISMATCH");
        cards.push_back(granite::model_card_json(g));
    }
    if (!out_path.empty()) {
        Json j = envelope("audit", seed, Json{{"model", model}});
        j["models"] = cards;
        granite::write_text_file(out_path, j.dump(2) + "\n");
    }
    if (!all_match) {
        std::cerr << "granite: audit mismatch against published totals\n";
        return 3;
    }
    return 0;
}

int cmd_trace(const std::string& model, const std::string& out_path, std::uint64_t seed) {
    granite::ModelGraph g = granite::build_model(require_model(model), seed);
    for (const granite::TraceEntry& e : granite::shape_trace(g)) {
        std::printf("%-28s %s\n", e.label.c_str(), granite::shape_str(e.shape).c_str());
    }
    if (!out_path.empty()) {
        Json j = envelope("trace", seed, Json{{"model", model}});
        j["trace"] = granite::trace_json(g);
        granite::write_text_file(out_path, j.dump(2) + "\n");
    }
    return 0;
}

struct SynthArgs {
    std::string kind = "sine";
    std::size_t n = 2500;
    granite::SynthParams params;
};

int cmd_synth(const SynthArgs& args, const std::string& out_path, std::uint64_t seed) {
    auto kind = granite::parse_synth_kind(args.kind);
    if (!kind) throw granite::ConfigError("unknown series kind '" + args.kind + "'");
    auto records = granite::synth_series(*kind, args.n, seed, args.params);
    if (out_path.empty()) throw granite::ConfigError("synth needs --out <csv>");
    granite::write_csv(out_path, records);
    Json config{{"kind", args.kind},
                {"n", args.n},
                {"amplitude", args.params.amplitude},
                {"offset", args.params.offset},
                {"period", args.params.period},
                {"start", args.params.start},
                {"drift", args.params.drift},
                {"sigma", args.params.sigma},
                {"slope", args.params.slope},
                {"out", out_path}};
    std::cout << envelope("synth", seed, config).dump(2) << "\n";
    return 0;
}

struct RunArgs {
    std::string model = "CNN_UNIV_5";
    std::string data;
    std::string refit = "none";
    std::size_t rounds = 10;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::size_t jobs = 1;
    std::string format = "json";
};

int cmd_train(const RunArgs& args, const std::string& out_path, std::uint64_t seed) {
    granite::ModelGraph g = granite::build_model(require_model(args.model), seed);
    granite::SeriesDataset ds = load_dataset(args.data);
    const std::size_t lookback = g.input_shape.at(0) / granite::kWeekLen;
    const bool multivariate = g.input_shape.at(1) == granite::kFeatureCount;
    granite::WindowedSamples train_windows =
        granite::make_windows(ds, lookback, multivariate, lookback, ds.split_week);
    granite::WindowedSamples val_windows =
        granite::make_windows(ds, lookback, multivariate, ds.split_week, ds.num_weeks);

    granite::TrainConfig tc;
    tc.epochs = args.epochs.value_or(g.train_config.epochs);
    tc.batch_size = args.batch_size.value_or(g.train_config.batch_size);
    tc.seed = seed;
    granite::AdamConfig adam;
    granite::Samples train_set = train_windows.samples();
    granite::Samples val_set = val_windows.samples();
    granite::TrainLog log = granite::train(g, train_set, tc, adam, &val_set);

    Json config{{"model", args.model}, {"data", args.data},
                {"epochs", tc.epochs},  {"batch_size", tc.batch_size},
                {"split_week", ds.split_week}};
    Json j = envelope("train", seed, config);
    j["log"] = granite::train_log_json(log);
    emit(out_path, j.dump(2) + "\n");
    return 0;
}

granite::WalkForwardConfig walk_config(const RunArgs& args, std::uint64_t seed) {
    granite::WalkForwardConfig cfg;
    cfg.model = require_model(args.model);
    cfg.rounds = args.rounds;
    cfg.base_seed = seed;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch_size;
    cfg.jobs = args.jobs;
    if (args.refit == "none") {
        cfg.refit = granite::RefitPolicy::None;
    } else if (args.refit == "full") {
        cfg.refit = granite::RefitPolicy::Full;
    } else if (args.refit.rfind("incremental:", 0) == 0) {
        cfg.refit = granite::RefitPolicy::Incremental;
        try {
            cfg.refit_epochs = std::stoul(args.refit.substr(12));
        } catch (const std::exception&) {
            throw granite::ConfigError("bad refit spec '" + args.refit + "'");
        }
    } else {
        throw granite::ConfigError("refit must be none, incremental:<k>, or full; got '" +
                                   args.refit + "'");
    }
    return cfg;
}

int cmd_walkforward(const RunArgs& args, const std::string& out_path, std::uint64_t seed) {
    granite::SeriesDataset ds = load_dataset(args.data);
    granite::WalkForwardConfig cfg = walk_config(args, seed);
    granite::RoundSummary summary = granite::run_rounds(ds, cfg);
    Json config{{"model", args.model},
                {"data", args.data},
                {"rounds", cfg.rounds},
                {"refit", args.refit},
                {"jobs", cfg.jobs},
                {"split_week", ds.split_week}};
    if (cfg.epochs) config["epochs"] = *cfg.epochs;
    if (cfg.batch_size) config["batch_size"] = *cfg.batch_size;
    if (args.format == "csv") {
        std::cerr << envelope("walkforward", seed, config).dump() << "\n";
        emit(out_path, granite::round_summary_csv(summary));
    } else {
        Json j = envelope("walkforward", seed, config);
        j["report"] = granite::round_summary_json(args.model, summary);
        emit(out_path, j.dump(2) + "\n");
    }
    return 0;
}

struct ProgressiveArgs {
    std::string mode = "free";
    std::string data;
    std::string model = "CNN_UNIV_5";
    std::size_t batches = 10;
    std::size_t epochs = 15;
    double prune_q = 0.10;
    std::size_t jobs = 1;
    std::string format = "json";
};

int cmd_progressive(const ProgressiveArgs& args, const std::string& out_path, std::uint64_t seed) {
    using granite::CycleMode;
    std::vector<CycleMode> modes;
    if (args.mode == "all") {
        modes = {CycleMode::Static, CycleMode::ProgressiveFrozen, CycleMode::ProgressiveFree};
    } else if (args.mode == "static") {
        modes = {CycleMode::Static};
    } else if (args.mode == "frozen") {
        modes = {CycleMode::ProgressiveFrozen};
    } else if (args.mode == "free") {
        modes = {CycleMode::ProgressiveFree};
    } else {
        throw granite::ConfigError("mode must be static, frozen, free, or all; got '" + args.mode +
                                   "'");
    }

    granite::CycleConfig cfg;
    cfg.epochs_per_cycle = args.epochs;
    cfg.prune_fraction = args.prune_q;
    cfg.train.seed = seed;

    granite::ModelGraph initial;
    std::vector<granite::DataBatch> batches;
    Json config{{"mode", args.mode},   {"batches", args.batches}, {"epochs", args.epochs},
                {"prune_q", args.prune_q}, {"jobs", args.jobs}};
    if (args.data.empty()) {
        // built-in drifting-cluster classification stream
        cfg.train.loss_kind = granite::LossKind::CrossEntropy;
        cfg.train.val_metric = granite::Metric::Accuracy;
        cfg.train.batch_size = 32;
        initial = granite::build_mlp({2}, {16}, 3, granite::Activation::Softmax, seed);
        batches = granite::gaussian_stream(args.batches, 600, 500, 3, seed);
        config["task"] = "gaussian_stream";
    } else {
        cfg.train.loss_kind = granite::LossKind::MSE;
        cfg.train.val_metric = granite::Metric::NegRmse;
        cfg.train.batch_size = 16;
        granite::SeriesDataset ds = load_dataset(args.data);
        initial = granite::build_model(require_model(args.model), seed);
        const std::size_t lookback = initial.input_shape.at(0) / granite::kWeekLen;
        const bool multivariate = initial.input_shape.at(1) == granite::kFeatureCount;
        granite::WindowedSamples windows = granite::make_windows(ds, lookback, multivariate);
        batches = granite::split_into_batches(windows.samples(), args.batches);
        config["task"] = "forecast";
        config["model"] = args.model;
        config["data"] = args.data;
    }

    std::vector<granite::CycleLog> logs(modes.size());
    if (args.jobs > 1 && modes.size() > 1) {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(modes.size());
        for (std::size_t i = 0; i < modes.size(); ++i) {
            workers.emplace_back([&, i] {
                try {
                    logs[i] = granite::run_cycles(initial, batches, modes[i], cfg);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    } else {
        for (std::size_t i = 0; i < modes.size(); ++i) {
            logs[i] = granite::run_cycles(initial, batches, modes[i], cfg);
        }
    }

    for (std::size_t i = 0; i < modes.size(); ++i) {
        std::printf("%-8s  max %.4f  bapc %.4f\n", to_string(modes[i]), logs[i].max_val,
                    logs[i].bapc);
    }
    if (args.format == "csv") {
        if (logs.size() != 1) throw granite::ConfigError("csv export is per-mode; pick one mode");
        std::cerr << envelope("progressive", seed, config).dump() << "\n";
        emit(out_path, granite::cycle_log_csv(logs[0]));
    } else {
        Json j = envelope("progressive", seed, config);
        Json runs = Json::array();
        for (const granite::CycleLog& log : logs) runs.push_back(granite::cycle_log_json(log));
        j["runs"] = runs;
        emit(out_path, j.dump(2) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"granite: deep forecasting models, walk-forward evaluation, progressive training"};
    app.require_subcommand(1);
    app.fallthrough();

    std::optional<std::uint64_t> seed_flag;
    std::string out_path;
    app.add_option("--seed", seed_flag, "RNG seed (fallback: GRANITE_SEED env, else random)");

    std::string audit_model = "all";
    auto* audit = app.add_subcommand("audit", "parameter audit against the published tables");
    audit->add_option("--model", audit_model, "model id or 'all'");
    audit->add_option("--out", out_path, "write JSON model cards here");

    std::string trace_model;
    auto* trace = app.add_subcommand("trace", "symbolic shape trace");
    trace->add_option("--model", trace_model, "model id")->required();
    trace->add_option("--out", out_path, "write JSON trace here");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic OHLCV series");
    synth->add_option("--kind", synth_args.kind, "sine | random_walk | linear_trend");
    synth->add_option("--n", synth_args.n, "number of records");
    synth->add_option("--amplitude", synth_args.params.amplitude, "sine amplitude");
    synth->add_option("--offset", synth_args.params.offset, "sine level");
    synth->add_option("--period", synth_args.params.period, "sine period (steps)");
    synth->add_option("--start", synth_args.params.start, "walk/trend start price");
    synth->add_option("--drift", synth_args.params.drift, "walk per-step drift");
    synth->add_option("--sigma", synth_args.params.sigma, "walk per-step stddev");
    synth->add_option("--slope", synth_args.params.slope, "trend per-step increment");
    synth->add_option("--out", out_path, "output CSV path");

    RunArgs run_args;
    auto* train_cmd = app.add_subcommand("train", "train one model on a CSV series");
    train_cmd->add_option("--model", run_args.model, "model id");
    train_cmd->add_option("--data", run_args.data, "input CSV")->required();
    train_cmd->add_option("--epochs", run_args.epochs, "override the model's epochs");
    train_cmd->add_option("--batch-size", run_args.batch_size, "override the model's batch size");
    train_cmd->add_option("--out", out_path, "write the JSON log here");

    auto* walk = app.add_subcommand("walkforward", "walk-forward rounds with metrics");
    walk->add_option("--model", run_args.model, "model id");
    walk->add_option("--data", run_args.data, "input CSV")->required();
    walk->add_option("--rounds", run_args.rounds, "number of rounds");
    walk->add_option("--refit", run_args.refit, "none | incremental:<k> | full");
    walk->add_option("--epochs", run_args.epochs, "override the model's epochs");
    walk->add_option("--batch-size", run_args.batch_size, "override the model's batch size");
    walk->add_option("--jobs", run_args.jobs, "parallel rounds");
    walk->add_option("--format", run_args.format, "json | csv");
    walk->add_option("--out", out_path, "output path");

    ProgressiveArgs prog_args;
    auto* prog = app.add_subcommand("progressive", "continual-training cycles");
    prog->add_option("--mode", prog_args.mode, "static | frozen | free | all");
    prog->add_option("--data", prog_args.data, "CSV series (omit for the built-in classification stream)");
    prog->add_option("--model", prog_args.model, "forecasting model id (with --data)");
    prog->add_option("--batches", prog_args.batches, "number of data batches / cycles");
    prog->add_option("--epochs", prog_args.epochs, "main epochs per cycle");
    prog->add_option("--prune-q", prog_args.prune_q, "prune fraction per iteration");
    prog->add_option("--jobs", prog_args.jobs, "run modes in parallel (with --mode all)");
    prog->add_option("--format", prog_args.format, "json | csv");
    prog->add_option("--out", out_path, "output path");

    try {
        app.parse(argc, argv);
        const std::uint64_t seed = resolve_seed(seed_flag);
        if (audit->parsed()) return cmd_audit(audit_model, out_path, seed);
        if (trace->parsed()) return cmd_trace(trace_model, out_path, seed);
        if (synth->parsed()) return cmd_synth(synth_args, out_path, seed);
        if (train_cmd->parsed()) return cmd_train(run_args, out_path, seed);
        if (walk->parsed()) return cmd_walkforward(run_args, out_path, seed);
        if (prog->parsed()) return cmd_progressive(prog_args, out_path, seed);
        return 1;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "granite: " << e.what() << "\n";
        return 1;
    } catch (const granite::ConfigError& e) {
        std::cerr << "granite: " << e.what() << "\n";
        return 1;
    } catch (const granite::DataError& e) {
        std::cerr << "granite: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "granite: " << e.what() << "\n";
        return 3;
    }
}
