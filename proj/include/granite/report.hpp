// SPDX-License-Identifier: Apache-2.0
//
// JSON / CSV serialization of model cards, walk-forward reports, training
// logs, and cycle logs. JSON uses insertion-ordered keys so identical runs
// serialize byte-identically; wall-time fields are the documented exception
// to reproducibility.

#pragma once

#include <fstream>

#include "json.hpp"

#include "granite/progressive.hpp"
#include "granite/walkforward.hpp"

namespace granite {

using Json = nlohmann::ordered_json;

inline Json shape_json(const Shape& s) {
    Json j = Json::array();
    for (std::size_t d : s) j.push_back(d);
    return j;
}

inline Json model_card_json(const ModelGraph& g) {
    const ParamAudit audit = audit_params(g);
    Json card;
    card["id"] = g.id;
    card["input_shape"] = shape_json(g.input_shape);
    card["output_len"] = g.output_len;
    card["epochs"] = g.train_config.epochs;
    card["batch_size"] = g.train_config.batch_size;
    Json blocks = Json::array();
    for (const auto& position : g.positions) {
        for (const Block& blk : position) {
            Json b;
            b["name"] = blk.name;
            b["frozen"] = blk.frozen;
            b["cycle_added"] = blk.cycle_added;
            Json layers = Json::array();
            for (const LayerState& st : blk.layers) layers.push_back(to_string(st.spec.kind));
            b["layers"] = layers;
            blocks.push_back(b);
        }
    }
    card["blocks"] = blocks;
    Json entries = Json::array();
    for (const ParamAuditEntry& e : audit.entries) {
        Json row;
        row["block"] = e.block;
        row["layer"] = e.layer;
        row["input_features"] = e.input_features;
        row["params"] = e.count;
        entries.push_back(row);
    }
    card["audit"] = entries;
    card["total_params"] = audit.total;
    return card;
}

inline Json trace_json(const ModelGraph& g) {
    Json rows = Json::array();
    for (const TraceEntry& e : shape_trace(g)) {
        Json row;
        row["label"] = e.label;
        row["shape"] = shape_json(e.shape);
        rows.push_back(row);
    }
    return rows;
}

inline Json walk_report_json(const WalkForwardReport& r) {
    Json j;
    j["agg_rmse"] = r.metrics.agg_rmse;
    j["day_rmse"] = r.metrics.day_rmse;
    j["ratio"] = r.metrics.ratio;
    j["wall_seconds"] = r.wall_seconds;
    Json weeks = Json::array();
    for (const WeekForecast& w : r.weeks) {
        Json row;
        row["week"] = w.week;
        row["pred"] = w.pred;
        row["actual"] = w.actual;
        weeks.push_back(row);
    }
    j["weeks"] = weeks;
    return j;
}

inline Json round_summary_json(const std::string& model, const RoundSummary& s) {
    Json j;
    j["model"] = model;
    Json rounds = Json::array();
    for (const WalkForwardReport& r : s.rounds) rounds.push_back(walk_report_json(r));
    j["rounds"] = rounds;
    Json mean;
    mean["agg_rmse"] = s.mean.agg_rmse;
    mean["day_rmse"] = s.mean.day_rmse;
    mean["ratio"] = s.mean.ratio;
    mean["wall_seconds"] = s.mean_wall_seconds;
    j["summary"] = mean;
    return j;
}

/// Table-11 layout: one row per round plus the mean row.
inline std::string round_summary_csv(const RoundSummary& s) {
    if (s.rounds.empty()) throw ConfigError("csv export: empty report");
    std::string out = "round,agg_rmse,day1,day2,day3,day4,day5,time_s\n";
    char buf[256];
    auto emit = [&](const std::string& label, const WalkMetrics& m, double wall) {
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f\n",
                      label.c_str(), m.agg_rmse, m.day_rmse[0], m.day_rmse[1], m.day_rmse[2],
                      m.day_rmse[3], m.day_rmse[4], wall);
        out += buf;
    };
    for (std::size_t r = 0; r < s.rounds.size(); ++r) {
        emit(std::to_string(r + 1), s.rounds[r].metrics, s.rounds[r].wall_seconds);
    }
    emit("mean", s.mean, s.mean_wall_seconds);
    return out;
}

inline Json train_log_json(const TrainLog& log) {
    Json epochs = Json::array();
    for (const EpochStat& e : log.epochs) {
        Json row;
        row["train_loss"] = e.train_loss;
        if (e.val_metric) row["val_metric"] = *e.val_metric;
        row["wall_seconds"] = e.wall_seconds;
        epochs.push_back(row);
    }
    Json j;
    j["epochs"] = epochs;
    return j;
}

inline Json cycle_log_json(const CycleLog& log) {
    Json j;
    j["mode"] = to_string(log.mode);
    Json cycles = Json::array();
    for (const CycleEntry& c : log.cycles) {
        Json entry;
        Json epochs = Json::array();
        for (const EpochPoint& p : c.epochs) {
            Json row;
            row["train"] = p.train_metric;
            row["val"] = p.val_metric;
            row["post_prune"] = p.post_prune;
            epochs.push_back(row);
        }
        entry["epochs"] = epochs;
        entry["prune_iterations"] = c.prune_iterations;
        entry["prune_capped"] = c.prune_capped;
        entry["best"] = c.best_val;
        cycles.push_back(entry);
    }
    j["cycles"] = cycles;
    j["max_val"] = log.max_val;
    j["bapc"] = log.bapc;
    return j;
}

/// Per-epoch layout for plotting learning curves with cycle boundaries.
inline std::string cycle_log_csv(const CycleLog& log) {
    if (log.cycles.empty()) throw ConfigError("csv export: empty cycle log");
    std::string out = "epoch,train,val,cycle,cycle_start,post_prune\n";
    char buf[160];
    std::size_t epoch = 0;
    for (std::size_t c = 0; c < log.cycles.size(); ++c) {
        for (std::size_t e = 0; e < log.cycles[c].epochs.size(); ++e, ++epoch) {
            const EpochPoint& p = log.cycles[c].epochs[e];
            std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%zu,%d,%d\n", epoch, p.train_metric,
                          p.val_metric, c, e == 0 ? 1 : 0, p.post_prune ? 1 : 0);
            out += buf;
        }
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
    if (!out) throw DataError("write to '" + path + "' failed");
}

}  // namespace granite
