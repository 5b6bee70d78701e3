// SPDX-License-Identifier: Apache-2.0
//
// Continual training over block graphs: curriculum ordering, progression
// (half-size block growth with cross-block concatenation and output
// regeneration), optional freezing of prior blocks, iterative global
// magnitude pruning with restore-on-degradation, and cycle/BAPC accounting.

#pragma once

#include "granite/train.hpp"

namespace granite {

// ---------------------------------------------------------------------------
// curricula

struct Curriculum {
    std::vector<Samples> sub_batches;   // sorted easiest-first
    std::vector<double> difficulty;     // non-decreasing
};

namespace detail {

inline Samples gather_rows(const Samples& s, const std::vector<std::size_t>& rows) {
    const std::size_t xs = s.X.size() / s.X.dim(0);
    const std::size_t ys = s.y.size() / s.y.dim(0);
    Shape xshape = s.X.shape();
    xshape[0] = rows.size();
    Shape yshape = s.y.shape();
    yshape[0] = rows.size();
    Samples out{Tensor(xshape), Tensor(yshape)};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < xs; ++j) out.X.values()[i * xs + j] = s.X.values()[rows[i] * xs + j];
        for (std::size_t j = 0; j < ys; ++j) out.y.values()[i * ys + j] = s.y.values()[rows[i] * ys + j];
    }
    return out;
}

/// Mean squared residual of an ordinary least-squares linear fit of the
/// flattened inputs (plus intercept) onto the targets. Solved by Gaussian
/// elimination on the (lightly ridged) normal equations.
inline double linear_fit_loss(const Samples& s) {
    const std::size_t n = s.X.dim(0);
    const std::size_t d = s.X.size() / n;
    const std::size_t outs = s.y.size() / n;
    const std::size_t cols = d + 1;
    std::vector<double> ata(cols * cols, 0.0);
    std::vector<double> aty(cols * outs, 0.0);
    auto x_at = [&](std::size_t r, std::size_t c) {
        return c == 0 ? 1.0 : s.X.values()[r * d + (c - 1)];
    };
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < cols; ++i) {
            const double xi = x_at(r, i);
            for (std::size_t j = 0; j < cols; ++j) ata[i * cols + j] += xi * x_at(r, j);
            for (std::size_t o = 0; o < outs; ++o) aty[i * outs + o] += xi * s.y.values()[r * outs + o];
        }
    }
    for (std::size_t i = 0; i < cols; ++i) ata[i * cols + i] += 1e-9;
    // solve ata * W = aty
    std::vector<double> w = aty;
    for (std::size_t col = 0; col < cols; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < cols; ++r) {
            if (std::abs(ata[r * cols + col]) > std::abs(ata[pivot * cols + col])) pivot = r;
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < cols; ++j) std::swap(ata[col * cols + j], ata[pivot * cols + j]);
            for (std::size_t o = 0; o < outs; ++o) std::swap(w[col * outs + o], w[pivot * outs + o]);
        }
        const double diag = ata[col * cols + col];
        for (std::size_t r = 0; r < cols; ++r) {
            if (r == col || ata[r * cols + col] == 0.0) continue;
            const double factor = ata[r * cols + col] / diag;
            for (std::size_t j = col; j < cols; ++j) ata[r * cols + j] -= factor * ata[col * cols + j];
            for (std::size_t o = 0; o < outs; ++o) w[r * outs + o] -= factor * w[col * outs + o];
        }
    }
    for (std::size_t i = 0; i < cols; ++i) {
        for (std::size_t o = 0; o < outs; ++o) w[i * outs + o] /= ata[i * cols + i];
    }
    double sq = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < outs; ++o) {
            double fit = 0.0;
            for (std::size_t i = 0; i < cols; ++i) fit += x_at(r, i) * w[i * outs + o];
            const double e = fit - s.y.values()[r * outs + o];
            sq += e * e;
        }
    }
    return sq / static_cast<double>(n * outs);
}

}  // namespace detail

/// Splits a batch into n sub-batches, scores each by linear-regression fit
/// loss, and orders them easiest-first. With categorical targets the split
/// is stratified and every sub-batch must contain every class.
inline Curriculum make_curricula(const Samples& batch, std::size_t n, std::uint64_t seed,
                                 bool categorical) {
    if (n < 1) throw ConfigError("make_curricula: need n >= 1");
    if (batch.count() < n) {
        throw DataError("make_curricula: batch of " + std::to_string(batch.count()) +
                        " cannot fill " + std::to_string(n) + " sub-batches");
    }
    std::vector<std::vector<std::size_t>> groups(n);
    if (categorical) {
        std::map<long, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < batch.count(); ++i) {
            by_class[static_cast<long>(sample_y(batch, i)[0])].push_back(i);
        }
        for (auto& [cls, rows] : by_class) {
            if (rows.size() < n) {
                throw DataError("make_curricula: class " + std::to_string(cls) + " has " +
                                std::to_string(rows.size()) + " samples, cannot cover " +
                                std::to_string(n) + " sub-batches");
            }
            std::mt19937_64 rng(mix_seed(seed, 40 + static_cast<std::uint64_t>(cls)));
            std::shuffle(rows.begin(), rows.end(), rng);
            for (std::size_t i = 0; i < rows.size(); ++i) groups[i % n].push_back(rows[i]);
        }
        for (auto& rows : groups) std::sort(rows.begin(), rows.end());
    } else {
        std::vector<std::size_t> order(batch.count());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(mix_seed(seed, 41));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < order.size(); ++i) groups[i % n].push_back(order[i]);
    }
    std::vector<std::pair<double, Samples>> scored;
    for (const auto& rows : groups) {
        Samples sub = detail::gather_rows(batch, rows);
        scored.emplace_back(detail::linear_fit_loss(sub), std::move(sub));
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    Curriculum c;
    for (auto& [score, sub] : scored) {
        c.difficulty.push_back(score);
        c.sub_batches.push_back(std::move(sub));
    }
    return c;
}

// ---------------------------------------------------------------------------
// progression

namespace detail {

inline LayerSpec halved(const LayerSpec& spec) {
    LayerSpec s = spec;
    switch (spec.kind) {
        case LayerKind::Conv1D:
        case LayerKind::Dense:
        case LayerKind::LSTM:
        case LayerKind::TimeDistributedDense:
        case LayerKind::ConvLSTM1D:
            s.units = (spec.units + 1) / 2;
            break;
        default:
            break;
    }
    return s;
}

inline std::vector<LayerSpec> block_specs(const Block& blk) {
    std::vector<LayerSpec> specs;
    for (const LayerState& st : blk.layers) specs.push_back(st.spec);
    return specs;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace detail

/// One progression: at every non-output layer position, append a new block
/// copying the original block's layer kinds at half width (ceil). The new
/// first-position block reads the raw input; each deeper new block reads the
/// concatenation of all blocks now present at the previous position. The
/// output block is regenerated entirely at its original size.
inline void progress(ModelGraph& g, int cycle, std::uint64_t seed) {
    if (g.positions.size() < 2) {
        throw ConfigError("progress: graph needs at least one non-output position");
    }
    for (std::size_t p = 0; p + 1 < g.positions.size(); ++p) {
        const Block& original = g.positions[p][0];
        std::vector<LayerSpec> specs;
        for (const LayerSpec& s : detail::block_specs(original)) specs.push_back(detail::halved(s));
        Shape in;
        Block fresh;
        std::mt19937_64 rng(mix_seed(seed, 7000 + 31 * static_cast<std::uint64_t>(cycle) + p));
        if (p == 0) {
            in = g.input_shape;
        } else {
            // concat of all previous-position block outputs, post-growth
            auto ins_now = graph_input_shapes(g);
            std::size_t width = 0;
            Shape lead;
            for (std::size_t b = 0; b < g.positions[p - 1].size(); ++b) {
                Shape os = block_output_shape(g.positions[p - 1][b], ins_now[p - 1][b]);
                if (lead.empty()) lead = os;
                width += os.back();
            }
            in = lead;
            in.back() = width;
        }
        fresh = build_block(original.name + "@c" + std::to_string(cycle), specs, in, rng, cycle);
        if (p > 0) fresh.sources = detail::all_indices(g.positions[p - 1].size());
        g.positions[p].push_back(std::move(fresh));
    }
    // regenerate the output block at its original size, reading everything
    {
        const std::size_t last_hidden = g.positions.size() - 2;
        Block& out_blk = g.positions.back()[0];
        std::vector<LayerSpec> specs = detail::block_specs(out_blk);
        auto ins_now = graph_input_shapes(g);
        std::size_t width = 0;
        Shape lead;
        for (std::size_t b = 0; b < g.positions[last_hidden].size(); ++b) {
            Shape os = block_output_shape(g.positions[last_hidden][b], ins_now[last_hidden][b]);
            if (lead.empty()) lead = os;
            width += os.back();
        }
        Shape in = lead;
        in.back() = width;
        std::mt19937_64 rng(mix_seed(seed, 7700 + static_cast<std::uint64_t>(cycle)));
        Block fresh = build_block(out_blk.name, specs, in, rng, cycle);
        fresh.sources = detail::all_indices(g.positions[last_hidden].size());
        g.positions.back()[0] = std::move(fresh);
    }
    check_wiring(g);
}

/// Freezes every block created before `cycle`; the output block never
/// freezes. Idempotent.
inline void freeze_priors(ModelGraph& g, int cycle) {
    for (std::size_t p = 0; p + 1 < g.positions.size(); ++p) {
        for (Block& blk : g.positions[p]) {
            if (blk.cycle_added < cycle) blk.frozen = true;
        }
    }
    g.positions.back()[0].frozen = false;
}

/// Rebuilds every layer state in place from its spec (fresh initialization,
/// masks cleared, nothing frozen). The static comparison mode resets with
/// this between cycles.
inline void reinit_graph(ModelGraph& g, std::uint64_t seed) {
    auto ins = graph_input_shapes(g);
    std::mt19937_64 rng(mix_seed(seed, 23));
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            Block& blk = g.positions[p][b];
            Shape in = ins[p][b];
            for (LayerState& st : blk.layers) {
                const LayerSpec spec = st.spec;
                st = build_layer(spec, in, rng);
                in = layer_output_shape(spec, in);
            }
            blk.frozen = false;
            blk.cycle_added = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// pruning

/// Number of weights still eligible for pruning: unmasked entries of weight
/// tensors (biases excluded) in non-frozen blocks/layers.
inline std::size_t prunable_count(const ModelGraph& g) {
    std::size_t n = 0;
    for (const ParamRef& r : list_params(g)) {
        if (!r.is_weight || r.frozen || param_layer(g, r).frozen) continue;
        const Tensor& w = param_tensor(g, r);
        const auto* mask = param_mask(g, r);
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!mask || !(*mask)[i]) ++n;
        }
    }
    return n;
}

/// One global magnitude-pruning step: ranks every currently prunable weight
/// by |w| ascending (ties by tensor order then flat index) and masks exactly
/// ceil(q * prunable) of them, zeroing the weights. Returns the number newly
/// masked.
inline std::size_t prune_step(ModelGraph& g, double q) {
    if (q <= 0.0 || q >= 1.0) throw ConfigError("prune fraction must lie in (0,1)");
    struct Candidate {
        double mag;
        std::size_t tensor_id;
        std::size_t flat;
    };
    std::vector<Candidate> candidates;
    const auto refs = list_params(g);
    for (std::size_t t = 0; t < refs.size(); ++t) {
        const ParamRef& r = refs[t];
        if (!r.is_weight || r.frozen || param_layer(g, r).frozen) continue;
        const Tensor& w = param_tensor(g, r);
        const auto* mask = param_mask(g, r);
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (mask && (*mask)[i]) continue;
            candidates.push_back({std::abs(w[i]), t, i});
        }
    }
    if (candidates.empty()) throw ConfigError("prune_step: nothing prunable");
    const auto k = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(candidates.size())));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                          if (a.mag != b.mag) return a.mag < b.mag;
                          if (a.tensor_id != b.tensor_id) return a.tensor_id < b.tensor_id;
                          return a.flat < b.flat;
                      });
    for (std::size_t i = 0; i < k; ++i) {
        const ParamRef& r = refs[candidates[i].tensor_id];
        LayerState& layer = param_layer(g, r);
        auto& bits = layer.mask.by_param[r.name];
        if (bits.empty()) bits.assign(param_tensor(g, r).size(), 0);
        bits[candidates[i].flat] = 1;
        param_tensor(g, r)[candidates[i].flat] = 0.0;
    }
    return k;
}

/// Masks every weight of the named block, or — given an input feature
/// index — the weights fed by that feature within the block (dead units
/// propagate through consecutive dense layers). Downstream blocks are
/// unfrozen so training can absorb the removal.
struct FeatureSelector {
    std::string block;
    std::optional<std::size_t> input_feature;
};

inline std::size_t targeted_prune(ModelGraph& g, const FeatureSelector& sel) {
    std::size_t pos = 0, idx = 0;
    bool found = false;
    for (std::size_t p = 0; p < g.positions.size() && !found; ++p) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            if (g.positions[p][b].name == sel.block) {
                pos = p;
                idx = b;
                found = true;
                break;
            }
        }
    }
    if (!found) throw ConfigError("targeted_prune: no block named '" + sel.block + "'");
    Block& blk = g.positions[pos][idx];
    std::size_t masked = 0;
    auto mask_at = [&](LayerState& st, const std::string& name, std::size_t flat) {
        auto& bits = st.mask.by_param[name];
        if (bits.empty()) bits.assign(st.params.at(name).size(), 0);
        if (!bits[flat]) {
            bits[flat] = 1;
            ++masked;
        }
        st.params.at(name)[flat] = 0.0;
    };
    if (!sel.input_feature) {
        for (LayerState& st : blk.layers) {
            for (auto& [name, tensor] : st.params) {
                if (name == "b") continue;
                for (std::size_t i = 0; i < tensor.size(); ++i) mask_at(st, name, i);
            }
        }
    } else {
        const std::size_t feat = *sel.input_feature;
        if (pos != 0) {
            throw ConfigError("targeted_prune: feature selectors apply to input blocks only");
        }
        // first parameterized layer decides how the feature enters
        std::size_t li = 0;
        for (; li < blk.layers.size(); ++li) {
            if (!blk.layers[li].params.empty()) break;
        }
        if (li == blk.layers.size()) {
            throw ConfigError("targeted_prune: block '" + sel.block + "' has no parameters");
        }
        LayerState& st = blk.layers[li];
        switch (st.spec.kind) {
            case LayerKind::Dense: {
                Tensor& w = st.params.at("W");
                if (feat >= w.dim(0)) {
                    throw ConfigError("targeted_prune: feature " + std::to_string(feat) +
                                      " out of range for width " + std::to_string(w.dim(0)));
                }
                for (std::size_t j = 0; j < w.dim(1); ++j) mask_at(st, "W", feat * w.dim(1) + j);
                break;
            }
            case LayerKind::Conv1D: {
                Tensor& k = st.params.at("K");
                if (feat >= k.dim(2)) {
                    throw ConfigError("targeted_prune: channel " + std::to_string(feat) +
                                      " out of range");
                }
                for (std::size_t f = 0; f < k.dim(0); ++f) {
                    for (std::size_t u = 0; u < k.dim(1); ++u) {
                        mask_at(st, "K", (f * k.dim(1) + u) * k.dim(2) + feat);
                    }
                }
                break;
            }
            case LayerKind::LSTM: {
                Tensor& wx = st.params.at("Wx");
                if (feat >= wx.dim(0)) {
                    throw ConfigError("targeted_prune: feature " + std::to_string(feat) +
                                      " out of range");
                }
                for (std::size_t q = 0; q < wx.dim(1); ++q) mask_at(st, "Wx", feat * wx.dim(1) + q);
                break;
            }
            case LayerKind::ConvLSTM1D: {
                Tensor& wx = st.params.at("Wx");
                if (feat >= wx.dim(2)) {
                    throw ConfigError("targeted_prune: channel " + std::to_string(feat) +
                                      " out of range");
                }
                for (std::size_t f = 0; f < wx.dim(0); ++f) {
                    for (std::size_t u = 0; u < wx.dim(1); ++u) {
                        mask_at(st, "Wx", (f * wx.dim(1) + u) * wx.dim(2) + feat);
                    }
                }
                break;
            }
            default:
                throw ConfigError("targeted_prune: unsupported first layer kind");
        }
        // dead-unit propagation over consecutive dense layers: a unit whose
        // incoming column is fully masked loses its outgoing row too
        for (std::size_t l = li; l + 1 < blk.layers.size(); ++l) {
            LayerState& cur = blk.layers[l];
            LayerState& nxt = blk.layers[l + 1];
            if (cur.spec.kind != LayerKind::Dense || nxt.spec.kind != LayerKind::Dense) break;
            const Tensor& w = cur.params.at("W");
            const auto it = cur.mask.by_param.find("W");
            if (it == cur.mask.by_param.end()) break;
            Tensor& wn = nxt.params.at("W");
            for (std::size_t j = 0; j < w.dim(1); ++j) {
                bool dead = true;
                for (std::size_t i = 0; i < w.dim(0) && dead; ++i) {
                    if (!it->second[i * w.dim(1) + j]) dead = false;
                }
                if (!dead) continue;
                for (std::size_t o = 0; o < wn.dim(1); ++o) mask_at(nxt, "W", j * wn.dim(1) + o);
            }
        }
    }
    if (masked == 0) throw ConfigError("targeted_prune: selector matched no parameters");
    for (std::size_t p = pos; p < g.positions.size(); ++p) {
        for (Block& b : g.positions[p]) b.frozen = false;
    }
    return masked;
}

// ---------------------------------------------------------------------------
// cycles

enum class CycleMode { Static, ProgressiveFrozen, ProgressiveFree };

inline const char* to_string(CycleMode m) {
    switch (m) {
        case CycleMode::Static: return "static";
        case CycleMode::ProgressiveFrozen: return "frozen";
        case CycleMode::ProgressiveFree: return "free";
    }
    return "?";
}

struct CycleConfig {
    std::size_t epochs_per_cycle = 10;
    double prune_fraction = 0.10;
    std::size_t post_prune_epochs = 10;
    double post_prune_lr_scale = 0.1;
    AdamConfig adam = AdamConfig::progressive();
    TrainConfig train;  // loss kind, batch size, seed, metric
    std::size_t max_prune_iterations = 50;

    void validate() const {
        if (epochs_per_cycle < 1) throw ConfigError("cycles: epochs_per_cycle must be >= 1");
        if (prune_fraction <= 0.0 || prune_fraction >= 1.0) {
            throw ConfigError("cycles: prune fraction must lie in (0,1)");
        }
        if (post_prune_epochs < 1) throw ConfigError("cycles: post_prune_epochs must be >= 1");
        adam.validate();
    }
};

struct DataBatch {
    Samples train;
    Samples val;
};

struct EpochPoint {
    double train_metric = 0.0;
    double val_metric = 0.0;
    bool post_prune = false;
};

struct CycleEntry {
    std::vector<EpochPoint> epochs;
    std::size_t prune_iterations = 0;
    bool prune_capped = false;
    double best_val = 0.0;
};

struct CycleLog {
    CycleMode mode = CycleMode::Static;
    std::vector<CycleEntry> cycles;
    double max_val = 0.0;  // max over every epoch of every cycle
    double bapc = 0.0;     // mean over cycles of best-per-cycle
};

/// 2-D Gaussian-cluster classification stream whose class means drift a
/// little from batch to batch. The desk-scale stand-in for a clinical feed:
/// related tasks arriving over time.
inline std::vector<DataBatch> gaussian_stream(std::size_t n_batches, std::size_t per_batch,
                                              std::size_t train_count, std::size_t n_classes,
                                              std::uint64_t seed) {
    if (train_count >= per_batch) throw ConfigError("gaussian_stream: need train_count < per_batch");
    if (n_classes < 2) throw ConfigError("gaussian_stream: need >= 2 classes");
    std::vector<DataBatch> batches;
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::mt19937_64 rng(mix_seed(seed, 600 + b));
        std::normal_distribution<double> gauss(0.0, 0.45);
        const double phase = 0.15 * static_cast<double>(b);  // drift across batches
        Tensor x({per_batch, 2});
        Tensor y({per_batch});
        for (std::size_t i = 0; i < per_batch; ++i) {
            const std::size_t cls = i % n_classes;
            const double angle = two_pi * static_cast<double>(cls) / static_cast<double>(n_classes) + phase;
            x.at(i, 0) = 1.5 * std::cos(angle) + gauss(rng);
            x.at(i, 1) = 1.5 * std::sin(angle) + gauss(rng);
            y[i] = static_cast<double>(cls);
        }
        // interleaved classes: any prefix/suffix split keeps every class
        DataBatch batch;
        std::vector<std::size_t> train_rows, val_rows;
        for (std::size_t i = 0; i < per_batch; ++i) {
            (i < train_count ? train_rows : val_rows).push_back(i);
        }
        Samples all{x, y};
        batch.train = detail::gather_rows(all, train_rows);
        batch.val = detail::gather_rows(all, val_rows);
        batches.push_back(std::move(batch));
    }
    return batches;
}

/// Splits one sample set into n contiguous batches, each with a trailing
/// validation share. Used to turn windowed forecasting data into a
/// continual-training stream.
inline std::vector<DataBatch> split_into_batches(const Samples& all, std::size_t n_batches,
                                                 double train_fraction = 0.8) {
    if (n_batches < 1) throw ConfigError("split_into_batches: need n >= 1");
    const std::size_t n = all.count();
    if (n < n_batches * 5) {
        throw DataError("split_into_batches: " + std::to_string(n) + " samples is too few for " +
                        std::to_string(n_batches) + " batches");
    }
    std::vector<DataBatch> batches;
    for (std::size_t b = 0; b < n_batches; ++b) {
        const std::size_t lo = b * n / n_batches;
        const std::size_t hi = (b + 1) * n / n_batches;
        const std::size_t cut = lo + static_cast<std::size_t>(train_fraction * static_cast<double>(hi - lo));
        std::vector<std::size_t> train_rows, val_rows;
        for (std::size_t i = lo; i < hi; ++i) (i < cut ? train_rows : val_rows).push_back(i);
        if (train_rows.empty() || val_rows.empty()) {
            throw DataError("split_into_batches: batch " + std::to_string(b) + " has an empty split");
        }
        batches.push_back({detail::gather_rows(all, train_rows), detail::gather_rows(all, val_rows)});
    }
    return batches;
}

namespace detail {

struct GraphSnapshot {
    ModelGraph graph;
    AdamState opt;
};

inline double mean_tail_val(const std::vector<EpochPoint>& epochs, std::size_t window) {
    const std::size_t n = std::min(window, epochs.size());
    double acc = 0.0;
    for (std::size_t i = epochs.size() - n; i < epochs.size(); ++i) acc += epochs[i].val_metric;
    return acc / static_cast<double>(n);
}

inline void run_epochs(ModelGraph& g, const DataBatch& batch, const CycleConfig& cfg,
                       const AdamConfig& adam, AdamState& opt, std::size_t epochs,
                       std::uint64_t stream, bool post_prune, std::vector<EpochPoint>& sink) {
    for (std::size_t e = 0; e < epochs; ++e) {
        TrainConfig tc = cfg.train;
        tc.epochs = 1;
        tc.seed = mix_seed(cfg.train.seed, stream + e);
        train(g, batch.train, tc, adam, nullptr, &opt);
        EpochPoint pt;
        pt.train_metric = evaluate(g, batch.train, cfg.train.val_metric);
        pt.val_metric = evaluate(g, batch.val, cfg.train.val_metric);
        pt.post_prune = post_prune;
        sink.push_back(pt);
    }
}

}  // namespace detail

struct PruneLoopResult {
    std::size_t iterations = 0;
    bool capped = false;
};

/// Iterative prune/retrain: snapshot, prune once, retrain post_prune_epochs
/// at the scaled learning rate, and compare the mean validation metric of
/// those epochs against the previous window. Degradation restores the
/// snapshot (weights, masks, optimizer moments) bit-exactly and stops.
/// `baseline_mean` seeds the first comparison (the tail of main training).
inline PruneLoopResult prune_loop(ModelGraph& g, const DataBatch& batch, const CycleConfig& cfg,
                                  AdamState& opt, double baseline_mean,
                                  std::vector<EpochPoint>& epoch_sink, std::uint64_t stream) {
    cfg.validate();
    AdamConfig post_adam = cfg.adam;
    post_adam.lr *= cfg.post_prune_lr_scale;
    PruneLoopResult res;
    double prev_mean = baseline_mean;
    while (res.iterations < cfg.max_prune_iterations) {
        if (prunable_count(g) == 0) break;
        detail::GraphSnapshot snap{g, opt};
        prune_step(g, cfg.prune_fraction);
        ++res.iterations;
        std::vector<EpochPoint> window;
        detail::run_epochs(g, batch, cfg, post_adam, opt, cfg.post_prune_epochs,
                           stream + 100 * res.iterations, true, window);
        double mean_val = 0.0;
        for (const EpochPoint& p : window) mean_val += p.val_metric;
        mean_val /= static_cast<double>(window.size());
        for (const EpochPoint& p : window) epoch_sink.push_back(p);
        if (mean_val < prev_mean) {
            g = std::move(snap.graph);
            opt = std::move(snap.opt);
            return res;
        }
        prev_mean = mean_val;
    }
    res.capped = res.iterations >= cfg.max_prune_iterations;
    return res;
}

/// Runs the full continual-training schedule over ordered batches. Static
/// mode resets the model every cycle; the progressive modes grow it, train,
/// then run the prune loop (with priors frozen in frozen mode).
inline CycleLog run_cycles(const ModelGraph& initial, const std::vector<DataBatch>& batches,
                           CycleMode mode, const CycleConfig& cfg) {
    cfg.validate();
    if (batches.empty()) throw DataError("run_cycles: no batches");
    CycleLog log;
    log.mode = mode;
    ModelGraph g = initial;
    AdamState opt = AdamState::for_graph(g);
    for (std::size_t c = 0; c < batches.size(); ++c) {
        const auto cycle = static_cast<int>(c);
        if (mode == CycleMode::Static) {
            reinit_graph(g, mix_seed(cfg.train.seed, 900 + c));
            opt = AdamState::for_graph(g);
        } else if (c > 0) {
            progress(g, cycle, cfg.train.seed);
            if (mode == CycleMode::ProgressiveFrozen) freeze_priors(g, cycle);
            opt = AdamState::for_graph(g);
        }
        CycleEntry entry;
        detail::run_epochs(g, batches[c], cfg, cfg.adam, opt, cfg.epochs_per_cycle,
                           10000 * (c + 1), false, entry.epochs);
        if (mode != CycleMode::Static) {
            const double baseline = detail::mean_tail_val(entry.epochs, cfg.post_prune_epochs);
            PruneLoopResult pr =
                prune_loop(g, batches[c], cfg, opt, baseline, entry.epochs, 10000 * (c + 1) + 5000);
            entry.prune_iterations = pr.iterations;
            entry.prune_capped = pr.capped;
        }
        entry.best_val = entry.epochs.front().val_metric;
        for (const EpochPoint& p : entry.epochs) entry.best_val = std::max(entry.best_val, p.val_metric);
        log.cycles.push_back(std::move(entry));
    }
    log.max_val = log.cycles.front().best_val;
    for (const CycleEntry& e : log.cycles) {
        log.bapc += e.best_val / static_cast<double>(log.cycles.size());
        log.max_val = std::max(log.max_val, e.best_val);
    }
    return log;
}

}  // namespace granite
