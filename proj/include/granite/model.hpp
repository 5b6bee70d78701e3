// SPDX-License-Identifier: Apache-2.0
//
// Layered block graphs and exact builders for the ten forecasting
// architectures, plus the parameter auditor and the symbolic shape tracer
// that pin every intermediate shape.
//
// A graph is a list of layer positions; each position holds one or more
// blocks (ordered layer stacks). A block at position p > 0 reads the
// concatenation of the outputs of its source blocks at position p-1;
// position-0 blocks read the raw input, optionally restricted to a channel
// subset (the multi-headed CNN gives each branch one input variable).

#pragma once

#include <array>
#include <optional>

#include "granite/layers.hpp"

namespace granite {

enum class ModelId {
    CNN_UNIV_5,
    CNN_UNIV_10,
    CNN_MULTV_10,
    CNN_MULTH_10,
    LSTM_UNIV_5,
    LSTM_UNIV_10,
    LSTM_UNIV_ED_10,
    LSTM_MULTV_ED_10,
    LSTM_UNIV_CNN_10,
    LSTM_UNIV_CONV_10,
};

inline constexpr std::array<ModelId, 10> kAllModels = {
    ModelId::CNN_UNIV_5,      ModelId::CNN_UNIV_10,      ModelId::CNN_MULTV_10,
    ModelId::CNN_MULTH_10,    ModelId::LSTM_UNIV_5,      ModelId::LSTM_UNIV_10,
    ModelId::LSTM_UNIV_ED_10, ModelId::LSTM_MULTV_ED_10, ModelId::LSTM_UNIV_CNN_10,
    ModelId::LSTM_UNIV_CONV_10,
};

inline const char* to_string(ModelId id) {
    switch (id) {
        case ModelId::CNN_UNIV_5: return "CNN_UNIV_5";
        case ModelId::CNN_UNIV_10: return "CNN_UNIV_10";
        case ModelId::CNN_MULTV_10: return "CNN_MULTV_10";
        case ModelId::CNN_MULTH_10: return "CNN_MULTH_10";
        case ModelId::LSTM_UNIV_5: return "LSTM_UNIV_5";
        case ModelId::LSTM_UNIV_10: return "LSTM_UNIV_10";
        case ModelId::LSTM_UNIV_ED_10: return "LSTM_UNIV_ED_10";
        case ModelId::LSTM_MULTV_ED_10: return "LSTM_MULTV_ED_10";
        case ModelId::LSTM_UNIV_CNN_10: return "LSTM_UNIV_CNN_10";
        case ModelId::LSTM_UNIV_CONV_10: return "LSTM_UNIV_CONV_10";
    }
    return "?";
}

inline std::optional<ModelId> parse_model_id(const std::string& name) {
    for (ModelId id : kAllModels) {
        if (name == to_string(id)) return id;
    }
    return std::nullopt;
}

/// Published audit total for each architecture.
inline std::size_t expected_total(ModelId id) {
    switch (id) {
        case ModelId::CNN_UNIV_5: return 289;
        case ModelId::CNN_UNIV_10: return 769;
        case ModelId::CNN_MULTV_10: return 7373;
        case ModelId::CNN_MULTH_10: return 132965;
        case ModelId::LSTM_UNIV_5: return 182235;
        case ModelId::LSTM_UNIV_10: return 182235;
        case ModelId::LSTM_UNIV_ED_10: return 502601;
        case ModelId::LSTM_MULTV_ED_10: return 505801;
        case ModelId::LSTM_UNIV_CNN_10: return 347209;
        case ModelId::LSTM_UNIV_CONV_10: return 384777;
    }
    return 0;
}

struct TrainSettings {
    std::size_t epochs = 20;
    std::size_t batch_size = 16;
};

struct Block {
    std::string name;
    std::vector<LayerState> layers;
    bool frozen = false;
    int cycle_added = 0;
    std::vector<std::size_t> input_channels;  // position 0 only; empty = all channels
    std::vector<std::size_t> sources;         // positions > 0: block indices at position-1
};

struct ModelGraph {
    std::string id = "custom";
    Shape input_shape;
    std::size_t output_len = 5;
    std::vector<std::vector<Block>> positions;
    TrainSettings train_config;
};

// ---------------------------------------------------------------------------
// shape bookkeeping

inline Shape select_channels_shape(const Shape& input, const std::vector<std::size_t>& channels) {
    if (channels.empty()) return input;
    if (input.size() == 1) return {channels.size()};
    Shape s = input;
    s.back() = channels.size();
    return s;
}

inline Tensor select_channels(const Tensor& input, const std::vector<std::size_t>& channels) {
    if (channels.empty()) return input;
    const std::size_t w = input.shape().back();
    const std::size_t rows = input.size() / w;
    Tensor out(select_channels_shape(input.shape(), channels));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < channels.size(); ++j) {
            if (channels[j] >= w) {
                throw ShapeError("channel " + std::to_string(channels[j]) + " out of range for " +
                                 shape_str(input.shape()));
            }
            out.values()[r * channels.size() + j] = input.values()[r * w + channels[j]];
        }
    }
    return out;
}

inline Shape block_output_shape(const Block& block, Shape in) {
    for (const LayerState& st : block.layers) in = layer_output_shape(st.spec, in);
    return in;
}

/// Input shape each block sees, per position. Throws on inconsistent wiring.
inline std::vector<std::vector<Shape>> graph_input_shapes(const ModelGraph& g) {
    std::vector<std::vector<Shape>> ins(g.positions.size());
    std::vector<Shape> prev_out;
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        std::vector<Shape> outs;
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            const Block& blk = g.positions[p][b];
            Shape in;
            if (p == 0) {
                in = select_channels_shape(g.input_shape, blk.input_channels);
            } else {
                if (blk.sources.empty()) {
                    throw ShapeError("block '" + blk.name + "' at position " + std::to_string(p) +
                                     " has no sources");
                }
                std::size_t width = 0;
                Shape lead;
                for (std::size_t s : blk.sources) {
                    if (s >= prev_out.size()) {
                        throw ShapeError("block '" + blk.name + "' references missing source " +
                                         std::to_string(s));
                    }
                    const Shape& os = prev_out[s];
                    if (lead.empty()) {
                        lead = os;
                    } else if (os.size() != lead.size() ||
                               !std::equal(lead.begin(), lead.end() - 1, os.begin())) {
                        throw ShapeError("block '" + blk.name + "': source shapes " + shape_str(lead) +
                                         " and " + shape_str(os) + " cannot concatenate");
                    }
                    width += os.back();
                }
                in = lead;
                in.back() = width;
            }
            ins[p].push_back(in);
            outs.push_back(block_output_shape(blk, in));
        }
        prev_out = std::move(outs);
    }
    return ins;
}

/// Verifies wiring against the actually-allocated weight dimensions.
inline void check_wiring(const ModelGraph& g) {
    if (g.positions.empty() || g.positions.back().size() != 1) {
        throw ShapeError("graph must end in exactly one output block");
    }
    auto ins = graph_input_shapes(g);
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            Shape in = ins[p][b];
            for (const LayerState& st : g.positions[p][b].layers) {
                const std::size_t feat = input_feature_count(st.spec, in);
                std::size_t built = feat;
                switch (st.spec.kind) {
                    case LayerKind::Dense:
                    case LayerKind::TimeDistributedDense:
                        built = st.params.at("W").dim(0);
                        break;
                    case LayerKind::Conv1D:
                        built = st.params.at("K").dim(2);
                        break;
                    case LayerKind::LSTM:
                        built = st.params.at("Wx").dim(0);
                        break;
                    case LayerKind::ConvLSTM1D:
                        built = st.params.at("Wx").dim(2);
                        break;
                    default:
                        break;
                }
                if (built != feat) {
                    throw ShapeError("block '" + g.positions[p][b].name + "' layer " +
                                     to_string(st.spec.kind) + " built for " + std::to_string(built) +
                                     " input features but wiring supplies " + std::to_string(feat));
                }
                in = layer_output_shape(st.spec, in);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// construction

inline Block build_block(std::string name, const std::vector<LayerSpec>& specs, Shape in,
                         std::mt19937_64& rng, int cycle_added = 0) {
    Block blk;
    blk.name = std::move(name);
    blk.cycle_added = cycle_added;
    for (const LayerSpec& spec : specs) {
        blk.layers.push_back(build_layer(spec, in, rng));
        in = layer_output_shape(spec, in);
    }
    return blk;
}

/// Simple MLP: one block per hidden width, then the output block. The
/// progressive experiments grow these.
inline ModelGraph build_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
                            std::size_t out_units, Activation out_act, std::uint64_t seed,
                            Activation hidden_act = Activation::Relu) {
    ModelGraph g;
    g.id = "mlp";
    g.input_shape = input_shape;
    g.output_len = out_units;
    std::mt19937_64 rng(mix_seed(seed, 0));
    Shape in = input_shape;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        Block blk = build_block("hidden_" + std::to_string(i + 1),
                                {LayerSpec::dense(hidden[i], hidden_act)}, in, rng);
        if (i > 0) blk.sources = {0};
        g.positions.push_back({std::move(blk)});
        in = {hidden[i]};
    }
    Block out = build_block("output", {LayerSpec::dense(out_units, out_act)}, in, rng);
    if (!hidden.empty()) out.sources = {0};
    g.positions.push_back({std::move(out)});
    return g;
}

inline ModelGraph build_model(ModelId id, std::uint64_t seed) {
    ModelGraph g;
    g.id = to_string(id);
    g.output_len = 5;
    std::mt19937_64 rng(mix_seed(seed, 17));
    using LS = LayerSpec;
    const Activation relu = Activation::Relu;
    const Activation sig = Activation::Sigmoid;

    auto chain = [&](std::initializer_list<std::pair<const char*, std::vector<LayerSpec>>> blocks) {
        Shape in = g.input_shape;
        std::size_t p = 0;
        for (const auto& [name, specs] : blocks) {
            Block blk = build_block(name, specs, in, rng);
            if (p > 0) blk.sources = {0};
            in = block_output_shape(blk, in);
            g.positions.push_back({std::move(blk)});
            ++p;
        }
    };

    switch (id) {
        case ModelId::CNN_UNIV_5:
            g.input_shape = {5, 1};
            g.train_config = {20, 4};
            chain({{"features", {LS::conv1d(16, 3, relu), LS::maxpool1d(), LS::flatten()}},
                   {"head", {LS::dense(10, relu), LS::dense(5, sig)}}});
            break;
        case ModelId::CNN_UNIV_10:
            g.input_shape = {10, 1};
            g.train_config = {70, 16};
            chain({{"features", {LS::conv1d(16, 3, relu), LS::maxpool1d(), LS::flatten()}},
                   {"head", {LS::dense(10, relu), LS::dense(5, sig)}}});
            break;
        case ModelId::CNN_MULTV_10:
            g.input_shape = {10, 5};
            g.train_config = {70, 16};
            chain({{"features",
                    {LS::conv1d(32, 3, relu), LS::conv1d(32, 3, relu), LS::maxpool1d(),
                     LS::conv1d(16, 3, relu), LS::maxpool1d(), LS::flatten()}},
                   {"head", {LS::dense(100, relu), LS::dense(5, sig)}}});
            break;
        case ModelId::CNN_MULTH_10: {
            g.input_shape = {10, 5};
            g.train_config = {70, 16};
            std::vector<Block> branches;
            for (std::size_t v = 0; v < 5; ++v) {
                Block blk = build_block("branch_" + std::to_string(v + 1),
                                        {LS::conv1d(32, 3, relu), LS::conv1d(32, 3, relu),
                                         LS::maxpool1d(), LS::flatten()},
                                        {10, 1}, rng);
                blk.input_channels = {v};
                branches.push_back(std::move(blk));
            }
            g.positions.push_back(std::move(branches));
            Block head = build_block(
                "head", {LS::dense(200, relu), LS::dense(100, relu), LS::dense(5, sig)}, {480}, rng);
            head.sources = {0, 1, 2, 3, 4};
            g.positions.push_back({std::move(head)});
            break;
        }
        case ModelId::LSTM_UNIV_5:
            g.input_shape = {5, 1};
            g.train_config = {20, 16};
            chain({{"recurrent", {LS::lstm(200)}},
                   {"head", {LS::dense(100, relu), LS::dense(5, relu), LS::dense(5, sig)}}});
            break;
        case ModelId::LSTM_UNIV_10:
            g.input_shape = {10, 1};
            g.train_config = {20, 16};
            chain({{"recurrent", {LS::lstm(200)}},
                   {"head", {LS::dense(100, relu), LS::dense(5, relu), LS::dense(5, sig)}}});
            break;
        case ModelId::LSTM_UNIV_ED_10:
            g.input_shape = {10, 1};
            g.train_config = {70, 16};
            chain({{"encoder", {LS::lstm(200), LS::repeat_vector(5)}},
                   {"decoder", {LS::lstm(200, true)}},
                   {"head", {LS::time_dist_dense(100, relu), LS::time_dist_dense(1, sig)}}});
            break;
        case ModelId::LSTM_MULTV_ED_10:
            g.input_shape = {10, 5};
            g.train_config = {20, 16};
            chain({{"encoder", {LS::lstm(200), LS::repeat_vector(5)}},
                   {"decoder", {LS::lstm(200, true)}},
                   {"head", {LS::time_dist_dense(100, relu), LS::time_dist_dense(1, sig)}}});
            break;
        case ModelId::LSTM_UNIV_CNN_10:
            g.input_shape = {10, 1};
            g.train_config = {20, 16};
            chain({{"encoder",
                    {LS::conv1d(64, 3, relu), LS::conv1d(64, 3, relu), LS::maxpool1d(),
                     LS::flatten(), LS::repeat_vector(5)}},
                   {"decoder", {LS::lstm(200, true)}},
                   {"head", {LS::time_dist_dense(100, relu), LS::time_dist_dense(1, sig)}}});
            break;
        case ModelId::LSTM_UNIV_CONV_10:
            g.input_shape = {10, 1};
            g.train_config = {20, 16};
            chain({{"encoder", {LS::conv_lstm1d(64, 3, 2), LS::flatten(), LS::repeat_vector(5)}},
                   {"decoder", {LS::lstm(200, true)}},
                   {"head", {LS::time_dist_dense(100, relu), LS::time_dist_dense(1, sig)}}});
            break;
    }
    check_wiring(g);
    return g;
}

// ---------------------------------------------------------------------------
// execution

struct BlockTrace {
    std::vector<LayerCache> layer_caches;
    Tensor output;
    OpCache concat_cache;  // set when the block joined >1 sources
};

struct GraphCache {
    std::vector<std::vector<BlockTrace>> blocks;
};

inline Tensor graph_forward(const ModelGraph& g, const Tensor& input, Mode mode,
                            std::mt19937_64* rng = nullptr, GraphCache* cache = nullptr) {
    if (input.shape() != g.input_shape) {
        throw ShapeError("graph input shape " + shape_str(input.shape()) + ", expected " +
                         shape_str(g.input_shape));
    }
    if (cache) {
        cache->blocks.assign(g.positions.size(), {});
    }
    std::vector<Tensor> prev_outputs;
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        std::vector<Tensor> outputs;
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            const Block& blk = g.positions[p][b];
            BlockTrace trace;
            Tensor x;
            if (p == 0) {
                x = select_channels(input, blk.input_channels);
            } else if (blk.sources.size() == 1) {
                x = prev_outputs.at(blk.sources[0]);
            } else {
                std::vector<Tensor> parts;
                for (std::size_t s : blk.sources) parts.push_back(prev_outputs.at(s));
                x = concat(parts, cache ? &trace.concat_cache : nullptr);
            }
            for (const LayerState& st : blk.layers) {
                LayerCache lc;
                x = layer_forward(st, x, mode, rng, cache ? &lc : nullptr);
                if (cache) trace.layer_caches.push_back(std::move(lc));
            }
            if (cache) {
                trace.output = x;
                cache->blocks[p].push_back(std::move(trace));
            }
            outputs.push_back(std::move(x));
        }
        prev_outputs = std::move(outputs);
    }
    return prev_outputs.at(0);
}

/// Inference forward flattened to the declared output length.
inline Tensor predict(const ModelGraph& g, const Tensor& input) {
    Tensor out = graph_forward(g, input, Mode::Infer);
    if (out.size() != g.output_len) {
        throw ShapeError("model produced " + std::to_string(out.size()) + " values, expected " +
                         std::to_string(g.output_len));
    }
    return out.reshaped({g.output_len});
}

// ---------------------------------------------------------------------------
// parameter access (deterministic flat ordering)

struct ParamRef {
    std::size_t pos = 0, block = 0, layer = 0;
    std::string name;
    bool frozen = false;
    bool is_weight = false;  // biases are excluded from pruning
};

inline std::vector<ParamRef> list_params(const ModelGraph& g) {
    std::vector<ParamRef> refs;
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            const Block& blk = g.positions[p][b];
            for (std::size_t l = 0; l < blk.layers.size(); ++l) {
                for (const auto& [name, t] : blk.layers[l].params) {
                    refs.push_back({p, b, l, name, blk.frozen, name != "b"});
                }
            }
        }
    }
    return refs;
}

inline Tensor& param_tensor(ModelGraph& g, const ParamRef& r) {
    return g.positions[r.pos][r.block].layers[r.layer].params.at(r.name);
}
inline const Tensor& param_tensor(const ModelGraph& g, const ParamRef& r) {
    return g.positions[r.pos][r.block].layers[r.layer].params.at(r.name);
}
inline LayerState& param_layer(ModelGraph& g, const ParamRef& r) {
    return g.positions[r.pos][r.block].layers[r.layer];
}
inline const LayerState& param_layer(const ModelGraph& g, const ParamRef& r) {
    return g.positions[r.pos][r.block].layers[r.layer];
}

inline const std::vector<std::uint8_t>* param_mask(const ModelGraph& g, const ParamRef& r) {
    const auto& mask = g.positions[r.pos][r.block].layers[r.layer].mask.by_param;
    auto it = mask.find(r.name);
    return it == mask.end() ? nullptr : &it->second;
}

inline std::size_t graph_total_params(const ModelGraph& g) {
    std::size_t n = 0;
    for (const ParamRef& r : list_params(g)) n += param_tensor(g, r).size();
    return n;
}

struct GraphGrads {
    std::vector<Tensor> params;  // aligned with list_params order
    Tensor input;
};

inline GraphGrads graph_backward(const ModelGraph& g, const GraphCache& cache,
                                 const Tensor& grad_out) {
    // per-(pos, block) accumulated output gradients
    std::vector<std::vector<Tensor>> out_grads(g.positions.size());
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        out_grads[p].resize(g.positions[p].size());
    }
    out_grads.back().at(0) = grad_out;

    GraphGrads grads;
    const auto refs = list_params(g);
    grads.params.reserve(refs.size());
    for (const ParamRef& r : refs) grads.params.emplace_back(param_tensor(g, r).shape());
    // (pos, block, layer, name) -> flat index
    std::size_t idx = 0;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::string>, std::size_t> at;
    for (const ParamRef& r : refs) at[{r.pos, r.block, r.layer, r.name}] = idx++;

    Tensor input_grad(g.input_shape);
    for (std::size_t p = g.positions.size(); p-- > 0;) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            const Block& blk = g.positions[p][b];
            Tensor gy = std::move(out_grads[p][b]);
            if (gy.empty()) continue;  // block fed nothing downstream of grad_out
            const BlockTrace& trace = cache.blocks.at(p).at(b);
            for (std::size_t l = blk.layers.size(); l-- > 0;) {
                LayerGrads lg = layer_backward(blk.layers[l], trace.layer_caches.at(l), gy);
                for (auto& [name, gparam] : lg.params) {
                    grads.params[at.at({p, b, l, name})] = std::move(gparam);
                }
                gy = std::move(lg.input);
            }
            if (p == 0) {
                if (blk.input_channels.empty()) {
                    add_inplace(input_grad, gy);
                } else {
                    const std::size_t w = g.input_shape.back();
                    const std::size_t rows = input_grad.size() / w;
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t j = 0; j < blk.input_channels.size(); ++j) {
                            input_grad.values()[r * w + blk.input_channels[j]] +=
                                gy.values()[r * blk.input_channels.size() + j];
                        }
                    }
                }
            } else if (blk.sources.size() == 1) {
                Tensor& dst = out_grads[p - 1][blk.sources[0]];
                if (dst.empty()) {
                    dst = std::move(gy);
                } else {
                    add_inplace(dst, gy);
                }
            } else {
                std::vector<Tensor> parts = concat_backward(trace.concat_cache, gy);
                for (std::size_t s = 0; s < blk.sources.size(); ++s) {
                    Tensor& dst = out_grads[p - 1][blk.sources[s]];
                    if (dst.empty()) {
                        dst = std::move(parts[s]);
                    } else {
                        add_inplace(dst, parts[s]);
                    }
                }
            }
        }
    }
    grads.input = std::move(input_grad);
    return grads;
}

// ---------------------------------------------------------------------------
// audit & trace

struct ParamAuditEntry {
    std::string block;
    std::string layer;
    LayerKind kind = LayerKind::Dense;
    std::size_t input_features = 0;
    std::size_t count = 0;
};

struct ParamAudit {
    std::vector<ParamAuditEntry> entries;
    std::size_t total = 0;
};

inline ParamAudit audit_params(const ModelGraph& g) {
    ParamAudit audit;
    auto ins = graph_input_shapes(g);
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            const Block& blk = g.positions[p][b];
            Shape in = ins[p][b];
            for (const LayerState& st : blk.layers) {
                ParamAuditEntry e;
                e.block = blk.name;
                e.layer = to_string(st.spec.kind);
                e.kind = st.spec.kind;
                e.input_features = input_feature_count(st.spec, in);
                e.count = count_params(st.spec, e.input_features);
                audit.total += e.count;
                audit.entries.push_back(std::move(e));
                in = layer_output_shape(st.spec, in);
            }
        }
    }
    return audit;
}

struct TraceEntry {
    std::string label;
    Shape shape;
};

/// Symbolic forward pass: input shape, then every layer's output shape in
/// execution order (branch blocks traced in block order, concat rows where
/// a block joins several sources).
inline std::vector<TraceEntry> shape_trace(const ModelGraph& g) {
    std::vector<TraceEntry> trace;
    trace.push_back({"input", g.input_shape});
    auto ins = graph_input_shapes(g);
    for (std::size_t p = 0; p < g.positions.size(); ++p) {
        for (std::size_t b = 0; b < g.positions[p].size(); ++b) {
            const Block& blk = g.positions[p][b];
            Shape in = ins[p][b];
            if (blk.sources.size() > 1) {
                trace.push_back({blk.name + "/concat", in});
            }
            for (const LayerState& st : blk.layers) {
                in = layer_output_shape(st.spec, in);
                trace.push_back({blk.name + "/" + to_string(st.spec.kind), in});
            }
        }
    }
    return trace;
}

}  // namespace granite
