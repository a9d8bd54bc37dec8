#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "hyperinit/ops.hpp"
#include "hyperinit/tensor.hpp"

namespace hyperinit {

// Architecture IR: a DAG of typed operation nodes. Nodes carry a one-hot
// category; only parametric categories carry attrs. Pooling is fixed 2x2
// stride 2 and upsampling is nearest 2x, which keeps every non-parametric
// node attribute-free.

enum class OpCategory : int {
    Input = 0,
    Conv2d,
    DepthwiseConv2d,
    BatchNorm,
    Relu,
    Sigmoid,
    MaxPool,
    AvgPool,
    GlobalAvgPool,
    Linear,
    AddJunction,
    ConcatJunction,
    Upsample,
    OutputHead,
};

constexpr int kNumOpCategories = 14;

inline const char* to_string(OpCategory c) {
    switch (c) {
        case OpCategory::Input: return "input";
        case OpCategory::Conv2d: return "conv2d";
        case OpCategory::DepthwiseConv2d: return "depthwise-conv2d";
        case OpCategory::BatchNorm: return "batchnorm";
        case OpCategory::Relu: return "relu";
        case OpCategory::Sigmoid: return "sigmoid";
        case OpCategory::MaxPool: return "max-pool";
        case OpCategory::AvgPool: return "avg-pool";
        case OpCategory::GlobalAvgPool: return "global-avg-pool";
        case OpCategory::Linear: return "linear";
        case OpCategory::AddJunction: return "add-junction";
        case OpCategory::ConcatJunction: return "concat-junction";
        case OpCategory::Upsample: return "upsample";
        case OpCategory::OutputHead: return "output-head";
    }
    return "?";
}

inline std::optional<OpCategory> category_from_string(const std::string& s) {
    for (int i = 0; i < kNumOpCategories; ++i)
        if (s == to_string(static_cast<OpCategory>(i))) return static_cast<OpCategory>(i);
    return std::nullopt;
}

inline bool is_parametric(OpCategory c) {
    return c == OpCategory::Conv2d || c == OpCategory::DepthwiseConv2d || c == OpCategory::BatchNorm ||
           c == OpCategory::Linear;
}

struct OpAttrs {
    int in = 0;
    int out = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    int channels = 0;
};

struct OpNode {
    int id = -1;
    OpCategory category = OpCategory::Input;
    std::optional<OpAttrs> attrs;
};

struct Architecture {
    std::string name;
    std::vector<OpNode> nodes;                // topological order
    std::vector<std::pair<int, int>> edges;   // (from,to) ids, sorted lexicographically
    std::unordered_map<int, int> pos;         // node id -> index into nodes
    std::vector<std::vector<int>> preds;      // by position, predecessor ids sorted ascending
    std::vector<std::vector<int>> succs;      // by position, successor ids sorted ascending

    const OpNode& node(int id) const { return nodes[pos.at(id)]; }
    int input_id() const {
        for (const auto& n : nodes)
            if (n.category == OpCategory::Input) return n.id;
        return -1;
    }
    std::vector<int> output_head_ids() const {
        std::vector<int> out;
        for (const auto& n : nodes)
            if (n.category == OpCategory::OutputHead) out.push_back(n.id);
        return out;
    }
};

namespace detail {

inline void check_attr_positive(const std::string& where, const char* key, int v, int min_v = 1) {
    if (v < min_v)
        throw ValidationError(where + ": attribute '" + key + "' must be >= " + std::to_string(min_v) +
                              ", got " + std::to_string(v));
}

inline void validate_attrs(const OpNode& n) {
    const std::string where = "node " + std::to_string(n.id) + " (" + to_string(n.category) + ")";
    if (is_parametric(n.category)) {
        if (!n.attrs) throw ValidationError(where + ": missing attrs");
        const auto& a = *n.attrs;
        switch (n.category) {
            case OpCategory::Conv2d:
                check_attr_positive(where, "in", a.in);
                check_attr_positive(where, "out", a.out);
                check_attr_positive(where, "kernel", a.kernel);
                check_attr_positive(where, "stride", a.stride);
                check_attr_positive(where, "padding", a.padding, 0);
                break;
            case OpCategory::DepthwiseConv2d:
                check_attr_positive(where, "channels", a.channels);
                check_attr_positive(where, "kernel", a.kernel);
                check_attr_positive(where, "stride", a.stride);
                check_attr_positive(where, "padding", a.padding, 0);
                break;
            case OpCategory::Linear:
                check_attr_positive(where, "in", a.in);
                check_attr_positive(where, "out", a.out);
                break;
            case OpCategory::BatchNorm:
                check_attr_positive(where, "channels", a.channels);
                break;
            default: break;
        }
    } else if (n.attrs) {
        throw ValidationError(where + ": attrs present on non-parametric category");
    }
}

// DFS cycle witness, reported as "a -> b -> ... -> a"
inline std::string find_cycle_witness(const std::vector<int>& ids,
                                      const std::map<int, std::vector<int>>& succ) {
    std::map<int, int> state;  // 0 unvisited, 1 on stack, 2 done
    std::vector<int> stack;
    std::string witness;
    std::function<bool(int)> dfs = [&](int u) {
        state[u] = 1;
        stack.push_back(u);
        auto it = succ.find(u);
        if (it != succ.end())
            for (int v : it->second) {
                if (state[v] == 1) {
                    auto start = std::find(stack.begin(), stack.end(), v);
                    for (auto p = start; p != stack.end(); ++p) witness += std::to_string(*p) + " -> ";
                    witness += std::to_string(v);
                    return true;
                }
                if (state[v] == 0 && dfs(v)) return true;
            }
        stack.pop_back();
        state[u] = 2;
        return false;
    };
    for (int id : ids)
        if (state[id] == 0 && dfs(id)) break;
    return witness;
}

}  // namespace detail

// Validates the invariants, topologically orders the nodes (minimum id first
// among ready nodes, which makes the order canonical) and builds the index
// structures. Both the parser and in-memory builders funnel through here.
inline Architecture finalize_architecture(std::string name, std::vector<OpNode> nodes,
                                          std::vector<std::pair<int, int>> edges) {
    Architecture a;
    a.name = std::move(name);

    std::set<int> ids;
    for (const auto& n : nodes) {
        if (n.id < 0) throw ValidationError("node id " + std::to_string(n.id) + " is negative");
        if (!ids.insert(n.id).second) throw ValidationError("duplicate node id " + std::to_string(n.id));
        detail::validate_attrs(n);
    }

    std::set<std::pair<int, int>> edge_set;
    for (auto [u, v] : edges) {
        if (!ids.count(u) || !ids.count(v))
            throw ValidationError("edge [" + std::to_string(u) + "," + std::to_string(v) +
                                  "] references unknown node");
        if (u == v) throw ValidationError("cycle detected: " + std::to_string(u) + " -> " + std::to_string(u));
        if (!edge_set.insert({u, v}).second)
            throw ValidationError("duplicate edge [" + std::to_string(u) + "," + std::to_string(v) + "]");
    }
    edges.assign(edge_set.begin(), edge_set.end());  // lexicographic order

    std::map<int, std::vector<int>> preds, succs;
    for (auto [u, v] : edges) {
        succs[u].push_back(v);
        preds[v].push_back(u);
    }

    // Kahn topological order, min id first; cycle detection comes before the
    // per-category structure rules so a cyclic document reports the cycle.
    std::map<int, int> indeg;
    for (int id : ids) indeg[id] = 0;
    for (auto [u, v] : edges) ++indeg[v];
    std::set<int> ready;
    for (auto [id, d] : indeg)
        if (d == 0) ready.insert(id);
    std::vector<int> order;
    while (!ready.empty()) {
        const int u = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(u);
        if (succs.count(u))
            for (int v : succs[u])
                if (--indeg[v] == 0) ready.insert(v);
    }
    if (order.size() != ids.size()) {
        std::vector<int> all(ids.begin(), ids.end());
        throw ValidationError("cycle detected: " + detail::find_cycle_witness(all, succs));
    }

    // structural category rules
    int input_count = 0, head_count = 0;
    for (const auto& n : nodes) {
        const int indeg = preds.count(n.id) ? static_cast<int>(preds[n.id].size()) : 0;
        const int outdeg = succs.count(n.id) ? static_cast<int>(succs[n.id].size()) : 0;
        const std::string where = "node " + std::to_string(n.id) + " (" + to_string(n.category) + ")";
        switch (n.category) {
            case OpCategory::Input:
                ++input_count;
                if (indeg != 0) throw ValidationError(where + ": input node has incoming edges");
                break;
            case OpCategory::OutputHead:
                ++head_count;
                if (outdeg != 0) throw ValidationError(where + ": output-head has outgoing edges");
                if (indeg != 1) throw ValidationError(where + ": output-head needs exactly one incoming edge");
                break;
            case OpCategory::AddJunction:
            case OpCategory::ConcatJunction:
                if (indeg < 2) throw ValidationError(where + ": junction needs at least two incoming edges");
                break;
            default:
                if (indeg == 0) throw ValidationError(where + ": dangling node (no incoming edge)");
                if (indeg != 1) throw ValidationError(where + ": expected exactly one incoming edge, got " + std::to_string(indeg));
                break;
        }
    }
    if (input_count != 1)
        throw ValidationError("architecture must have exactly one input node, found " + std::to_string(input_count));
    if (head_count < 1) throw ValidationError("architecture must have at least one output-head node");

    std::map<int, OpNode> by_id;
    for (auto& n : nodes) by_id[n.id] = n;
    a.nodes.reserve(order.size());
    for (int id : order) a.nodes.push_back(by_id[id]);
    a.edges = std::move(edges);
    for (size_t i = 0; i < a.nodes.size(); ++i) a.pos[a.nodes[i].id] = static_cast<int>(i);
    a.preds.resize(a.nodes.size());
    a.succs.resize(a.nodes.size());
    for (size_t i = 0; i < a.nodes.size(); ++i) {
        const int id = a.nodes[i].id;
        if (preds.count(id)) {
            a.preds[i] = preds[id];
            std::sort(a.preds[i].begin(), a.preds[i].end());
        }
        if (succs.count(id)) {
            a.succs[i] = succs[id];
            std::sort(a.succs[i].begin(), a.succs[i].end());
        }
    }
    return a;
}

// ---------------------------------------------------------------------------
// Document format (schema version 1)

namespace detail {

inline void expect_keys(const nlohmann::json& j, const std::set<std::string>& required,
                        const std::set<std::string>& optional, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!required.count(it.key()) && !optional.count(it.key()))
            throw ValidationError(where + ": unknown key '" + it.key() + "'");
    }
    for (const auto& k : required)
        if (!j.contains(k)) throw ValidationError(where + ": missing key '" + k + "'");
}

inline std::set<std::string> attr_keys(OpCategory c) {
    switch (c) {
        case OpCategory::Conv2d: return {"in", "out", "kernel", "stride", "padding"};
        case OpCategory::DepthwiseConv2d: return {"channels", "kernel", "stride", "padding"};
        case OpCategory::Linear: return {"in", "out"};
        case OpCategory::BatchNorm: return {"channels"};
        default: return {};
    }
}

}  // namespace detail

inline Architecture parse_architecture(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("architecture document is not valid JSON: ") + e.what());
    }
    detail::expect_keys(j, {"schema_version", "name", "nodes", "edges"}, {}, "architecture document");
    if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != 1)
        throw ValidationError("unsupported schema_version (expected 1)");
    std::vector<OpNode> nodes;
    for (const auto& nj : j["nodes"]) {
        detail::expect_keys(nj, {"id", "category"}, {"attrs"}, "node");
        OpNode n;
        n.id = nj["id"].get<int>();
        const std::string cat = nj["category"].get<std::string>();
        auto c = category_from_string(cat);
        if (!c) throw ValidationError("unknown category '" + cat + "' on node " + std::to_string(n.id));
        n.category = *c;
        if (nj.contains("attrs")) {
            const auto keys = detail::attr_keys(n.category);
            detail::expect_keys(nj["attrs"], keys, {}, "node " + std::to_string(n.id) + " attrs");
            OpAttrs a;
            const auto& aj = nj["attrs"];
            if (keys.count("in")) a.in = aj["in"].get<int>();
            if (keys.count("out")) a.out = aj["out"].get<int>();
            if (keys.count("kernel")) a.kernel = aj["kernel"].get<int>();
            if (keys.count("stride")) a.stride = aj["stride"].get<int>();
            if (keys.count("padding")) a.padding = aj["padding"].get<int>();
            if (keys.count("channels")) a.channels = aj["channels"].get<int>();
            n.attrs = a;
        }
        nodes.push_back(n);
    }
    std::vector<std::pair<int, int>> edges;
    for (const auto& ej : j["edges"]) {
        if (!ej.is_array() || ej.size() != 2) throw ValidationError("edge entries must be [from,to] pairs");
        edges.emplace_back(ej[0].get<int>(), ej[1].get<int>());
    }
    return finalize_architecture(j["name"].get<std::string>(), std::move(nodes), std::move(edges));
}

// Canonical serialization: topological node order, lexicographic edges.
inline std::string serialize_architecture(const Architecture& a) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["name"] = a.name;
    j["nodes"] = nlohmann::json::array();
    for (const auto& n : a.nodes) {
        nlohmann::json nj;
        nj["id"] = n.id;
        nj["category"] = to_string(n.category);
        if (n.attrs) {
            nlohmann::json aj;
            const auto keys = detail::attr_keys(n.category);
            if (keys.count("in")) aj["in"] = n.attrs->in;
            if (keys.count("out")) aj["out"] = n.attrs->out;
            if (keys.count("kernel")) aj["kernel"] = n.attrs->kernel;
            if (keys.count("stride")) aj["stride"] = n.attrs->stride;
            if (keys.count("padding")) aj["padding"] = n.attrs->padding;
            if (keys.count("channels")) aj["channels"] = n.attrs->channels;
            nj["attrs"] = aj;
        }
        j["nodes"].push_back(nj);
    }
    j["edges"] = nlohmann::json::array();
    for (auto [u, v] : a.edges) j["edges"].push_back({u, v});
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Shortest paths

// s[u][v] = directed hop count from u to v; -1 encodes unreachable.
struct ShortestPathMatrix {
    std::vector<std::vector<int>> s;  // indexed by node position
    static constexpr int kUnreachable = -1;
};

inline ShortestPathMatrix shortest_paths(const Architecture& a) {
    const int n = static_cast<int>(a.nodes.size());
    ShortestPathMatrix m;
    m.s.assign(n, std::vector<int>(n, ShortestPathMatrix::kUnreachable));
    // successor positions
    std::vector<std::vector<int>> succ(n);
    for (int i = 0; i < n; ++i)
        for (int id : a.succs[i]) succ[i].push_back(a.pos.at(id));
    for (int src = 0; src < n; ++src) {
        auto& dist = m.s[src];
        dist[src] = 0;
        std::deque<int> q{src};
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            for (int v : succ[u])
                if (dist[v] == ShortestPathMatrix::kUnreachable) {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
        }
    }
    return m;
}

// All u with 1 < s[u][v] <= s_max, paired with the distance (for 1/s weights).
inline std::vector<std::pair<int, int>> sp_neighbors(const ShortestPathMatrix& m, int v_pos, int s_max) {
    if (s_max < 2) throw ValidationError("sp_neighbors: s_max must be >= 2, got " + std::to_string(s_max));
    std::vector<std::pair<int, int>> out;
    for (int u = 0; u < static_cast<int>(m.s.size()); ++u) {
        const int d = m.s[u][v_pos];
        if (d > 1 && d <= s_max) out.emplace_back(u, d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape inference

struct ShapePlan {
    // by node position: activation shape without the batch axis,
    // {C,H,W} spatial or {F} flat
    std::vector<std::vector<int>> output;
    // node id -> parameter role -> shape
    std::map<int, std::map<std::string, std::vector<int>>> params;
};

inline ShapePlan infer_shapes(const Architecture& a, std::vector<int> input_shape) {
    if (input_shape.size() == 4) input_shape.erase(input_shape.begin());
    if (input_shape.size() != 3)
        throw ValidationError("infer_shapes: input shape must be [N,C,H,W] or [C,H,W], got " +
                              format_shape(input_shape));
    ShapePlan plan;
    const int n = static_cast<int>(a.nodes.size());
    plan.output.resize(n);

    auto shape_of = [&](int id) -> const std::vector<int>& { return plan.output[a.pos.at(id)]; };

    for (int i = 0; i < n; ++i) {
        const OpNode& node = a.nodes[i];
        const std::string where = "node " + std::to_string(node.id) + " (" + to_string(node.category) + ")";
        const auto& preds = a.preds[i];
        auto require_spatial = [&](const std::vector<int>& s) {
            if (s.size() != 3) throw ValidationError(where + ": needs a spatial [C,H,W] input, got " + format_shape(s));
        };
        switch (node.category) {
            case OpCategory::Input:
                plan.output[i] = input_shape;
                break;
            case OpCategory::Conv2d: {
                const auto& in = shape_of(preds[0]);
                require_spatial(in);
                const auto& at = *node.attrs;
                if (at.in != in[0])
                    throw ValidationError(where + ": expects " + std::to_string(at.in) + " input channels, got " +
                                          std::to_string(in[0]));
                const int ho = (in[1] + 2 * at.padding - at.kernel) / at.stride + 1;
                const int wo = (in[2] + 2 * at.padding - at.kernel) / at.stride + 1;
                if (at.kernel > in[1] + 2 * at.padding || at.kernel > in[2] + 2 * at.padding || ho <= 0 || wo <= 0)
                    throw ValidationError(where + ": non-positive output size on input " + format_shape(in));
                plan.output[i] = {at.out, ho, wo};
                plan.params[node.id]["weight"] = {at.out, at.in, at.kernel, at.kernel};
                plan.params[node.id]["bias"] = {at.out};
                break;
            }
            case OpCategory::DepthwiseConv2d: {
                const auto& in = shape_of(preds[0]);
                require_spatial(in);
                const auto& at = *node.attrs;
                if (at.channels != in[0])
                    throw ValidationError(where + ": expects " + std::to_string(at.channels) + " channels, got " +
                                          std::to_string(in[0]));
                const int ho = (in[1] + 2 * at.padding - at.kernel) / at.stride + 1;
                const int wo = (in[2] + 2 * at.padding - at.kernel) / at.stride + 1;
                if (at.kernel > in[1] + 2 * at.padding || at.kernel > in[2] + 2 * at.padding || ho <= 0 || wo <= 0)
                    throw ValidationError(where + ": non-positive output size on input " + format_shape(in));
                plan.output[i] = {at.channels, ho, wo};
                plan.params[node.id]["weight"] = {at.channels, 1, at.kernel, at.kernel};
                plan.params[node.id]["bias"] = {at.channels};
                break;
            }
            case OpCategory::BatchNorm: {
                const auto& in = shape_of(preds[0]);
                require_spatial(in);
                const auto& at = *node.attrs;
                if (at.channels != in[0])
                    throw ValidationError(where + ": expects " + std::to_string(at.channels) + " channels, got " +
                                          std::to_string(in[0]));
                plan.output[i] = in;
                plan.params[node.id]["gamma"] = {at.channels};
                plan.params[node.id]["beta"] = {at.channels};
                break;
            }
            case OpCategory::Relu:
            case OpCategory::Sigmoid:
                plan.output[i] = shape_of(preds[0]);
                break;
            case OpCategory::MaxPool:
            case OpCategory::AvgPool: {
                const auto& in = shape_of(preds[0]);
                require_spatial(in);
                if (in[1] < 2 || in[2] < 2)
                    throw ValidationError(where + ": input " + format_shape(in) + " too small for 2x2 pooling");
                plan.output[i] = {in[0], (in[1] - 2) / 2 + 1, (in[2] - 2) / 2 + 1};
                break;
            }
            case OpCategory::GlobalAvgPool: {
                const auto& in = shape_of(preds[0]);
                require_spatial(in);
                plan.output[i] = {in[0]};
                break;
            }
            case OpCategory::Linear: {
                const auto& in = shape_of(preds[0]);
                const int flat = static_cast<int>(shape_numel(in));
                const auto& at = *node.attrs;
                if (at.in != flat)
                    throw ValidationError(where + ": expects " + std::to_string(at.in) + " input features, got " +
                                          std::to_string(flat) + " from " + format_shape(in));
                plan.output[i] = {at.out};
                plan.params[node.id]["weight"] = {at.out, at.in};
                plan.params[node.id]["bias"] = {at.out};
                break;
            }
            case OpCategory::AddJunction: {
                const auto& first = shape_of(preds[0]);
                for (size_t p = 1; p < preds.size(); ++p)
                    if (shape_of(preds[p]) != first)
                        throw ValidationError(where + ": inputs from node " + std::to_string(preds[0]) + " " +
                                              format_shape(first) + " and node " + std::to_string(preds[p]) + " " +
                                              format_shape(shape_of(preds[p])) + " differ");
                plan.output[i] = first;
                break;
            }
            case OpCategory::ConcatJunction: {
                const auto& first = shape_of(preds[0]);
                require_spatial(first);
                int channels = first[0];
                for (size_t p = 1; p < preds.size(); ++p) {
                    const auto& s = shape_of(preds[p]);
                    require_spatial(s);
                    if (s[1] != first[1] || s[2] != first[2])
                        throw ValidationError(where + ": spatial mismatch between node " + std::to_string(preds[0]) +
                                              " " + format_shape(first) + " and node " + std::to_string(preds[p]) +
                                              " " + format_shape(s));
                    channels += s[0];
                }
                plan.output[i] = {channels, first[1], first[2]};
                break;
            }
            case OpCategory::Upsample: {
                const auto& in = shape_of(preds[0]);
                require_spatial(in);
                plan.output[i] = {in[0], in[1] * 2, in[2] * 2};
                break;
            }
            case OpCategory::OutputHead:
                plan.output[i] = shape_of(preds[0]);
                break;
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Execution

// node id -> parameter role -> tensor
template <typename T>
struct ParamSet {
    std::map<int, std::map<std::string, TensorPtr<T>>> values;

    TensorPtr<T> get(int node_id, const std::string& role) const {
        auto it = values.find(node_id);
        if (it == values.end()) return nullptr;
        auto jt = it->second.find(role);
        return jt == it->second.end() ? nullptr : jt->second;
    }
};

template <typename T>
struct BatchNormState {
    std::map<int, BnStats<T>> per_node;  // node id -> running stats
};

template <typename T>
struct ExecOptions {
    bool training = false;
    Tape<T>* tape = nullptr;
    BatchNormState<T>* bn_state = nullptr;
    T bn_eps = T(1e-5);
    T bn_momentum = T(0.1);
    std::map<int, TensorPtr<T>>* trace = nullptr;  // node id -> activation, when requested
};

// Evaluates nodes in topological order; the result is differentiable w.r.t.
// x and every tensor in params when a tape is given.
template <typename T>
TensorPtr<T> execute(const Architecture& a, const ParamSet<T>& params, const TensorPtr<T>& x,
                     const ExecOptions<T>& opts = {}) {
    if (x->shape.size() != 4) throw DimensionError("execute: input must be [N,C,H,W], got " + format_shape(x->shape));
    const auto heads = a.output_head_ids();
    if (heads.size() != 1)
        throw ValidationError("execute: architecture '" + a.name + "' must have exactly one output-head, found " +
                              std::to_string(heads.size()));
    std::vector<TensorPtr<T>> value(a.nodes.size());
    Tape<T>* tape = opts.tape;

    auto need = [&](const OpNode& n, const char* role) {
        auto t = params.get(n.id, role);
        if (!t)
            throw InitializationError("missing parameter '" + std::string(role) + "' for node " +
                                      std::to_string(n.id) + " (" + to_string(n.category) + ")");
        return t;
    };

    for (size_t i = 0; i < a.nodes.size(); ++i) {
        const OpNode& n = a.nodes[i];
        std::vector<TensorPtr<T>> in;
        for (int pid : a.preds[i]) in.push_back(value[a.pos.at(pid)]);
        TensorPtr<T> out;
        switch (n.category) {
            case OpCategory::Input: out = x; break;
            case OpCategory::Conv2d:
                out = conv2d(in[0], need(n, "weight"), need(n, "bias"), n.attrs->stride, n.attrs->padding, 1, tape);
                break;
            case OpCategory::DepthwiseConv2d:
                out = conv2d(in[0], need(n, "weight"), need(n, "bias"), n.attrs->stride, n.attrs->padding,
                             n.attrs->channels, tape);
                break;
            case OpCategory::BatchNorm: {
                BnStats<T>* stats = nullptr;
                if (opts.bn_state) stats = &opts.bn_state->per_node[n.id];
                out = batchnorm2d(in[0], need(n, "gamma"), need(n, "beta"), opts.bn_eps, opts.training, stats,
                                  opts.bn_momentum, tape);
                break;
            }
            case OpCategory::Relu: out = relu(in[0], tape); break;
            case OpCategory::Sigmoid: out = sigmoid(in[0], tape); break;
            case OpCategory::MaxPool: out = max_pool2d(in[0], 2, 2, tape); break;
            case OpCategory::AvgPool: out = avg_pool2d(in[0], 2, 2, tape); break;
            case OpCategory::GlobalAvgPool: out = global_avg_pool(in[0], tape); break;
            case OpCategory::Linear: out = linear(in[0], need(n, "weight"), need(n, "bias"), tape); break;
            case OpCategory::AddJunction: {
                out = in[0];
                for (size_t p = 1; p < in.size(); ++p) out = add(out, in[p], tape);
                break;
            }
            case OpCategory::ConcatJunction: out = concat_channels(in, tape); break;
            case OpCategory::Upsample: out = upsample_nearest2(in[0], tape); break;
            case OpCategory::OutputHead: out = in[0]; break;
        }
        value[i] = out;
        if (opts.trace) (*opts.trace)[n.id] = out;
    }
    return value[a.pos.at(heads[0])];
}

}  // namespace hyperinit
