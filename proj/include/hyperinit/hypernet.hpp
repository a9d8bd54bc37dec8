#pragma once

#include <unordered_map>

#include "hyperinit/archgraph.hpp"
#include "hyperinit/checkpoint.hpp"
#include "hyperinit/rng.hpp"
#include "hyperinit/sampler.hpp"
#include "hyperinit/sched.hpp"

namespace hyperinit {

// The hyper-initializer H(A; theta): an embedding table over operation
// categories, K rounds of gated message passing with shortest-path virtual
// neighbors, and a fixed-capacity decoder that emits one canonical parameter
// block per node and shapes it to each node's target tensor.

struct HypernetConfig {
    int d = 32;      // node feature width
    int K = 3;       // message-passing rounds
    int s_max = 50;  // virtual-neighbor hop ceiling
    int c_max = 64;  // canonical channel capacity
    int k_max = 5;   // canonical kernel capacity

    void validate() const {
        if (d < 1 || K < 1) throw ValidationError("hypernet: d and K must be >= 1");
        // s_max == 1 keeps the model but empties every virtual neighborhood
        if (s_max < 1) throw ValidationError("hypernet: s_max must be >= 1");
        if (c_max < 1 || k_max < 1) throw ValidationError("hypernet: decoder capacities must be positive");
    }
};

// Parameter shapes every node demands, derived from attrs alone. Matches
// infer_shapes' params map for any valid architecture.
inline std::map<int, std::map<std::string, std::vector<int>>> param_shape_plan(const Architecture& a) {
    std::map<int, std::map<std::string, std::vector<int>>> plan;
    for (const auto& n : a.nodes) {
        if (!n.attrs) continue;
        const auto& at = *n.attrs;
        switch (n.category) {
            case OpCategory::Conv2d:
                plan[n.id]["weight"] = {at.out, at.in, at.kernel, at.kernel};
                plan[n.id]["bias"] = {at.out};
                break;
            case OpCategory::DepthwiseConv2d:
                plan[n.id]["weight"] = {at.channels, 1, at.kernel, at.kernel};
                plan[n.id]["bias"] = {at.channels};
                break;
            case OpCategory::Linear:
                plan[n.id]["weight"] = {at.out, at.in};
                plan[n.id]["bias"] = {at.out};
                break;
            case OpCategory::BatchNorm:
                plan[n.id]["gamma"] = {at.channels};
                plan[n.id]["beta"] = {at.channels};
                break;
            default: break;
        }
    }
    return plan;
}

template <typename T>
class HyperInitializer {
   public:
    HyperInitializer(HypernetConfig cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "theta-init"));
        auto normal = [&](std::vector<int> shape, const std::string& name) {
            auto t = make_tensor<T>(std::move(shape), true);
            for (auto& v : t->data) v = static_cast<T>(rng.normal(0.0, 0.02));
            t->name = name;
            theta_.push_back({name, t});
            return t;
        };
        auto zeros = [&](std::vector<int> shape, const std::string& name) {
            auto t = make_tensor<T>(std::move(shape), true);
            t->name = name;
            theta_.push_back({name, t});
            return t;
        };
        const int d = cfg_.d, dd = 4 * cfg_.d;
        normal({kNumOpCategories, d}, "emb.table");
        for (int k = 1; k <= cfg_.K; ++k) {
            for (const char* which : {"mlp", "mlpsp"}) {
                const std::string p = "gnn.l" + std::to_string(k) + "." + which + ".";
                normal({d, d}, p + "w1");
                zeros({d}, p + "b1");
                normal({d, d}, p + "w2");
                zeros({d}, p + "b2");
            }
        }
        for (const char* g : {"wz", "uz", "wr", "ur", "wh", "uh"}) normal({d, d}, std::string("gnn.gru.") + g);
        auto bz = zeros({d}, "gnn.gru.bz");
        for (auto& v : bz->data) v = T(1);  // update-gate bias starts at +1
        zeros({d}, "gnn.gru.br");
        zeros({d}, "gnn.gru.bh");
        normal({d, dd}, "dec.trunk.w1");
        zeros({dd}, "dec.trunk.b1");
        normal({dd, dd}, "dec.trunk.w2");
        zeros({dd}, "dec.trunk.b2");
        const int conv_rows = cfg_.c_max * cfg_.c_max * cfg_.k_max * cfg_.k_max;
        normal({conv_rows, dd}, "dec.head.conv.w");
        // unit-scale canonical bias: untrained predictions standardize to
        // fan-in-scaled noise, and the standardization scale target/std(w)
        // starts near 1 instead of amplifying gradients ~1000x
        auto cb = zeros({conv_rows}, "dec.head.conv.b");
        for (auto& v : cb->data) v = static_cast<T>(rng.normal(0.0, 1.0));
        for (const char* role : {"bias", "gamma", "beta"}) {
            normal({cfg_.c_max, dd}, std::string("dec.head.") + role + ".w");
            zeros({cfg_.c_max}, std::string("dec.head.") + role + ".b");
        }
        index_params();
    }

    const HypernetConfig& config() const { return cfg_; }

    std::vector<NamedParam<T>>& parameters() { return theta_; }
    const std::vector<NamedParam<T>>& parameters() const { return theta_; }

    TensorPtr<T> param(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw StateError("hypernet has no parameter '" + name + "'");
        return it->second;
    }

    // G1[v] = table[category(v)]
    TensorPtr<T> embed_nodes(const Architecture& a, Tape<T>* tape = nullptr) const {
        std::vector<int> cats;
        cats.reserve(a.nodes.size());
        for (const auto& n : a.nodes) cats.push_back(static_cast<int>(n.category));
        return embedding_lookup(param("emb.table"), cats, tape);
    }

    // for k = 1..K:
    //   m_v = sum_{u in N_v} MLP_k(g_u) + sum_{u in N_v_sp} (1/s_uv) MLPsp_k(g_u)
    //   g_v <- GRU(g_v, m_v)
    TensorPtr<T> gated_gnn_forward(const Architecture& a, TensorPtr<T> g, Tape<T>* tape = nullptr) const {
        const int n = static_cast<int>(a.nodes.size());
        auto sp = shortest_paths(a);

        // constant aggregation matrices: direct[v][u] = 1 for edge u->v,
        // virt[v][u] = 1/s_uv for 1 < s_uv <= s_max
        auto direct = make_tensor<T>({n, n});
        auto virt = make_tensor<T>({n, n});
        bool any_virtual = false;
        for (int v = 0; v < n; ++v) {
            for (int uid : a.preds[v]) direct->at2(v, a.pos.at(uid)) = T(1);
            if (cfg_.s_max >= 2)
                for (auto [u, dist] : sp_neighbors(sp, v, cfg_.s_max)) {
                    virt->at2(v, u) = T(1) / static_cast<T>(dist);
                    any_virtual = true;
                }
        }

        GruWeights<T> gru{param("gnn.gru.wz"), param("gnn.gru.uz"), param("gnn.gru.bz"),
                          param("gnn.gru.wr"), param("gnn.gru.ur"), param("gnn.gru.br"),
                          param("gnn.gru.wh"), param("gnn.gru.uh"), param("gnn.gru.bh")};
        for (int k = 1; k <= cfg_.K; ++k) {
            const std::string l = "gnn.l" + std::to_string(k) + ".";
            auto m1 = mlp(g, l + "mlp.", tape);
            auto m = matmul(direct, m1, tape);
            if (any_virtual) {
                auto m2 = mlp(g, l + "mlpsp.", tape);
                m = add(m, matmul(virt, m2, tape), tape);
            }
            g = gru_cell(g, m, gru, tape);
        }
        return g;
    }

    // Decoder: shared trunk then per-role heads. Each target tensor is read
    // out of the canonical block by index: channel axes tile modulo c_max,
    // kernel axes center-crop from k_max. Weight tensors are standardized to
    // std sqrt(2/fan_in); gamma is shifted +1; beta and bias stay raw.
    ParamSet<T> decode_params(const Architecture& a,
                              const std::map<int, std::map<std::string, std::vector<int>>>& plan,
                              const TensorPtr<T>& gk, Tape<T>* tape = nullptr) const {
        auto trunk1 = relu(add_bias_row(matmul(gk, param("dec.trunk.w1"), tape), param("dec.trunk.b1"), tape), tape);
        auto feats = add_bias_row(matmul(trunk1, param("dec.trunk.w2"), tape), param("dec.trunk.b2"), tape);

        ParamSet<T> out;
        for (const auto& n : a.nodes) {
            auto pit = plan.find(n.id);
            if (pit == plan.end()) continue;
            // this node's trunk feature as a [4d,1] column
            auto row = std::make_shared<std::vector<int>>(1, a.pos.at(n.id));
            auto fcol = transpose2d(gather_rows(feats, row, tape), tape);
            for (const auto& [role, shape] : pit->second) {
                TensorPtr<T> t = decode_one(n, role, shape, fcol, tape);
                out.values[n.id][role] = t;
            }
        }
        return out;
    }

    // single forward pass: embed -> message passing -> decode
    ParamSet<T> predict(const Architecture& a, Tape<T>* tape = nullptr) const {
        const auto plan = param_shape_plan(a);
        auto g1 = embed_nodes(a, tape);
        auto gk = gated_gnn_forward(a, g1, tape);
        return decode_params(a, plan, gk, tape);
    }

    void save(const std::string& path, nlohmann::json metadata,
              const std::vector<NamedParam<T>>* extra = nullptr) const {
        metadata["d"] = cfg_.d;
        metadata["K"] = cfg_.K;
        metadata["s_max"] = cfg_.s_max;
        metadata["c_max"] = cfg_.c_max;
        metadata["k_max"] = cfg_.k_max;
        auto cats = nlohmann::json::array();
        for (int i = 0; i < kNumOpCategories; ++i) cats.push_back(to_string(static_cast<OpCategory>(i)));
        metadata["categories"] = cats;
        auto entries = theta_;
        if (extra) entries.insert(entries.end(), extra->begin(), extra->end());
        save_checkpoint(path, entries, metadata);
    }

    // Loading refuses checkpoints whose category vocabulary differs from the
    // runtime's.
    static HyperInitializer load(const std::string& path, nlohmann::json* metadata_out = nullptr) {
        auto ck = load_checkpoint<T>(path);
        const nlohmann::json& meta = ck.metadata;
        HypernetConfig cfg;
        cfg.d = meta.at("d").get<int>();
        cfg.K = meta.at("K").get<int>();
        cfg.s_max = meta.at("s_max").get<int>();
        cfg.c_max = meta.at("c_max").get<int>();
        cfg.k_max = meta.at("k_max").get<int>();
        auto cats = meta.at("categories").get<std::vector<std::string>>();
        std::vector<std::string> runtime;
        for (int i = 0; i < kNumOpCategories; ++i) runtime.push_back(to_string(static_cast<OpCategory>(i)));
        if (cats != runtime)
            throw ValidationError("checkpoint category list does not match this runtime's operation set; refusing to load");
        HyperInitializer h(cfg, 0);
        // extra entries (optimizer moments) may ride along; every theta
        // tensor must be present
        for (size_t i = 0; i < h.theta_.size(); ++i) {
            auto loaded = ck.find(h.theta_[i].name);
            if (!loaded) throw IoError("checkpoint is missing tensor '" + h.theta_[i].name + "'");
            if (loaded->shape != h.theta_[i].value->shape)
                throw IoError("checkpoint tensor '" + h.theta_[i].name + "' has shape " +
                              format_shape(loaded->shape) + ", expected " + format_shape(h.theta_[i].value->shape));
            h.theta_[i].value->data = loaded->data;
        }
        if (metadata_out) *metadata_out = ck.metadata;
        return h;
    }

   private:
    void index_params() {
        for (auto& p : theta_) by_name_[p.name] = p.value;
    }

    TensorPtr<T> mlp(const TensorPtr<T>& x, const std::string& prefix, Tape<T>* tape) const {
        auto h = relu(add_bias_row(matmul(x, param(prefix + "w1"), tape), param(prefix + "b1"), tape), tape);
        return add_bias_row(matmul(h, param(prefix + "w2"), tape), param(prefix + "b2"), tape);
    }

    TensorPtr<T> decode_one(const OpNode& n, const std::string& role, const std::vector<int>& shape,
                            const TensorPtr<T>& fcol, Tape<T>* tape) const {
        const int cm = cfg_.c_max, km = cfg_.k_max;
        if (role == "weight" && shape.size() == 4) {
            const int co = shape[0], ci = shape[1], kh = shape[2], kw = shape[3];
            if (kh > km || kw > km)
                throw CapacityError("node " + std::to_string(n.id) + ": kernel " + std::to_string(kh) +
                                    " exceeds decoder capacity " + std::to_string(km));
            const int offy = (km - kh) / 2, offx = (km - kw) / 2;
            auto rows = std::make_shared<std::vector<int>>();
            rows->reserve(static_cast<size_t>(co) * ci * kh * kw);
            for (int o = 0; o < co; ++o)
                for (int i = 0; i < ci; ++i)
                    for (int y = 0; y < kh; ++y)
                        for (int x = 0; x < kw; ++x)
                            rows->push_back(((o % cm) * cm + (i % cm)) * km * km + (y + offy) * km + (x + offx));
            auto w = decode_rows("dec.head.conv.", rows, shape, fcol, tape);
            const int fan_in = ci * kh * kw;
            return standardize_to(w, static_cast<T>(std::sqrt(2.0 / fan_in)), tape);
        }
        if (role == "weight" && shape.size() == 2) {
            // leading 2-D plane of the canonical block. Linear layers get
            // sqrt(1/fan_in): the He gain assumes a following rectifier, and
            // these layers (classifier heads included) have none.
            const int out = shape[0], in = shape[1];
            auto rows = std::make_shared<std::vector<int>>();
            rows->reserve(static_cast<size_t>(out) * in);
            for (int o = 0; o < out; ++o)
                for (int i = 0; i < in; ++i) rows->push_back(((o % cm) * cm + (i % cm)) * km * km);
            auto w = decode_rows("dec.head.conv.", rows, shape, fcol, tape);
            return standardize_to(w, static_cast<T>(std::sqrt(1.0 / in)), tape);
        }
        // vector roles
        const int c = shape[0];
        auto rows = std::make_shared<std::vector<int>>();
        rows->reserve(c);
        for (int i = 0; i < c; ++i) rows->push_back(i % cm);
        const std::string head = role == "bias" ? "dec.head.bias." : role == "gamma" ? "dec.head.gamma." : "dec.head.beta.";
        auto v = decode_rows(head, rows, shape, fcol, tape);
        if (role == "gamma") v = add_scalar(v, T(1), tape);
        return v;
    }

    // target = W[rows,:]·f + b[rows], reshaped
    TensorPtr<T> decode_rows(const std::string& head, std::shared_ptr<std::vector<int>> rows,
                             const std::vector<int>& shape, const TensorPtr<T>& fcol, Tape<T>* tape) const {
        auto w_rows = gather_rows(param(head + "w"), rows, tape);
        auto flat = matmul(w_rows, fcol, tape);  // [t,1]
        auto bidx = std::make_shared<std::vector<int64_t>>(rows->begin(), rows->end());
        auto b = gather(param(head + "b"), bidx, {static_cast<int>(rows->size())}, tape);
        auto v = add(reshape(flat, {static_cast<int>(rows->size())}, tape), b, tape);
        return reshape(v, shape, tape);
    }

    HypernetConfig cfg_;
    std::vector<NamedParam<T>> theta_;
    std::unordered_map<std::string, TensorPtr<T>> by_name_;
};

}  // namespace hyperinit
