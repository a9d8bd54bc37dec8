#pragma once

#include <nlohmann/json.hpp>

#include "hyperinit/archgraph.hpp"
#include "hyperinit/rng.hpp"

namespace hyperinit {

// Architecture collection sampling. Every stem family ends in
// global-avg-pool -> linear(head_classes) -> output-head so a sampled
// architecture can be trained on the pretext task as-is.

struct DesignSpace {
    double w_vgg = 0.25;
    double w_resnet = 0.25;
    double w_mobilenet = 0.25;
    double w_unet = 0.25;
    int depth_min = 2;  // stages
    int depth_max = 6;
    std::vector<int> base_channels = {8, 16, 32};
    std::vector<int> kernels = {1, 3, 5};
    int input_side = 32;
    int node_cap = 64;
    int head_classes = 4;
    uint64_t seed = 0;

    void validate() const {
        if (w_vgg < 0 || w_resnet < 0 || w_mobilenet < 0 || w_unet < 0)
            throw ValidationError("design space: negative stem weight");
        if (w_vgg + w_resnet + w_mobilenet + w_unet <= 0)
            throw ValidationError("design space: stem weights sum to zero");
        if (depth_min < 1 || depth_max < depth_min)
            throw ValidationError("design space: bad depth range [" + std::to_string(depth_min) + "," +
                                  std::to_string(depth_max) + "]");
        if (base_channels.empty()) throw ValidationError("design space: empty base channel set");
        if (kernels.empty()) throw ValidationError("design space: empty kernel set");
        for (int k : kernels)
            if (k < 1 || k % 2 == 0) throw ValidationError("design space: kernels must be odd and positive");
        if (input_side < 8) throw ValidationError("design space: input side must be >= 8");
        if (node_cap < 8) throw ValidationError("design space: node cap too small");
        if (head_classes < 1) throw ValidationError("design space: head_classes must be positive");
    }
};

inline nlohmann::json design_space_to_json(const DesignSpace& s) {
    return nlohmann::json{
        {"stem_weights",
         {{"vgg", s.w_vgg}, {"resnet", s.w_resnet}, {"mobilenet", s.w_mobilenet}, {"unet_encoder", s.w_unet}}},
        {"depth", {s.depth_min, s.depth_max}},
        {"base_channels", s.base_channels},
        {"kernels", s.kernels},
        {"input_side", s.input_side},
        {"node_cap", s.node_cap},
        {"head_classes", s.head_classes},
        {"seed", s.seed}};
}

inline DesignSpace design_space_from_json(const nlohmann::json& j) {
    detail::expect_keys(j, {"stem_weights", "depth"},
                        {"base_channels", "kernels", "input_side", "node_cap", "head_classes", "seed"},
                        "design space");
    DesignSpace s;
    const auto& w = j.at("stem_weights");
    detail::expect_keys(w, {}, {"vgg", "resnet", "mobilenet", "unet_encoder"}, "stem_weights");
    s.w_vgg = w.value("vgg", 0.0);
    s.w_resnet = w.value("resnet", 0.0);
    s.w_mobilenet = w.value("mobilenet", 0.0);
    s.w_unet = w.value("unet_encoder", 0.0);
    if (!j.at("depth").is_array() || j.at("depth").size() != 2)
        throw ValidationError("design space: depth must be [min,max]");
    s.depth_min = j.at("depth")[0].get<int>();
    s.depth_max = j.at("depth")[1].get<int>();
    if (j.contains("base_channels")) s.base_channels = j["base_channels"].get<std::vector<int>>();
    if (j.contains("kernels")) s.kernels = j["kernels"].get<std::vector<int>>();
    s.input_side = j.value("input_side", 32);
    s.node_cap = j.value("node_cap", 64);
    s.head_classes = j.value("head_classes", 4);
    s.seed = j.value("seed", 0ULL);
    s.validate();
    return s;
}

// FNV-1a over the canonical design-space JSON; stored in hypernet
// checkpoints to tie a trained model to its collection.
inline uint64_t design_space_hash(const DesignSpace& s) {
    const std::string text = design_space_to_json(s).dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

struct GraphBuilder {
    std::vector<OpNode> nodes;
    std::vector<std::pair<int, int>> edges;
    int next_id = 0;
    int tail = -1;  // id of the current chain end

    int emit(OpCategory cat, std::optional<OpAttrs> attrs = std::nullopt) {
        const int id = next_id++;
        nodes.push_back({id, cat, attrs});
        if (tail >= 0) edges.emplace_back(tail, id);
        tail = id;
        return id;
    }
    int emit_from(int from, OpCategory cat, std::optional<OpAttrs> attrs = std::nullopt) {
        const int id = next_id++;
        nodes.push_back({id, cat, attrs});
        edges.emplace_back(from, id);
        tail = id;
        return id;
    }
    void edge(int from, int to) { edges.emplace_back(from, to); }

    int conv(int in, int out, int k, int s, int p) {
        OpAttrs a;
        a.in = in, a.out = out, a.kernel = k, a.stride = s, a.padding = p;
        return emit(OpCategory::Conv2d, a);
    }
    int depthwise(int channels, int k, int s, int p) {
        OpAttrs a;
        a.channels = channels, a.kernel = k, a.stride = s, a.padding = p;
        return emit(OpCategory::DepthwiseConv2d, a);
    }
    int bn(int channels) {
        OpAttrs a;
        a.channels = channels;
        return emit(OpCategory::BatchNorm, a);
    }
    int linear(int in, int out) {
        OpAttrs a;
        a.in = in, a.out = out;
        return emit(OpCategory::Linear, a);
    }
};

inline int grow_channels(int c) { return std::min(c * 2, 128); }

inline void classifier_tail(GraphBuilder& g, int channels, int classes) {
    g.emit(OpCategory::GlobalAvgPool);
    g.linear(channels, classes);
    g.emit(OpCategory::OutputHead);
}

inline int pick_kernel(const DesignSpace& s, Rng& rng) {
    // favor 3x3; 1x1-only chains carry no spatial signal
    std::vector<double> w;
    for (int k : s.kernels) w.push_back(k == 3 ? 0.6 : 0.2);
    return s.kernels[static_cast<size_t>(rng.pick_weighted(w))];
}

// VGG-like plain chain: [conv-bn-relu] x r then pool per stage
inline void build_vgg(GraphBuilder& g, const DesignSpace& s, Rng& rng, int stages, int base, int& side) {
    int channels = 3;
    int width = base;
    for (int st = 0; st < stages; ++st) {
        const int reps = 1 + static_cast<int>(rng.uniform_int(2));
        for (int r = 0; r < reps; ++r) {
            const int k = pick_kernel(s, rng);
            g.conv(channels, width, k, 1, k / 2);
            g.bn(width);
            g.emit(OpCategory::Relu);
            channels = width;
        }
        if (side >= 8) {
            g.emit(rng.uniform() < 0.5 ? OpCategory::MaxPool : OpCategory::AvgPool);
            side /= 2;
        }
        width = grow_channels(width);
    }
    classifier_tail(g, channels, s.head_classes);
}

// ResNet-like: stem then residual blocks with projection skips on
// channel/stride changes
inline void build_resnet(GraphBuilder& g, const DesignSpace& s, Rng& rng, int stages, int base, int& side) {
    stages = std::min(stages, 4);
    int channels = base;
    g.conv(3, channels, 3, 1, 1);
    g.bn(channels);
    g.emit(OpCategory::Relu);
    for (int st = 0; st < stages; ++st) {
        const int out_ch = st == 0 ? channels : grow_channels(channels);
        const int blocks = stages <= 3 ? 1 + static_cast<int>(rng.uniform_int(2)) : 1;
        for (int b = 0; b < blocks; ++b) {
            const bool down = (st > 0 && b == 0 && side >= 8);
            const int stride = down ? 2 : 1;
            const int skip_src = g.tail;
            const int k = pick_kernel(s, rng);
            g.conv(channels, out_ch, k, stride, k / 2);
            g.bn(out_ch);
            g.emit(OpCategory::Relu);
            const int k2 = pick_kernel(s, rng);
            g.conv(out_ch, out_ch, k2, 1, k2 / 2);
            const int main_out = g.bn(out_ch);
            int skip = skip_src;
            if (stride != 1 || channels != out_ch) {
                g.emit_from(skip_src, OpCategory::Conv2d, [&] {
                    OpAttrs a;
                    a.in = channels, a.out = out_ch, a.kernel = 1, a.stride = stride, a.padding = 0;
                    return a;
                }());
                skip = g.bn(out_ch);
            }
            const int j = g.emit_from(main_out, OpCategory::AddJunction);
            g.edge(skip, j);
            g.emit(OpCategory::Relu);
            channels = out_ch;
            if (down) side /= 2;
        }
    }
    classifier_tail(g, channels, s.head_classes);
}

// MobileNet-like: depthwise separable blocks
inline void build_mobilenet(GraphBuilder& g, const DesignSpace& s, Rng& rng, int stages, int base, int& side) {
    int channels = base;
    g.conv(3, channels, 3, 1, 1);
    g.bn(channels);
    g.emit(OpCategory::Relu);
    for (int st = 0; st < stages; ++st) {
        const int blocks = stages <= 4 ? 1 + static_cast<int>(rng.uniform_int(2)) : 1;
        const int out_ch = st == 0 ? channels : grow_channels(channels);
        for (int b = 0; b < blocks; ++b) {
            const bool down = (st > 0 && b == 0 && side >= 8);
            // depthwise kernels come from the space's set, preferring spatial ones
            std::vector<int> spatial;
            for (int kk : s.kernels)
                if (kk >= 3) spatial.push_back(kk);
            if (spatial.empty()) spatial = s.kernels;
            const int k = spatial[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(spatial.size())))];
            g.depthwise(channels, k, down ? 2 : 1, k / 2);
            g.bn(channels);
            g.emit(OpCategory::Relu);
            g.conv(channels, out_ch, 1, 1, 0);
            g.bn(out_ch);
            g.emit(OpCategory::Relu);
            channels = out_ch;
            if (down) side /= 2;
        }
    }
    classifier_tail(g, channels, s.head_classes);
}

// U-Net encoder: double-conv stages with pooling, plus bottleneck
inline void build_unet_encoder(GraphBuilder& g, const DesignSpace& s, Rng& rng, int stages, int base,
                               int& side, std::vector<int>* skip_ids = nullptr,
                               std::vector<int>* skip_channels = nullptr) {
    (void)rng;
    stages = std::min(stages, 4);
    int channels = 3;
    int width = base;
    for (int st = 0; st < stages; ++st) {
        g.conv(channels, width, 3, 1, 1);
        g.bn(width);
        g.emit(OpCategory::Relu);
        g.conv(width, width, 3, 1, 1);
        g.bn(width);
        const int pre_pool = g.emit(OpCategory::Relu);
        if (skip_ids) {
            skip_ids->push_back(pre_pool);
            skip_channels->push_back(width);
        }
        if (side >= 8) {
            g.emit(OpCategory::MaxPool);
            side /= 2;
        }
        channels = width;
        width = grow_channels(width);
    }
    // bottleneck
    g.conv(channels, width, 3, 1, 1);
    g.bn(width);
    g.emit(OpCategory::Relu);
    if (skip_channels) skip_channels->push_back(width);
}

}  // namespace detail

enum class StemFamily { Vgg, Resnet, Mobilenet, UnetEncoder };

inline const char* to_string(StemFamily f) {
    switch (f) {
        case StemFamily::Vgg: return "vgg";
        case StemFamily::Resnet: return "resnet";
        case StemFamily::Mobilenet: return "mobilenet";
        case StemFamily::UnetEncoder: return "unet-encoder";
    }
    return "?";
}

// Reproducible sample: the same (space, index) always yields the same
// architecture. Unsatisfiable draws retry with a fresh sub-stream; after 100
// attempts the constraints are declared unsatisfiable.
inline Architecture sample_architecture(const DesignSpace& space, int index) {
    space.validate();
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng(derive_seed(space.seed, "arch", (static_cast<uint64_t>(index) << 8) | attempt));
        const int stem = rng.pick_weighted({space.w_vgg, space.w_resnet, space.w_mobilenet, space.w_unet});
        const int stages = space.depth_min + static_cast<int>(rng.uniform_int(space.depth_max - space.depth_min + 1));
        const int base = space.base_channels[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(space.base_channels.size())))];
        detail::GraphBuilder g;
        g.emit(OpCategory::Input);
        int side = space.input_side;
        switch (static_cast<StemFamily>(stem)) {
            case StemFamily::Vgg: detail::build_vgg(g, space, rng, stages, base, side); break;
            case StemFamily::Resnet: detail::build_resnet(g, space, rng, stages, base, side); break;
            case StemFamily::Mobilenet: detail::build_mobilenet(g, space, rng, stages, base, side); break;
            case StemFamily::UnetEncoder: {
                detail::build_unet_encoder(g, space, rng, stages, base, side);
                // pretext tail on the bottleneck features
                int channels = 0;
                for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it)
                    if (it->category == OpCategory::BatchNorm) {
                        channels = it->attrs->channels;
                        break;
                    }
                detail::classifier_tail(g, channels, space.head_classes);
                break;
            }
        }
        try {
            if (static_cast<int>(g.nodes.size()) > space.node_cap)
                throw ValidationError("node count " + std::to_string(g.nodes.size()) + " exceeds cap " +
                                      std::to_string(space.node_cap));
            char name[64];
            std::snprintf(name, sizeof(name), "%s-%06d", to_string(static_cast<StemFamily>(stem)), index);
            auto arch = finalize_architecture(name, g.nodes, g.edges);
            infer_shapes(arch, {3, space.input_side, space.input_side});
            return arch;
        } catch (const ValidationError& e) {
            last_error = e.what();
        }
    }
    throw ValidationError("sampler: no valid architecture for index " + std::to_string(index) +
                          " after 100 attempts; last failure: " + last_error);
}

struct Collection {
    DesignSpace space;
    int count = 0;
    std::vector<uint64_t> seeds;  // per-architecture derived seeds

    Architecture sample(int index) const {
        if (index < 0 || index >= count)
            throw ValidationError("collection index " + std::to_string(index) + " outside [0," +
                                  std::to_string(count) + ")");
        return sample_architecture(space, index);
    }
};

inline Collection make_collection(const DesignSpace& space, int count) {
    space.validate();
    if (count < 1) throw ValidationError("collection: count must be positive");
    Collection c;
    c.space = space;
    c.count = count;
    c.seeds.reserve(count);
    for (int i = 0; i < count; ++i) c.seeds.push_back(derive_seed(space.seed, "arch", static_cast<uint64_t>(i) << 8));
    return c;
}

inline nlohmann::json collection_manifest(const Collection& c) {
    return nlohmann::json{{"schema_version", 1},
                          {"design_space", design_space_to_json(c.space)},
                          {"count", c.count},
                          {"seeds", c.seeds}};
}

inline Collection collection_from_manifest(const nlohmann::json& j) {
    detail::expect_keys(j, {"schema_version", "design_space", "count", "seeds"}, {}, "collection manifest");
    if (j["schema_version"].get<int>() != 1) throw ValidationError("collection manifest: unsupported schema_version");
    Collection c;
    c.space = design_space_from_json(j["design_space"]);
    c.count = j["count"].get<int>();
    c.seeds = j["seeds"].get<std::vector<uint64_t>>();
    if (static_cast<int>(c.seeds.size()) != c.count)
        throw ValidationError("collection manifest: seed list does not match count");
    return c;
}

// Disjoint, exhaustive, seed-stable split; the held-out side never enters
// pretraining.
inline std::pair<std::vector<int>, std::vector<int>> holdout_split(const Collection& c, double fraction) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw ValidationError("holdout fraction must lie strictly between 0 and 1");
    std::vector<int> ids(c.count);
    for (int i = 0; i < c.count; ++i) ids[i] = i;
    Rng rng(derive_seed(c.space.seed, "holdout-split"));
    rng.shuffle(ids.begin(), ids.end());
    const int heldout = std::max(1, static_cast<int>(std::llround(fraction * c.count)));
    std::vector<int> held(ids.begin(), ids.begin() + heldout);
    std::vector<int> train(ids.begin() + heldout, ids.end());
    std::sort(held.begin(), held.end());
    std::sort(train.begin(), train.end());
    return {train, held};
}

// ---------------------------------------------------------------------------
// U-Net fixture (encoder-decoder with concat skips) for segmentation tasks.
// The encoder half matches the sampled unet-encoder stems node for node.

inline Architecture make_unet(int base, int stages, int num_classes, int input_side) {
    // every stage must pool and every pool must be undone by one upsample
    if (input_side % (1 << stages) != 0 || (input_side >> (stages - 1)) < 8)
        throw ValidationError("make_unet: input side " + std::to_string(input_side) + " does not support " +
                              std::to_string(stages) + " pooling stages");
    detail::GraphBuilder g;
    g.emit(OpCategory::Input);
    DesignSpace dummy;  // kernel picks are fixed in the encoder builder
    Rng rng(0);
    int side = input_side;
    std::vector<int> skip_ids, widths;
    detail::build_unet_encoder(g, dummy, rng, stages, base, side, &skip_ids, &widths);
    int channels = widths.back();  // bottleneck width
    for (int st = static_cast<int>(skip_ids.size()) - 1; st >= 0; --st) {
        const int skip_ch = widths[st];
        g.emit(OpCategory::Upsample);
        const int up = g.tail;
        const int j = g.emit_from(skip_ids[st], OpCategory::ConcatJunction);
        g.edge(up, j);
        g.conv(channels + skip_ch, skip_ch, 3, 1, 1);
        g.bn(skip_ch);
        g.emit(OpCategory::Relu);
        channels = skip_ch;
    }
    g.conv(channels, num_classes, 1, 1, 0);
    g.emit(OpCategory::OutputHead);
    return finalize_architecture("unet-b" + std::to_string(base) + "-s" + std::to_string(stages), g.nodes,
                                 g.edges);
}

// Encoder node ids of an encoder-decoder architecture: everything that is not
// an upsample node or downstream of one.
inline std::set<int> encoder_node_ids(const Architecture& a) {
    std::set<int> decoder;
    std::vector<int> frontier;
    for (const auto& n : a.nodes)
        if (n.category == OpCategory::Upsample) {
            decoder.insert(n.id);
            frontier.push_back(n.id);
        }
    if (frontier.empty())
        throw ValidationError("architecture '" + a.name + "' has no upsample nodes; encoder-only does not apply");
    while (!frontier.empty()) {
        const int u = frontier.back();
        frontier.pop_back();
        for (int v : a.succs[a.pos.at(u)])
            if (decoder.insert(v).second) frontier.push_back(v);
    }
    std::set<int> enc;
    for (const auto& n : a.nodes)
        if (!decoder.count(n.id)) enc.insert(n.id);
    return enc;
}

}  // namespace hyperinit
