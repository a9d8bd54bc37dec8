#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "hyperinit/sampler.hpp"

using namespace hyperinit;

namespace {
DesignSpace desk_space(uint64_t seed = 7) {
    DesignSpace s;
    s.seed = seed;
    return s;
}
}  // namespace

TEST_CASE("pure vgg space with fixed depth yields plain chains") {
    DesignSpace s;
    s.w_vgg = 1.0;
    s.w_resnet = s.w_mobilenet = s.w_unet = 0.0;
    s.depth_min = s.depth_max = 2;
    s.seed = 3;
    for (int i = 0; i < 10; ++i) {
        auto a = sample_architecture(s, i);
        for (const auto& n : a.nodes) REQUIRE(n.category != OpCategory::AddJunction);
        REQUIRE(a.name.rfind("vgg-", 0) == 0);
    }
}

TEST_CASE("pure resnet space always contains an in-degree-2 add junction") {
    DesignSpace s;
    s.w_resnet = 1.0;
    s.w_vgg = s.w_mobilenet = s.w_unet = 0.0;
    s.depth_min = s.depth_max = 4;
    s.seed = 11;
    for (int i = 0; i < 100; ++i) {
        auto a = sample_architecture(s, i);
        bool found = false;
        for (size_t p = 0; p < a.nodes.size(); ++p)
            if (a.nodes[p].category == OpCategory::AddJunction && a.preds[p].size() == 2) found = true;
        REQUIRE(found);
    }
}

TEST_CASE("sampling is deterministic in (space, index)") {
    auto s = desk_space(99);
    for (int i : {0, 5, 17}) {
        auto a = serialize_architecture(sample_architecture(s, i));
        auto b = serialize_architecture(sample_architecture(s, i));
        REQUIRE(a == b);
    }
    // different indices differ
    REQUIRE(serialize_architecture(sample_architecture(s, 0)) !=
            serialize_architecture(sample_architecture(s, 1)));
}

TEST_CASE("holdout split arithmetic, determinism, exhaustiveness") {
    auto c = make_collection(desk_space(5), 10);
    auto [train, held] = holdout_split(c, 0.2);
    REQUIRE(train.size() == 8);
    REQUIRE(held.size() == 2);
    std::set<int> all(train.begin(), train.end());
    all.insert(held.begin(), held.end());
    REQUIRE(all.size() == 10);

    auto [train2, held2] = holdout_split(c, 0.2);
    REQUIRE(train == train2);
    REQUIRE(held == held2);

    Rng rng(1234);
    for (int t = 0; t < 50; ++t) {
        const int m = 2 + static_cast<int>(rng.uniform_int(60));
        const double f = rng.uniform(0.05, 0.95);
        auto cc = make_collection(desk_space(rng.next_u64()), m);
        auto [tr, he] = holdout_split(cc, f);
        REQUIRE(tr.size() + he.size() == static_cast<size_t>(m));
        std::set<int> u(tr.begin(), tr.end());
        for (int id : he) REQUIRE(u.insert(id).second);
        REQUIRE(u.size() == static_cast<size_t>(m));
    }
    REQUIRE_THROWS_AS(holdout_split(c, 0.0), ValidationError);
    REQUIRE_THROWS_AS(holdout_split(c, 1.0), ValidationError);
}

TEST_CASE("invalid design spaces are rejected") {
    DesignSpace s;
    s.w_vgg = s.w_resnet = s.w_mobilenet = s.w_unet = 0.0;
    REQUIRE_THROWS_AS(s.validate(), ValidationError);
    DesignSpace s2;
    s2.depth_min = 5;
    s2.depth_max = 2;
    REQUIRE_THROWS_AS(s2.validate(), ValidationError);
    DesignSpace s3;
    s3.kernels = {2};
    REQUIRE_THROWS_AS(s3.validate(), ValidationError);
}

TEST_CASE("1000 sampled architectures all validate, shape-infer and stay under the node cap") {
    auto s = desk_space(2024);
    for (int i = 0; i < 1000; ++i) {
        auto a = sample_architecture(s, i);  // throws if invalid
        REQUIRE(static_cast<int>(a.nodes.size()) <= s.node_cap);
        auto plan = infer_shapes(a, {3, s.input_side, s.input_side});
        REQUIRE(plan.output[a.pos.at(a.output_head_ids()[0])] == std::vector<int>{s.head_classes});
    }
}

TEST_CASE("stem frequencies track the mix weights within 2 percent") {
    DesignSpace s;
    s.w_vgg = 0.4;
    s.w_resnet = 0.3;
    s.w_mobilenet = 0.2;
    s.w_unet = 0.1;
    s.seed = 31337;
    std::map<std::string, int> counts;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto a = sample_architecture(s, i);
        counts[a.name.substr(0, a.name.find('-'))]++;
    }
    REQUIRE(std::abs(counts["vgg"] / double(n) - 0.4) < 0.02);
    REQUIRE(std::abs(counts["resnet"] / double(n) - 0.3) < 0.02);
    REQUIRE(std::abs(counts["mobilenet"] / double(n) - 0.2) < 0.02);
    REQUIRE(std::abs(counts["unet"] / double(n) - 0.1) < 0.02);
}

TEST_CASE("collection manifest round trip regenerates identical architectures") {
    auto c = make_collection(desk_space(777), 5);
    auto j = collection_manifest(c);
    auto c2 = collection_from_manifest(j);
    for (int i = 0; i < 5; ++i)
        REQUIRE(serialize_architecture(c.sample(i)) == serialize_architecture(c2.sample(i)));
    REQUIRE(design_space_hash(c.space) == design_space_hash(c2.space));
}

TEST_CASE("unet fixture validates and splits into encoder and decoder") {
    auto u = make_unet(8, 3, 2, 32);
    auto plan = infer_shapes(u, {3, 32, 32});
    // mask logits keep the input resolution
    REQUIRE(plan.output[u.pos.at(u.output_head_ids()[0])] == std::vector<int>{2, 32, 32});

    auto enc = encoder_node_ids(u);
    REQUIRE(!enc.empty());
    // decoder contains every upsample and the final 1x1 conv
    int upsamples = 0;
    for (const auto& n : u.nodes)
        if (n.category == OpCategory::Upsample) {
            ++upsamples;
            REQUIRE(!enc.count(n.id));
        }
    REQUIRE(upsamples == 3);
    // encoder convs exist
    int enc_convs = 0;
    for (const auto& n : u.nodes)
        if (n.category == OpCategory::Conv2d && enc.count(n.id)) ++enc_convs;
    REQUIRE(enc_convs >= 6);

    REQUIRE_THROWS_AS(make_unet(8, 5, 2, 32), ValidationError);
}
