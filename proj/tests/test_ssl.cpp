#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "hyperinit/ssl.hpp"
#include "support/oracles.hpp"

using namespace hyperinit;

namespace {

DesignSpace tiny_space(uint64_t seed) {
    DesignSpace s;
    s.seed = seed;
    s.base_channels = {4, 8};
    s.kernels = {1, 3};
    s.depth_min = 2;
    s.depth_max = 3;
    s.input_side = 16;
    return s;
}

HypernetConfig tiny_cfg() {
    HypernetConfig c;
    c.d = 8;
    c.K = 2;
    c.c_max = 8;
    c.k_max = 3;
    return c;
}

PretrainConfig tiny_pretrain(uint64_t seed) {
    PretrainConfig c;
    c.epochs = 2;
    c.batch_size = 8;
    c.side = 16;
    c.seed = seed;
    return c;
}

uint64_t checksum(const std::vector<NamedParam<float>>& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params)
        for (float v : p.value->data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            h = (h ^ bits) * 0x100000001b3ULL;
        }
    return h;
}

}  // namespace

TEST_CASE("rotation transform identity, group structure, hand case") {
    auto x = make_tensor<float>({1, 2, 2}, {1, 2, 3, 4});
    auto [r0, l0] = rotation_transform(x, 0);
    REQUIRE(r0->data == x->data);
    REQUIRE(l0 == 0);

    auto [r1, l1] = rotation_transform(x, 1);
    REQUIRE(r1->data == std::vector<float>{2, 4, 1, 3});

    auto [r2, l2] = rotation_transform(x, 2);
    auto [r22, l22] = rotation_transform(r2, 2);
    REQUIRE(r22->data == x->data);

    auto once = x;
    for (int i = 0; i < 4; ++i) once = rotation_transform(once, 1).first;
    REQUIRE(once->data == x->data);

    // inverse rotation restores the source bit-exactly
    Rng rng(9);
    auto big = make_tensor<float>({3, 9, 9});
    for (auto& v : big->data) v = static_cast<float>(rng.uniform());
    for (int k = 0; k < 4; ++k) {
        auto rotated = rotation_transform(big, k).first;
        auto restored = rotation_transform(rotated, (4 - k) % 4).first;
        REQUIRE(restored->data == big->data);
    }

    auto rect = make_tensor<float>({1, 2, 3});
    REQUIRE_THROWS_AS(rotation_transform(rect, 1), ValidationError);
    REQUIRE_THROWS_AS(rotation_transform(x, 4), ValidationError);
}

TEST_CASE("augment degenerate crop is resize-only") {
    Rng rng(11);
    auto x = make_tensor<float>({3, 20, 20});
    for (auto& v : x->data) v = static_cast<float>(rng.uniform());
    auto a = augment_with(x, 16, 1.0, 0.5, 0.5);
    auto b = bilinear_resize(x, 16, 16);
    REQUIRE(a->data == b->data);
}

TEST_CASE("augment output shape and determinism") {
    Rng rng(13);
    auto x = make_tensor<float>({3, 24, 17});
    for (auto& v : x->data) v = static_cast<float>(rng.uniform());
    for (int i = 0; i < 1000; ++i) {
        Rng draw(i);
        auto y = augment(x, 16, 0.8, 1.2, draw);
        REQUIRE(y->shape == std::vector<int>{3, 16, 16});
    }
    Rng r1(5), r2(5);
    REQUIRE(augment(x, 16, 0.8, 1.2, r1)->data == augment(x, 16, 0.8, 1.2, r2)->data);
}

TEST_CASE("pretext loss at initialization is near chance over 20 architectures") {
    HyperInitializer<float> h(HypernetConfig{}, 2025);  // full-size hypernet
    DesignSpace space = tiny_space(50);
    auto images = make_pretrain_corpus(1, 64, 16);
    PretrainConfig cfg = tiny_pretrain(3);
    double total = 0;
    for (int i = 0; i < 20; ++i) {
        auto arch = sample_architecture(space, i);
        Rng rng(i);
        std::vector<int> picks(cfg.batch_size);
        for (auto& p : picks) p = static_cast<int>(rng.uniform_int(static_cast<int64_t>(images.size())));
        auto batch = make_rotation_batch<float>(images, picks, cfg, rng);
        auto params = h.predict(arch);
        ExecOptions<float> opts;
        opts.training = true;
        auto logits = execute(arch, params, batch.x, opts);
        total += softmax_cross_entropy(logits, batch.labels)->data[0];
    }
    const double mean = total / 20.0;
    REQUIRE(mean > std::log(4.0) - 0.3);
    REQUIRE(mean < std::log(4.0) + 0.3);
}

TEST_CASE("pretrain_step updates theta only and leaves no per-architecture state") {
    HyperInitializer<float> h(tiny_cfg(), 77);
    DesignSpace space = tiny_space(60);
    auto arch = sample_architecture(space, 0);
    auto images = make_pretrain_corpus(2, 16, 16);
    PretrainConfig cfg = tiny_pretrain(4);
    Rng rng(1);
    std::vector<int> picks(cfg.batch_size, 0);
    for (auto& p : picks) p = static_cast<int>(rng.uniform_int(16));
    auto batch = make_rotation_batch<float>(images, picks, cfg, rng);

    const auto names_before = [&] {
        std::vector<std::string> n;
        for (const auto& p : h.parameters()) n.push_back(p.name);
        return n;
    }();
    const auto sum_before = checksum(h.parameters());

    SgdOptimizer<float> opt(CosineSchedule(0.01, 10), 0.9f);
    const double loss = pretrain_step(h, arch, batch, opt, 0);
    REQUIRE(std::isfinite(loss));

    REQUIRE(checksum(h.parameters()) != sum_before);
    // the learnable store is exactly theta: same names, nothing keyed by arch
    std::vector<std::string> names_after;
    for (const auto& p : h.parameters()) names_after.push_back(p.name);
    REQUIRE(names_after == names_before);
    for (const auto& n : names_after)
        REQUIRE((n.rfind("emb.", 0) == 0 || n.rfind("gnn.", 0) == 0 || n.rfind("dec.", 0) == 0));
}

TEST_CASE("pretrain_step skips non-finite losses without touching theta") {
    HyperInitializer<float> h(tiny_cfg(), 99);
    // relu/pool comparisons swallow NaN in the forward pass; this chain does not
    OpAttrs lin;
    lin.in = 3, lin.out = 4;
    std::vector<OpNode> nodes = {{0, OpCategory::Input, std::nullopt},
                                 {1, OpCategory::GlobalAvgPool, std::nullopt},
                                 {2, OpCategory::Linear, lin},
                                 {3, OpCategory::OutputHead, std::nullopt}};
    auto arch = finalize_architecture("nan-probe", nodes, {{0, 1}, {1, 2}, {2, 3}});
    RotationBatch<float> batch;
    batch.x = make_tensor<float>({2, 3, 16, 16});
    batch.x->data[0] = std::numeric_limits<float>::quiet_NaN();
    batch.labels = {0, 1};
    const auto sum_before = checksum(h.parameters());
    SgdOptimizer<float> opt(CosineSchedule(0.01, 10), 0.9f);
    const double loss = pretrain_step(h, arch, batch, opt, 0);
    REQUIRE(std::isnan(loss));
    REQUIRE(checksum(h.parameters()) == sum_before);
}

TEST_CASE("theta gradient through the full bi-level step matches finite differences") {
    HyperInitializer<double> h(tiny_cfg(), 123);
    // tiny fixture: conv -> bn -> relu -> gap -> linear -> head
    OpAttrs conv;
    conv.in = 3, conv.out = 4, conv.kernel = 3, conv.stride = 1, conv.padding = 1;
    OpAttrs bn;
    bn.channels = 4;
    OpAttrs lin;
    lin.in = 4, lin.out = 4;
    std::vector<OpNode> nodes = {{0, OpCategory::Input, std::nullopt}, {1, OpCategory::Conv2d, conv},
                                 {2, OpCategory::BatchNorm, bn},       {3, OpCategory::Relu, std::nullopt},
                                 {4, OpCategory::GlobalAvgPool, std::nullopt}, {5, OpCategory::Linear, lin},
                                 {6, OpCategory::OutputHead, std::nullopt}};
    auto arch = finalize_architecture("fdnet", nodes, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}});

    auto x = make_tensor<double>({2, 3, 8, 8});
    Rng rng(7);
    oracle::fill_uniform(x, rng, 0, 1);
    std::vector<int> labels = {1, 3};

    auto forward = [&](Tape<double>* tape) {
        auto ps = h.predict(arch, tape);
        ExecOptions<double> opts;
        opts.training = true;
        opts.tape = tape;
        return softmax_cross_entropy(execute(arch, ps, x, opts), labels, tape);
    };

    Tape<double> tape;
    auto loss = forward(&tape);
    tape.backward(loss);
    std::map<std::string, std::vector<double>> grads;
    for (auto& p : h.parameters()) {
        p.value->ensure_grad();
        grads[p.name] = p.value->grad;
        p.value->grad.clear();
        p.value->on_tape = false;
    }

    Rng picker(17);
    double worst = 0;
    for (int probe = 0; probe < 10; ++probe) {
        auto& p = h.parameters()[static_cast<size_t>(picker.uniform_int(static_cast<int64_t>(h.parameters().size())))];
        const size_t ci = static_cast<size_t>(picker.uniform_int(static_cast<int64_t>(p.value->data.size())));
        const double orig = p.value->data[ci];
        const double hstep = 1e-6;
        p.value->data[ci] = orig + hstep;
        const double fp = forward(nullptr)->data[0];
        p.value->data[ci] = orig - hstep;
        const double fm = forward(nullptr)->data[0];
        p.value->data[ci] = orig;
        const double fd = (fp - fm) / (2 * hstep);
        worst = std::max(worst, oracle::rel_err(grads[p.name][ci], fd));
    }
    REQUIRE(worst < 1e-3);
}

TEST_CASE("pretrain loop arithmetic, determinism, and empty-input errors") {
    DesignSpace space = tiny_space(70);
    auto collection = make_collection(space, 6);
    auto [train_ids, held] = holdout_split(collection, 0.3);
    auto images = make_pretrain_corpus(3, 8, 16);

    PretrainConfig one;
    one.epochs = 1;
    one.batch_size = 8;  // one batch per epoch
    one.side = 16;
    one.seed = 5;
    {
        HyperInitializer<float> h(tiny_cfg(), 1);
        auto res = pretrain(h, collection, train_ids, images, one);
        REQUIRE(res.steps_done == 1);
        REQUIRE(res.records.size() == 1);
        REQUIRE(res.records[0].epoch == 0);
    }

    PretrainConfig cfg = tiny_pretrain(6);
    auto run = [&] {
        HyperInitializer<float> h(tiny_cfg(), 42);
        pretrain(h, collection, train_ids, images, cfg);
        return checksum(h.parameters());
    };
    REQUIRE(run() == run());

    HyperInitializer<float> h(tiny_cfg(), 2);
    REQUIRE_THROWS_AS(pretrain(h, collection, train_ids, {}, cfg), ValidationError);
    REQUIRE_THROWS_AS(pretrain(h, collection, {}, images, cfg), ValidationError);
}

TEST_CASE("pretrain writes per-epoch checkpoints and csv parses back") {
    DesignSpace space = tiny_space(71);
    auto collection = make_collection(space, 4);
    auto images = make_pretrain_corpus(4, 16, 16);
    PretrainConfig cfg = tiny_pretrain(7);
    const auto dir = std::filesystem::temp_directory_path() / "hyperinit_pretrain_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    HyperInitializer<float> h(tiny_cfg(), 3);
    auto res = pretrain(h, collection, {0, 1, 2, 3}, images, cfg, dir.string());
    REQUIRE(std::filesystem::exists(dir / "checkpoint-epoch-000.bin"));
    REQUIRE(std::filesystem::exists(dir / "checkpoint-epoch-001.bin"));
    write_pretrain_csv((dir / "pretrain.csv").string(), res.records);

    std::ifstream csv(dir / "pretrain.csv");
    std::string header;
    std::getline(csv, header);
    REQUIRE(header == "step,epoch,arch_id,loss,lr,wall_ms");
    int lines = 0;
    std::string line;
    while (std::getline(csv, line)) ++lines;
    REQUIRE(lines == res.steps_done);

    // the epoch checkpoint records config metadata for resume
    nlohmann::json meta;
    auto h2 = HyperInitializer<float>::load((dir / "checkpoint-epoch-001.bin").string(), &meta);
    REQUIRE(meta["step"] == res.steps_done);
    REQUIRE(meta["input_side"] == 16);
    std::filesystem::remove_all(dir);
}

TEST_CASE("png io round trip within quantization") {
    Rng rng(21);
    auto img = make_tensor<float>({3, 12, 10});
    for (auto& v : img->data) v = static_cast<float>(rng.uniform());
    const auto dir = std::filesystem::temp_directory_path() / "hyperinit_png_test";
    std::filesystem::create_directories(dir);
    write_png((dir / "a.png").string(), img);
    auto back = read_png((dir / "a.png").string());
    REQUIRE(back->shape == img->shape);
    for (size_t i = 0; i < img->data.size(); ++i) REQUIRE(std::abs(back->data[i] - img->data[i]) <= 0.5f / 255 + 1e-6f);

    // directory loader skips unreadable files with a warning
    std::ofstream bad(dir / "bad.png");
    bad << "not a png";
    bad.close();
    auto images = load_image_directory(dir.string());
    REQUIRE(images.size() == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic corpora are seed-deterministic") {
    auto a = make_pretrain_corpus(99, 4, 16);
    auto b = make_pretrain_corpus(99, 4, 16);
    for (int i = 0; i < 4; ++i) REQUIRE(a[i]->data == b[i]->data);

    auto c1 = make_classification_dataset(5, 40, 16, 5);
    auto c2 = make_classification_dataset(5, 40, 16, 5);
    std::set<int> grades;
    for (int i = 0; i < 40; ++i) {
        REQUIRE(c1[i].image->data == c2[i].image->data);
        REQUIRE(c1[i].label == c2[i].label);
        REQUIRE(c1[i].label >= 0);
        REQUIRE(c1[i].label < 5);
        grades.insert(c1[i].label);
    }
    REQUIRE(grades.size() == 5);

    auto s1 = make_segmentation_dataset(6, 4, 24);
    for (const auto& m : s1) {
        int fg = 0;
        for (int v : m.mask) {
            REQUIRE((v == 0 || v == 1));
            fg += v;
        }
        REQUIRE(fg > 0);
        REQUIRE(fg < 24 * 24);
    }
}
