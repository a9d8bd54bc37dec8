#include <catch2/catch_amalgamated.hpp>

#include "hyperinit/downstream.hpp"
#include "support/oracles.hpp"

using namespace hyperinit;

namespace {

// brute-force oracles, independent of the implementations under test

double kappa_oracle(const std::vector<int>& pred, const std::vector<int>& truth, int g) {
    const double n = static_cast<double>(pred.size());
    double num = 0, den = 0;
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            double o = 0, ei = 0, ej = 0;
            for (size_t k = 0; k < pred.size(); ++k) {
                o += (pred[k] == i && truth[k] == j);
                ei += (pred[k] == i);
                ej += (truth[k] == j);
            }
            const double w = static_cast<double>((i - j) * (i - j)) / ((g - 1) * (g - 1));
            num += w * o;
            den += w * ei * ej / n;
        }
    if (den == 0) return num == 0 ? 1.0 : 0.0;
    return 1.0 - num / den;
}

double auc_oracle(const std::vector<double>& score, const std::vector<int>& truth) {
    double wins = 0;
    long pairs = 0;
    for (size_t i = 0; i < score.size(); ++i)
        for (size_t j = 0; j < score.size(); ++j) {
            if (truth[i] != 1 || truth[j] != 0) continue;
            ++pairs;
            if (score[i] > score[j])
                wins += 1.0;
            else if (score[i] == score[j])
                wins += 0.5;
        }
    return wins / pairs;
}

double dice_oracle(const std::vector<int>& p, const std::vector<int>& t) {
    long inter = 0, sp = 0, st = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] && t[i]);
        sp += p[i] != 0;
        st += t[i] != 0;
    }
    if (sp + st == 0) return 1.0;
    return 2.0 * inter / (sp + st);
}

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

TaskSpec tiny_cls_task(uint64_t seed, int classes = 5) {
    TaskSpec t;
    t.kind = TaskKind::Classification;
    t.num_classes = classes;
    t.metric = classes == 2 ? TaskMetric::Auc : TaskMetric::Kappa;
    t.epochs = 2;
    t.dataset.synthetic = true;
    t.dataset.seed = seed;
    t.dataset.train_count = 32;
    t.dataset.eval_count = 24;
    t.dataset.side = 16;
    return t;
}

}  // namespace

TEST_CASE("kappa boundary cases and oracle agreement") {
    std::vector<int> same = {0, 1, 2, 3, 4, 2, 1};
    REQUIRE(quadratic_weighted_kappa(same, same, 5) == 1.0);

    std::vector<int> constant(40, 2), varied;
    Rng rng(1);
    for (int i = 0; i < 40; ++i) varied.push_back(static_cast<int>(rng.uniform_int(5)));
    const double k = quadratic_weighted_kappa(constant, varied, 5);
    REQUIRE(k <= 0.0);
    REQUIRE(std::abs(k - kappa_oracle(constant, varied, 5)) < 1e-12);

    for (int trial = 0; trial < 200; ++trial) {
        Rng r(trial + 100);
        const int n = 5 + static_cast<int>(r.uniform_int(60));
        const int g = 2 + static_cast<int>(r.uniform_int(5));
        std::vector<int> p(n), t(n);
        for (int i = 0; i < n; ++i) {
            p[i] = static_cast<int>(r.uniform_int(g));
            t[i] = static_cast<int>(r.uniform_int(g));
        }
        REQUIRE(std::abs(quadratic_weighted_kappa(p, t, g) - kappa_oracle(p, t, g)) < 1e-9);
    }

    REQUIRE_THROWS_AS(quadratic_weighted_kappa({}, {}, 5), ValidationError);
    REQUIRE_THROWS_AS(quadratic_weighted_kappa({5}, {0}, 5), ValidationError);
}

TEST_CASE("auc boundary cases, ties, oracle agreement") {
    REQUIRE(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    REQUIRE(auc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}) == 0.0);

    for (int trial = 0; trial < 200; ++trial) {
        Rng r(trial + 900);
        const int n = 6 + static_cast<int>(r.uniform_int(50));
        std::vector<double> s(n);
        std::vector<int> t(n);
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            s[i] = std::round(r.uniform() * 8) / 8.0;  // forces ties
            t[i] = r.uniform() < 0.4;
            has0 |= t[i] == 0;
            has1 |= t[i] == 1;
        }
        if (!has0 || !has1) continue;
        REQUIRE(std::abs(auc(s, t) - auc_oracle(s, t)) < 1e-12);
    }

    REQUIRE_THROWS_AS(auc({0.5, 0.6}, {1, 1}), ValidationError);
    REQUIRE_THROWS_AS(auc({0.5, 0.6}, {0, 0}), ValidationError);
}

TEST_CASE("dice boundary cases and oracle agreement") {
    std::vector<int> a = {1, 1, 0, 0}, b = {0, 0, 1, 1};
    REQUIRE(dice(a, 2, 2, a, 2, 2) == 1.0);
    REQUIRE(dice(a, 2, 2, b, 2, 2) == 0.0);
    // P covers half of T with |P| == |T|
    std::vector<int> p = {1, 1, 0, 0}, t = {1, 0, 1, 0};
    REQUIRE(dice(p, 2, 2, t, 2, 2) == 0.5);
    std::vector<int> empty(4, 0);
    REQUIRE(dice(empty, 2, 2, empty, 2, 2) == 1.0);
    REQUIRE_THROWS_AS(dice(a, 2, 2, b, 4, 1), DimensionError);

    for (int trial = 0; trial < 200; ++trial) {
        Rng r(trial + 500);
        const int h = 2 + static_cast<int>(r.uniform_int(6)), w = 2 + static_cast<int>(r.uniform_int(6));
        std::vector<int> pm(h * w), tm(h * w);
        for (auto& v : pm) v = r.uniform() < 0.3;
        for (auto& v : tm) v = r.uniform() < 0.3;
        REQUIRE(std::abs(dice(pm, h, w, tm, h, w) - dice_oracle(pm, tm)) < 1e-12);
    }
}

TEST_CASE("random policy is invariant to theta") {
    DesignSpace space = tiny_space(1);
    auto arch = sample_architecture(space, 0);
    HyperInitializer<float> h1(tiny_cfg(), 10), h2(tiny_cfg(), 20);
    Rng r1(7), r2(7);
    auto p1 = initialize<float>(&h1, arch, {InitMode::Random}, r1);
    auto p2 = initialize<float>(&h2, arch, {InitMode::Random}, r2);
    for (const auto& [id, roles] : p1.values)
        for (const auto& [role, t] : roles) REQUIRE(t->data == p2.values.at(id).at(role)->data);
}

TEST_CASE("full policy keeps the predicted body bit-exact and redraws the head") {
    DesignSpace space = tiny_space(2);
    auto arch = retarget_head(sample_architecture(space, 1), 10);
    HyperInitializer<float> h(tiny_cfg(), 30);
    auto predicted = h.predict(arch);
    Rng rng(3);
    auto init = initialize<float>(&h, arch, {InitMode::Full}, rng);

    // head node: linear with out = 10
    int head_id = -1;
    for (const auto& n : arch.nodes)
        if (n.category == OpCategory::Linear) head_id = n.id;
    REQUIRE(init.values.at(head_id).at("weight")->shape[0] == 10);
    REQUIRE(init.values.at(head_id).at("weight")->data != predicted.values.at(head_id).at("weight")->data);
    for (const auto& [id, roles] : init.values) {
        if (id == head_id) continue;
        for (const auto& [role, t] : roles) REQUIRE(t->data == predicted.values.at(id).at(role)->data);
    }
}

TEST_CASE("encoder-only policy splits a unet between predict and random") {
    auto unet = make_unet(4, 2, 2, 16);
    HypernetConfig cfg = tiny_cfg();
    HyperInitializer<float> h(cfg, 40);
    auto predicted = h.predict(unet);
    const auto enc = encoder_node_ids(unet);
    Rng r1(1), r2(2);
    auto i1 = initialize<float>(&h, unet, {InitMode::EncoderOnly}, r1);
    auto i2 = initialize<float>(&h, unet, {InitMode::EncoderOnly}, r2);
    const int head_id = [&] {
        for (const auto& n : unet.nodes)
            if (n.category == OpCategory::Conv2d && n.attrs->out == 2) return n.id;
        return -1;
    }();
    for (const auto& [id, roles] : i1.values) {
        for (const auto& [role, t] : roles) {
            if (enc.count(id) && id != head_id) {
                REQUIRE(t->data == predicted.values.at(id).at(role)->data);
                REQUIRE(t->data == i2.values.at(id).at(role)->data);
            } else if (role == "weight") {
                // decoder and head differ across seeds
                REQUIRE(t->data != i2.values.at(id).at(role)->data);
            }
        }
    }
}

TEST_CASE("finetune with zero epochs records only the raw-init evaluation") {
    DesignSpace space = tiny_space(3);
    auto arch = retarget_head(sample_architecture(space, 2), 5);
    Rng rng(5);
    auto init = initialize<float>(nullptr, arch, {InitMode::Random}, rng);
    TaskSpec task = tiny_cls_task(11);
    task.epochs = 0;
    FinetuneConfig cfg;
    cfg.batch_size = 8;
    cfg.seed = 21;
    auto rec = finetune(arch, init, task, cfg);
    REQUIRE(rec.rows.size() == 1);
    REQUIRE(rec.rows[0].epoch == 0);
    REQUIRE(std::isnan(rec.rows[0].train_loss));
    REQUIRE(rec.rows[0].metric >= -1.0);
}

TEST_CASE("finetune is bit-reproducible for identical seeds") {
    DesignSpace space = tiny_space(4);
    auto arch = retarget_head(sample_architecture(space, 3), 5);
    TaskSpec task = tiny_cls_task(13);
    auto run = [&] {
        Rng rng(6);
        auto init = initialize<float>(nullptr, arch, {InitMode::Random}, rng);
        FinetuneConfig cfg;
        cfg.batch_size = 8;
        cfg.seed = 31;
        return finetune(arch, init, task, cfg).checksum();
    };
    REQUIRE(run() == run());
}

TEST_CASE("auc task rejects single-class training subsamples") {
    DesignSpace space = tiny_space(5);
    auto arch = retarget_head(sample_architecture(space, 4), 2);
    Rng rng(7);
    auto init = initialize<float>(nullptr, arch, {InitMode::Random}, rng);
    TaskSpec task = tiny_cls_task(17, 2);
    task.dataset.train_count = 1;  // one sample -> one class
    FinetuneConfig cfg;
    cfg.seed = 41;
    REQUIRE_THROWS_AS(finetune(arch, init, task, cfg), ValidationError);
}

TEST_CASE("metric/kind compatibility is validated") {
    TaskSpec t = tiny_cls_task(19);
    t.metric = TaskMetric::Dice;
    REQUIRE_THROWS_AS(t.validate(), ValidationError);
    TaskSpec t2 = tiny_cls_task(19);
    t2.subsample_fraction = 0.0;
    REQUIRE_THROWS_AS(t2.validate(), ValidationError);
}

TEST_CASE("cam zero head weights give a zero map") {
    // input -> conv -> relu -> gap -> linear -> head
    OpAttrs conv;
    conv.in = 3, conv.out = 2, conv.kernel = 3, conv.stride = 1, conv.padding = 1;
    OpAttrs lin;
    lin.in = 2, lin.out = 3;
    std::vector<OpNode> nodes = {{0, OpCategory::Input, std::nullopt},  {1, OpCategory::Conv2d, conv},
                                 {2, OpCategory::Relu, std::nullopt},   {3, OpCategory::GlobalAvgPool, std::nullopt},
                                 {4, OpCategory::Linear, lin},          {5, OpCategory::OutputHead, std::nullopt}};
    auto arch = finalize_architecture("camnet", nodes, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
    auto plan = infer_shapes(arch, {3, 8, 8});
    ParamSet<float> ps;
    Rng rng(8);
    for (const auto& [id, roles] : plan.params)
        for (const auto& [role, shape] : roles) {
            auto t = make_tensor<float>(shape);
            if (role == "weight" && id == 1)
                for (auto& v : t->data) v = static_cast<float>(rng.uniform(-1, 1));
            ps.values[id][role] = t;  // head weight stays zero
        }
    auto x = make_tensor<float>({1, 3, 8, 8});
    for (auto& v : x->data) v = static_cast<float>(rng.uniform());
    auto heat = cam(arch, ps, x, 1);
    REQUIRE(heat->shape == std::vector<int>{8, 8});
    for (float v : heat->data) REQUIRE(v == 0.0f);
}

TEST_CASE("cam single feature map with identity head normalizes the feature") {
    OpAttrs conv;
    conv.in = 3, conv.out = 1, conv.kernel = 1, conv.stride = 1, conv.padding = 0;
    OpAttrs lin;
    lin.in = 1, lin.out = 2;
    std::vector<OpNode> nodes = {{0, OpCategory::Input, std::nullopt},  {1, OpCategory::Conv2d, conv},
                                 {2, OpCategory::GlobalAvgPool, std::nullopt}, {3, OpCategory::Linear, lin},
                                 {4, OpCategory::OutputHead, std::nullopt}};
    auto arch = finalize_architecture("cam1", nodes, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
    ParamSet<float> ps;
    auto w = make_tensor<float>({1, 3, 1, 1}, {0.4f, 0.35f, 0.25f});
    ps.values[1]["weight"] = w;
    ps.values[1]["bias"] = make_tensor<float>({1}, std::vector<float>{-0.5f});  // some negatives to rectify
    auto lw = make_tensor<float>({2, 1});
    lw->at2(0, 0) = 1.0f;  // identity for class 0
    ps.values[3]["weight"] = lw;
    ps.values[3]["bias"] = make_tensor<float>({2});
    auto x = make_tensor<float>({1, 3, 6, 6});
    Rng rng(9);
    for (auto& v : x->data) v = static_cast<float>(rng.uniform());

    std::map<int, TensorPtr<float>> trace;
    ExecOptions<float> opts;
    opts.trace = &trace;
    execute(arch, ps, x, opts);
    auto feature = trace.at(1);
    auto heat = cam(arch, ps, x, 0);
    float mx = 0;
    for (int i = 0; i < 36; ++i) mx = std::max(mx, std::max(0.0f, feature->data[i]));
    for (int i = 0; i < 36; ++i)
        REQUIRE(heat->data[i] == Catch::Approx(std::max(0.0f, feature->data[i]) / mx).margin(1e-6));
}

TEST_CASE("cam finds the dominant activation cell and rejects wrong tails") {
    OpAttrs conv;
    conv.in = 3, conv.out = 2, conv.kernel = 1, conv.stride = 1, conv.padding = 0;
    OpAttrs lin;
    lin.in = 2, lin.out = 2;
    std::vector<OpNode> nodes = {{0, OpCategory::Input, std::nullopt},  {1, OpCategory::Conv2d, conv},
                                 {2, OpCategory::Relu, std::nullopt},   {3, OpCategory::GlobalAvgPool, std::nullopt},
                                 {4, OpCategory::Linear, lin},          {5, OpCategory::OutputHead, std::nullopt}};
    auto arch = finalize_architecture("camdom", nodes, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}});
    ParamSet<float> ps;
    auto w = make_tensor<float>({2, 3, 1, 1});
    for (auto& v : w->data) v = 0.5f;
    ps.values[1]["weight"] = w;
    ps.values[1]["bias"] = make_tensor<float>({2});
    auto lw = make_tensor<float>({2, 2});
    lw->at2(0, 0) = 1.0f;
    lw->at2(0, 1) = 1.0f;
    ps.values[4]["weight"] = lw;
    ps.values[4]["bias"] = make_tensor<float>({2});
    auto x = make_tensor<float>({1, 3, 6, 6});
    for (auto& v : x->data) v = 0.1f;
    for (int c = 0; c < 3; ++c) x->data[(c * 6 + 2) * 6 + 4] = 1.0f;  // cell (2,4) dominates
    auto heat = cam(arch, ps, x, 0);
    int argmax = 0;
    for (int i = 1; i < 36; ++i)
        if (heat->data[i] > heat->data[argmax]) argmax = i;
    REQUIRE(argmax == 2 * 6 + 4);
    for (float v : heat->data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }

    auto unet = make_unet(4, 2, 2, 16);
    Rng rng(10);
    auto ups = initialize<float>(nullptr, unet, {InitMode::Random}, rng);
    auto ux = make_tensor<float>({1, 3, 16, 16});
    REQUIRE_THROWS_AS(cam(unet, ups, ux, 0), ValidationError);
}

TEST_CASE("compare produces one record per (init, seed, fraction) and aggregates") {
    DesignSpace space = tiny_space(6);
    auto arch = retarget_head(sample_architecture(space, 5), 3);
    HyperInitializer<float> h(tiny_cfg(), 50);
    TaskSpec task = tiny_cls_task(23, 3);
    task.metric = TaskMetric::Kappa;
    task.epochs = 1;
    FinetuneConfig cfg;
    cfg.batch_size = 8;
    cfg.seed = 60;
    CompareOptions opts;
    opts.seeds = {1};
    opts.fractions = {1.0};
    opts.threads = 2;
    auto report = compare_initializers(arch, h, task, cfg, opts);
    REQUIRE(report.runs.size() == 2);
    REQUIRE(report.cells.size() == 2);
    std::set<std::string> tags;
    for (const auto& r : report.runs) {
        tags.insert(r.init);
        REQUIRE(r.rows.size() == 2);  // epoch 0 + epoch 1
    }
    REQUIRE(tags == std::set<std::string>{"hyper", "random"});

    const auto dir = std::filesystem::temp_directory_path() / "hyperinit_compare_test";
    std::filesystem::remove_all(dir);
    write_compare_report(dir.string(), report);
    REQUIRE(std::filesystem::exists(dir / "aggregate.csv"));
    REQUIRE(std::filesystem::exists(dir / "summary.json"));
    int run_files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "runs")) (void)e, ++run_files;
    REQUIRE(run_files == 2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("segmentation finetune smoke on a small unet") {
    auto unet = make_unet(4, 2, 2, 16);
    HyperInitializer<float> h(tiny_cfg(), 70);
    Rng rng(11);
    auto init = initialize<float>(&h, unet, {InitMode::EncoderOnly}, rng);
    TaskSpec task;
    task.kind = TaskKind::Segmentation;
    task.metric = TaskMetric::Dice;
    task.num_classes = 2;
    task.epochs = 1;
    task.dataset.synthetic = true;
    task.dataset.seed = 29;
    task.dataset.train_count = 16;
    task.dataset.eval_count = 8;
    task.dataset.side = 16;
    FinetuneConfig cfg;
    cfg.batch_size = 8;
    cfg.seed = 71;
    auto rec = finetune(unet, init, task, cfg);
    REQUIRE(rec.rows.size() == 2);
    for (const auto& r : rec.rows) {
        REQUIRE(r.metric >= 0.0);
        REQUIRE(r.metric <= 1.0);
    }
}
