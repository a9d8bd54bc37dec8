// Workflow CLI: sample -> pretrain -> init -> finetune -> compare.
// Every subcommand takes --config/--out and derives all randomness from one
// root seed, so identical invocations write identical artifacts (wall-clock
// columns in run records aside).

#include <CLI11.hpp>
#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "hyperinit/hyperinit.hpp"

namespace fs = std::filesystem;
using namespace hyperinit;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

// exclusive ownership of an output directory for the process lifetime
struct DirLock {
    fs::path path;
    explicit DirLock(const fs::path& out) : path(out / ".hyperinit.lock") {
        fs::create_directories(out);
        const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw StateError("output directory '" + out.string() + "' is locked by another invocation");
        ::close(fd);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

uint64_t config_seed(const json& cfg, int64_t cli_seed) {
    if (cli_seed >= 0) return static_cast<uint64_t>(cli_seed);
    return cfg.value("seed", 0ULL);
}

int threads_from_env(int fallback) {
    if (const char* env = std::getenv("HYPERINIT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return fallback;
}

DatasetSpec dataset_spec_from_json(const json& j) {
    detail::expect_keys(j, {}, {"synthetic", "root", "labels", "seed", "train_count", "eval_count", "side"},
                        "dataset");
    DatasetSpec d;
    if (j.contains("root")) {
        d.synthetic = false;
        d.root = j["root"].get<std::string>();
        if (j.contains("labels")) d.labels_csv = j["labels"].get<std::string>();
    }
    d.seed = j.value("seed", 0ULL);
    d.train_count = j.value("train_count", 200);
    d.eval_count = j.value("eval_count", 100);
    d.side = j.value("side", 64);
    return d;
}

TaskSpec task_from_json(const json& j) {
    detail::expect_keys(j, {"kind", "num_classes", "metric", "dataset"},
                        {"epochs", "subsample_fraction", "modality"}, "task");
    TaskSpec t;
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "classification")
        t.kind = TaskKind::Classification;
    else if (kind == "segmentation")
        t.kind = TaskKind::Segmentation;
    else
        throw ValidationError("task kind must be classification or segmentation, got '" + kind + "'");
    t.num_classes = j["num_classes"].get<int>();
    const std::string metric = j["metric"].get<std::string>();
    if (metric == "kappa")
        t.metric = TaskMetric::Kappa;
    else if (metric == "auc")
        t.metric = TaskMetric::Auc;
    else if (metric == "dice")
        t.metric = TaskMetric::Dice;
    else
        throw ValidationError("unknown metric '" + metric + "'");
    t.epochs = j.value("epochs", 10);
    t.subsample_fraction = j.value("subsample_fraction", 1.0);
    t.modality = j.value("modality", "synthetic");
    t.dataset = dataset_spec_from_json(j["dataset"]);
    t.validate();
    return t;
}

FinetuneConfig train_from_json(const json& j, uint64_t seed) {
    FinetuneConfig f;
    if (!j.is_null()) {
        detail::expect_keys(j, {}, {"batch_size", "base_lr", "momentum", "crop_scale"}, "train");
        f.batch_size = j.value("batch_size", 16);
        f.base_lr = j.value("base_lr", 0.01);
        f.momentum = j.value("momentum", 0.9);
        if (j.contains("crop_scale")) {
            f.crop_lo = j["crop_scale"][0].get<double>();
            f.crop_hi = j["crop_scale"][1].get<double>();
        }
    }
    f.seed = seed;
    return f;
}

// tracked writes: anything already written is removed if a later write fails
struct OutputTracker {
    std::vector<fs::path> written;
    void wrote(const fs::path& p) { written.push_back(p); }
    void cleanup() {
        for (const auto& p : written) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }
};

void write_text(const fs::path& path, const std::string& text, OutputTracker& tracker) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw IoError("write failed for '" + path.string() + "'");
    tracker.wrote(path);
}

// ---------------------------------------------------------------------------

int cmd_sample(const std::string& config_path, const std::string& out, int64_t cli_seed) {
    auto cfg = load_config(config_path);
    detail::expect_keys(cfg, {"design_space", "count"}, {"seed"}, "sample config");
    DirLock lock(out);
    auto space = design_space_from_json(cfg["design_space"]);
    space.seed = config_seed(cfg, cli_seed);
    const int count = cfg["count"].get<int>();
    auto collection = make_collection(space, count);

    OutputTracker tracker;
    try {
        write_text(fs::path(out) / "manifest.json", collection_manifest(collection).dump(2) + "\n", tracker);
        for (int i = 0; i < count; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "arch-%06d.json", i);
            write_text(fs::path(out) / name, serialize_architecture(collection.sample(i)), tracker);
        }
    } catch (...) {
        tracker.cleanup();
        throw;
    }
    std::cout << "wrote " << count << " architectures + manifest to " << out << "\n";
    return 0;
}

Collection load_collection_dir(const std::string& dir) {
    return collection_from_manifest(json::parse(read_file((fs::path(dir) / "manifest.json").string())));
}

std::vector<TensorPtr<float>> dataset_images_from_json(const json& j, int side) {
    detail::expect_keys(j, {}, {"synthetic", "root", "manifest"}, "pretrain dataset");
    if (j.contains("synthetic")) {
        const auto& s = j["synthetic"];
        detail::expect_keys(s, {"count"}, {"seed"}, "synthetic dataset");
        return make_pretrain_corpus(s.value("seed", 0ULL), s["count"].get<int>(), side);
    }
    if (!j.contains("root")) throw ValidationError("pretrain dataset needs 'synthetic' or 'root'");
    auto images = load_image_directory(j["root"].get<std::string>(), j.value("manifest", std::string()));
    if (images.empty()) throw ValidationError("no readable images under '" + j["root"].get<std::string>() + "'");
    return images;
}

int cmd_pretrain(const std::string& config_path, const std::string& out, int64_t cli_seed, bool resume) {
    auto cfg = load_config(config_path);
    detail::expect_keys(cfg,
                        {"collection", "dataset", "epochs"},
                        {"holdout_fraction", "batch_size", "side", "crop_scale", "hypernet", "base_lr",
                         "momentum", "modality", "seed"},
                        "pretrain config");
    DirLock lock(out);
    auto collection = load_collection_dir(cfg["collection"].get<std::string>());

    PretrainConfig pc;
    pc.epochs = cfg["epochs"].get<int>();
    pc.batch_size = cfg.value("batch_size", 32);
    pc.side = cfg.value("side", 32);
    if (cfg.contains("crop_scale")) {
        pc.crop_lo = cfg["crop_scale"][0].get<double>();
        pc.crop_hi = cfg["crop_scale"][1].get<double>();
    }
    pc.base_lr = cfg.value("base_lr", 0.01);
    pc.momentum = cfg.value("momentum", 0.9);
    pc.modality = cfg.value("modality", "synthetic");
    pc.holdout_fraction = cfg.value("holdout_fraction", 0.1);
    pc.seed = config_seed(cfg, cli_seed);
    pc.validate();

    HypernetConfig hc;
    if (cfg.contains("hypernet")) {
        const auto& hj = cfg["hypernet"];
        detail::expect_keys(hj, {}, {"d", "K", "s_max", "c_max", "k_max"}, "hypernet");
        hc.d = hj.value("d", 32);
        hc.K = hj.value("K", 3);
        hc.s_max = hj.value("s_max", 50);
        hc.c_max = hj.value("c_max", 64);
        hc.k_max = hj.value("k_max", 5);
    }

    auto images = dataset_images_from_json(cfg["dataset"], pc.side);
    auto [train_ids, held_ids] = holdout_split(collection, pc.holdout_fraction);

    int start_step = 0;
    std::unordered_map<std::string, std::vector<float>> velocity;
    std::optional<HyperInitializer<float>> h;
    const fs::path final_ck = fs::path(out) / "checkpoint.bin";
    if (resume) {
        // prefer the final checkpoint; an interrupted run leaves only the
        // per-epoch ones, so fall back to the newest of those
        fs::path source = final_ck;
        if (!fs::exists(source)) {
            for (const auto& e : fs::directory_iterator(out)) {
                const auto name = e.path().filename().string();
                if (name.rfind("checkpoint-epoch-", 0) == 0 &&
                    (source == final_ck || name > source.filename().string()))
                    source = e.path();
            }
            if (source == final_ck)
                throw StateError("--resume given but no checkpoint exists under '" + out + "'");
        }
        json meta;
        h.emplace(HyperInitializer<float>::load(source.string(), &meta));
        start_step = meta.at("step").get<int>();
        auto ck = load_checkpoint<float>(source.string());
        for (const auto& e : ck.entries)
            if (e.name.rfind("opt.", 0) == 0) velocity[e.name.substr(4)] = e.value->data;
        std::cout << "resuming from step " << start_step << "\n";
    } else {
        h.emplace(hc, derive_seed(pc.seed, "hypernet-init"));
    }

    auto result = pretrain(*h, collection, train_ids, images, pc, out, start_step,
                           velocity.empty() ? nullptr : &velocity);
    write_pretrain_csv((fs::path(out) / "pretrain.csv").string(), result.records);

    // final checkpoint mirrors the last epoch checkpoint
    char last[64];
    std::snprintf(last, sizeof(last), "checkpoint-epoch-%03d.bin", pc.epochs - 1);
    fs::copy_file(fs::path(out) / last, final_ck, fs::copy_options::overwrite_existing);
    std::cout << "pretraining done: " << result.steps_done << " steps, last-epoch mean loss "
              << result.last_epoch_mean_loss << "\n";
    return 0;
}

int cmd_init(const std::string& config_path, const std::string& out, int64_t cli_seed) {
    auto cfg = load_config(config_path);
    detail::expect_keys(cfg, {"checkpoint", "architecture", "policy"}, {"seed"}, "init config");
    DirLock lock(out);
    const auto arch = parse_architecture(read_file(cfg["architecture"].get<std::string>()));
    const auto policy = init_mode_from_string(cfg["policy"].get<std::string>());
    const uint64_t seed = config_seed(cfg, cli_seed);

    std::optional<HyperInitializer<float>> h;
    json meta;
    if (policy != InitMode::Random) {
        h.emplace(HyperInitializer<float>::load(cfg["checkpoint"].get<std::string>(), &meta));
    }
    Rng rng(derive_seed(seed, "init"));
    auto params = initialize<float>(h ? &*h : nullptr, arch, {policy}, rng, h ? &meta : nullptr);
    validate_paramset(arch, params);
    save_paramset((fs::path(out) / "params.bin").string(),
                  params,
                  {{"architecture", arch.name}, {"policy", to_string(policy)}, {"seed", seed}});
    std::cout << "wrote parameters for '" << arch.name << "' (" << to_string(policy) << ") to " << out
              << "/params.bin\n";
    return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& out, int64_t cli_seed) {
    auto cfg = load_config(config_path);
    detail::expect_keys(cfg, {"architecture", "policy", "task"}, {"checkpoint", "train", "seed"},
                        "finetune config");
    DirLock lock(out);
    auto arch = parse_architecture(read_file(cfg["architecture"].get<std::string>()));
    const auto policy = init_mode_from_string(cfg["policy"].get<std::string>());
    auto task = task_from_json(cfg["task"]);
    arch = retarget_head(arch, task.num_classes);
    const uint64_t seed = config_seed(cfg, cli_seed);
    auto train_cfg = train_from_json(cfg.value("train", json()), seed);

    std::optional<HyperInitializer<float>> h;
    json meta;
    if (policy != InitMode::Random) {
        if (!cfg.contains("checkpoint"))
            throw ValidationError("policy '" + std::string(to_string(policy)) + "' needs a checkpoint");
        h.emplace(HyperInitializer<float>::load(cfg["checkpoint"].get<std::string>(), &meta));
    }
    Rng rng(derive_seed(seed, "init"));
    auto params = initialize<float>(h ? &*h : nullptr, arch, {policy}, rng, h ? &meta : nullptr, task.modality);
    auto rec = finetune(arch, std::move(params), task, train_cfg);
    rec.init = to_string(policy);
    write_run_csv((fs::path(out) / "run.csv").string(), rec);
    std::cout << "finetune done: best " << to_string(task.metric) << " " << rec.best_metric() << "\n";
    return 0;
}

int cmd_compare(const std::string& config_path, const std::string& out, int64_t cli_seed) {
    auto cfg = load_config(config_path);
    detail::expect_keys(cfg, {"checkpoint", "architecture", "task", "seeds"},
                        {"policy", "train", "fractions", "cam_epochs", "threads", "seed"}, "compare config");
    DirLock lock(out);
    auto arch = parse_architecture(read_file(cfg["architecture"].get<std::string>()));
    auto task = task_from_json(cfg["task"]);
    arch = retarget_head(arch, task.num_classes);
    const uint64_t seed = config_seed(cfg, cli_seed);

    json meta;
    HyperInitializer<float> h = HyperInitializer<float>::load(cfg["checkpoint"].get<std::string>(), &meta);
    if (meta.contains("modality") && meta["modality"].get<std::string>() != task.modality)
        std::cerr << "warning: checkpoint modality '" << meta["modality"].get<std::string>()
                  << "' differs from task modality '" << task.modality << "'\n";

    CompareOptions opts;
    opts.seeds = cfg["seeds"].get<std::vector<uint64_t>>();
    if (cfg.contains("fractions")) opts.fractions = cfg["fractions"].get<std::vector<double>>();
    if (cfg.contains("cam_epochs")) opts.cam_epochs = cfg["cam_epochs"].get<std::vector<int>>();
    opts.hyper_mode = init_mode_from_string(cfg.value("policy", std::string("full")));
    opts.threads = threads_from_env(cfg.value("threads", 2));

    auto report = compare_initializers(arch, h, task, train_from_json(cfg.value("train", json()), seed), opts);
    write_compare_report(out, report);
    for (const auto& c : report.cells)
        std::cout << "fraction " << c.fraction << " " << c.init << ": mean best " << c.mean_best << " (sd "
                  << c.sd_best << "), median epochs-to-threshold " << c.median_epochs_to_threshold << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"architecture-agnostic weight initializer workflow"};
    app.require_subcommand(1);

    struct Args {
        std::string config, out;
        int64_t seed = -1;
        bool resume = false;
    };
    std::map<std::string, Args> args;
    for (const char* name : {"sample", "pretrain", "init", "finetune", "compare"}) {
        auto* sub = app.add_subcommand(name);
        auto& a = args[name];
        sub->add_option("--config", a.config, "JSON config file")->required();
        sub->add_option("--out", a.out, "output directory")->required();
        sub->add_option("--seed", a.seed, "override the config seed");
        if (std::string(name) == "pretrain") sub->add_flag("--resume", a.resume, "continue from checkpoint.bin");
    }

    CLI11_PARSE(app, argc, argv);
    try {
        const std::string sub = app.get_subcommands()[0]->get_name();
        const Args& a = args[sub];
        if (sub == "sample") return cmd_sample(a.config, a.out, a.seed);
        if (sub == "pretrain") return cmd_pretrain(a.config, a.out, a.seed, a.resume);
        if (sub == "init") return cmd_init(a.config, a.out, a.seed);
        if (sub == "finetune") return cmd_finetune(a.config, a.out, a.seed);
        if (sub == "compare") return cmd_compare(a.config, a.out, a.seed);
        std::cerr << "error: unknown subcommand\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
