#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hyperinit/checkpoint.hpp"
#include "hyperinit/downstream.hpp"

using namespace hyperinit;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("HYPERINIT_CLI");
    REQUIRE(env != nullptr);
    return env;
}

struct CliResult {
    int exit_code;
    std::string out, err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
    const auto out_file = dir / "stdout.txt";
    const auto err_file = dir / "stderr.txt";
    const std::string cmd = cli_path() + " " + args + " >" + out_file.string() + " 2>" + err_file.string();
    const int rc = std::system(cmd.c_str());
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p);
        return std::string((std::istreambuf_iterator<char>(is)), {});
    };
    return {WEXITSTATUS(rc), slurp(out_file), slurp(err_file)};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

const char* kSampleConfig = R"({
  "design_space": {
    "stem_weights": {"vgg": 0.3, "resnet": 0.3, "mobilenet": 0.2, "unet_encoder": 0.2},
    "depth": [2, 3],
    "base_channels": [4, 8],
    "kernels": [1, 3],
    "input_side": 16
  },
  "count": 3,
  "seed": 11
})";

const char* kPretrainConfig = R"({
  "collection": "archs",
  "dataset": {"synthetic": {"count": 64, "seed": 5}},
  "epochs": 2,
  "batch_size": 16,
  "side": 16,
  "hypernet": {"d": 8, "K": 2, "c_max": 8, "k_max": 3},
  "holdout_fraction": 0.34,
  "seed": 7
})";

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hyperinit_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
        fs::current_path(path);
    }
    ~TempDir() {
        fs::current_path(fs::temp_directory_path());
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("sample writes count documents plus manifest, deterministically") {
    TempDir tmp;
    write_file("sample.json", kSampleConfig);
    auto r1 = run_cli("sample --config sample.json --out a1", tmp.path);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(fs::exists("a1/manifest.json"));
    int docs = 0;
    for (const auto& e : fs::directory_iterator("a1"))
        if (e.path().filename().string().rfind("arch-", 0) == 0) ++docs;
    REQUIRE(docs == 3);

    auto r2 = run_cli("sample --config sample.json --out a2", tmp.path);
    REQUIRE(r2.exit_code == 0);
    for (const auto& name : {"manifest.json", "arch-000000.json", "arch-000001.json", "arch-000002.json"})
        REQUIRE(file_bytes(fs::path("a1") / name) == file_bytes(fs::path("a2") / name));
}

TEST_CASE("sample rejects a zero-weight stem mix with a nonzero exit") {
    TempDir tmp;
    write_file("bad.json", R"({
      "design_space": {"stem_weights": {"vgg": 0.0}, "depth": [2,3]},
      "count": 2, "seed": 1
    })");
    auto r = run_cli("sample --config bad.json --out out", tmp.path);
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.rfind("error: ", 0) == 0);
    REQUIRE(r.err.find("\n") == r.err.size() - 1);  // single-line diagnostic
}

TEST_CASE("pretrain smoke run writes checkpoints and a run record") {
    TempDir tmp;
    write_file("sample.json", kSampleConfig);
    REQUIRE(run_cli("sample --config sample.json --out archs", tmp.path).exit_code == 0);
    write_file("pretrain.json", kPretrainConfig);
    auto r = run_cli("pretrain --config pretrain.json --out pre", tmp.path);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists("pre/checkpoint.bin"));
    REQUIRE(fs::exists("pre/checkpoint-epoch-000.bin"));
    REQUIRE(fs::exists("pre/checkpoint-epoch-001.bin"));
    REQUIRE(fs::exists("pre/pretrain.csv"));

    SECTION("resume from an interrupted run reproduces the uninterrupted trajectory") {
        // simulate an interruption after epoch 0
        fs::create_directories("pre_resume");
        fs::copy_file("pre/checkpoint-epoch-000.bin", "pre_resume/checkpoint-epoch-000.bin");
        auto r2 = run_cli("pretrain --config pretrain.json --out pre_resume --resume", tmp.path);
        REQUIRE(r2.exit_code == 0);
        REQUIRE(r2.out.find("resuming from step 2") != std::string::npos);
        REQUIRE(file_bytes("pre_resume/checkpoint.bin") == file_bytes("pre/checkpoint.bin"));

        nlohmann::json meta;
        HyperInitializer<float>::load("pre_resume/checkpoint.bin", &meta);
        REQUIRE(meta["step"] == 4);  // 2 epochs x 2 steps
    }

    SECTION("resume refuses when the schedule is already complete") {
        auto r3 = run_cli("pretrain --config pretrain.json --out pre --resume", tmp.path);
        REQUIRE(r3.exit_code != 0);
        REQUIRE(r3.err.find("past the schedule") != std::string::npos);
    }
}

TEST_CASE("pretrain with a missing dataset path names the path and fails") {
    TempDir tmp;
    write_file("sample.json", kSampleConfig);
    REQUIRE(run_cli("sample --config sample.json --out archs", tmp.path).exit_code == 0);
    write_file("pretrain.json", R"({
      "collection": "archs",
      "dataset": {"root": "/no/such/dataset"},
      "epochs": 1, "seed": 1
    })");
    auto r = run_cli("pretrain --config pretrain.json --out pre", tmp.path);
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("/no/such/dataset") != std::string::npos);
}

TEST_CASE("init produces a loadable, shape-valid paramset, idempotently") {
    TempDir tmp;
    write_file("sample.json", kSampleConfig);
    REQUIRE(run_cli("sample --config sample.json --out archs", tmp.path).exit_code == 0);
    write_file("pretrain.json", kPretrainConfig);
    REQUIRE(run_cli("pretrain --config pretrain.json --out pre", tmp.path).exit_code == 0);
    write_file("init.json", R"({
      "checkpoint": "pre/checkpoint.bin",
      "architecture": "archs/arch-000001.json",
      "policy": "full",
      "seed": 3
    })");
    auto r = run_cli("init --config init.json --out p1", tmp.path);
    REQUIRE(r.exit_code == 0);

    std::ifstream is("archs/arch-000001.json");
    const std::string doc((std::istreambuf_iterator<char>(is)), {});
    auto arch = parse_architecture(doc);
    nlohmann::json meta;
    auto ps = load_paramset<float>("p1/params.bin", &meta);
    validate_paramset(arch, ps);
    REQUIRE(meta["policy"] == "full");
    REQUIRE(meta["architecture"] == arch.name);

    REQUIRE(run_cli("init --config init.json --out p2", tmp.path).exit_code == 0);
    REQUIRE(file_bytes("p1/params.bin") == file_bytes("p2/params.bin"));
}

TEST_CASE("locked output directories are refused") {
    TempDir tmp;
    write_file("sample.json", kSampleConfig);
    fs::create_directories("busy");
    std::ofstream("busy/.hyperinit.lock") << "";
    auto r = run_cli("sample --config sample.json --out busy", tmp.path);
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("locked") != std::string::npos);
}

TEST_CASE("finetune subcommand trains and records a run") {
    TempDir tmp;
    write_file("sample.json", kSampleConfig);
    REQUIRE(run_cli("sample --config sample.json --out archs", tmp.path).exit_code == 0);
    write_file("pretrain.json", kPretrainConfig);
    REQUIRE(run_cli("pretrain --config pretrain.json --out pre", tmp.path).exit_code == 0);
    write_file("ft.json", R"({
      "checkpoint": "pre/checkpoint.bin",
      "architecture": "archs/arch-000001.json",
      "policy": "full",
      "task": {
        "kind": "classification", "num_classes": 3, "metric": "kappa", "epochs": 1,
        "dataset": {"synthetic": true, "seed": 9, "train_count": 16, "eval_count": 12, "side": 16}
      },
      "train": {"batch_size": 8},
      "seed": 4
    })");
    auto r = run_cli("finetune --config ft.json --out ft", tmp.path);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists("ft/run.csv"));
    std::ifstream csv("ft/run.csv");
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    REQUIRE(rows == 4);  // comment + header + epoch0 + epoch1
}

TEST_CASE("unknown config keys are rejected") {
    TempDir tmp;
    write_file("bad.json", R"({"design_space": {"stem_weights": {"vgg": 1.0}, "depth": [2,2]},
                               "count": 1, "seed": 1, "surprise": true})");
    auto r = run_cli("sample --config bad.json --out out", tmp.path);
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("surprise") != std::string::npos);
}
