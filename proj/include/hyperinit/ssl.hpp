#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>

#include "hyperinit/dataset.hpp"
#include "hyperinit/hypernet.hpp"

namespace hyperinit {

// Self-supervised pretraining of theta: sample an architecture and an image
// batch, predict the architecture's weights, run the rotation pretext task
// through them, and step theta. Architecture weights are never stored;
// only theta (plus its optimizer moments) learns.

template <typename T>
struct RotationBatch {
    TensorPtr<T> x;           // [N,C,S,S]
    std::vector<int> labels;  // rotation index, 0..3
};

// k*90deg rotation with the label attached
inline std::pair<TensorPtr<float>, int> rotation_transform(const TensorPtr<float>& x, int k) {
    if (k < 0 || k >= 4) throw ValidationError("rotation index must lie in [0,4), got " + std::to_string(k));
    return {rot90(x, k), k};
}

// RandomResizedCrop: area scale in [lo,hi] of the source, reflect-padding
// when the window exceeds the source, bilinear resize to side.
inline TensorPtr<float> augment_with(const TensorPtr<float>& x, int side, double scale, double ry, double rx) {
    const int h = x->shape[1], w = x->shape[2];
    int ch = std::max(1, static_cast<int>(std::lround(std::sqrt(scale) * h)));
    int cw = std::max(1, static_cast<int>(std::lround(std::sqrt(scale) * w)));
    TensorPtr<float> src = x;
    if (ch > h || cw > w) {
        const int pad = std::max(ch - h, cw - w);
        src = reflect_pad(x, (pad + 1) / 2 + 1);
    }
    const int top = static_cast<int>(ry * (src->shape[1] - ch));
    const int left = static_cast<int>(rx * (src->shape[2] - cw));
    return bilinear_resize(crop(src, top, left, ch, cw), side, side);
}

inline TensorPtr<float> augment(const TensorPtr<float>& x, int side, double scale_lo, double scale_hi, Rng& rng) {
    return augment_with(x, side, rng.uniform(scale_lo, scale_hi), rng.uniform(), rng.uniform());
}

struct PretrainConfig {
    int epochs = 50;
    int batch_size = 32;
    int side = 32;  // desk-scale input side
    double crop_lo = 0.8;
    double crop_hi = 1.2;
    int archs_per_step = 1;
    double base_lr = 0.01;
    double momentum = 0.9;
    double clip_norm = 5.0;  // global gradient-norm ceiling; 0 disables
    double holdout_fraction = 0.1;
    uint64_t seed = 0;
    std::string modality = "synthetic";

    void validate() const {
        if (epochs < 1) throw ValidationError("pretrain: epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("pretrain: batch size must be >= 1");
        if (side < 8) throw ValidationError("pretrain: side must be >= 8");
        if (crop_lo > crop_hi || crop_lo <= 0) throw ValidationError("pretrain: bad crop scale range");
        if (archs_per_step != 1) throw ValidationError("pretrain: one architecture per step is supported");
    }
};

template <typename T>
RotationBatch<T> make_rotation_batch(const std::vector<TensorPtr<float>>& images,
                                     const std::vector<int>& picks, const PretrainConfig& cfg, Rng& rng) {
    const int n = static_cast<int>(picks.size());
    RotationBatch<T> batch;
    batch.x = make_tensor<T>({n, 3, cfg.side, cfg.side});
    batch.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        auto view = augment(images[picks[i]], cfg.side, cfg.crop_lo, cfg.crop_hi, rng);
        const int k = static_cast<int>(rng.uniform_int(4));
        auto [rotated, label] = rotation_transform(view, k);
        batch.labels[i] = label;
        for (size_t j = 0; j < rotated->data.size(); ++j)
            batch.x->data[static_cast<size_t>(i) * rotated->data.size() + j] = static_cast<T>(rotated->data[j]);
    }
    return batch;
}

struct PretrainStepRecord {
    int step = 0;
    int epoch = 0;
    int arch_id = 0;
    double loss = 0;
    double lr = 0;
    long wall_ms = 0;
};

inline void write_pretrain_csv(const std::string& path, const std::vector<PretrainStepRecord>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write run record '" + path + "'");
    os << "step,epoch,arch_id,loss,lr,wall_ms\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.9g,%.9g,%ld\n", r.step, r.epoch, r.arch_id, r.loss, r.lr,
                      r.wall_ms);
        os << buf;
    }
}

// One bi-level step. Returns the pretext loss, or NaN when the step was
// skipped because the loss was not finite.
template <typename T>
double pretrain_step(HyperInitializer<T>& h, const Architecture& arch, const RotationBatch<T>& batch,
                     SgdOptimizer<T>& opt, int step_index, T clip_norm = T(5)) {
    Tape<T> tape;
    auto params = h.predict(arch, &tape);
    ExecOptions<T> opts;
    opts.training = true;
    opts.tape = &tape;
    auto logits = execute(arch, params, batch.x, opts);
    auto loss = softmax_cross_entropy(logits, batch.labels, &tape);
    const double value = static_cast<double>(loss->data[0]);
    if (!std::isfinite(value)) {
        clear_grads(h.parameters());
        return std::numeric_limits<double>::quiet_NaN();
    }
    tape.backward(loss);
    clip_grad_norm(h.parameters(), clip_norm);
    opt.step(h.parameters(), step_index);
    return value;
}

template <typename T>
struct PretrainResult {
    std::vector<PretrainStepRecord> records;
    int steps_done = 0;
    double last_epoch_mean_loss = 0;
};

// epochs x steps loop; one architecture (uniform from the train split) and one
// image batch per step; per-epoch checkpoints when out_dir is given. Epoch
// checkpoints carry the optimizer moments so a resumed run continues the
// exact trajectory.
template <typename T>
PretrainResult<T> pretrain(HyperInitializer<T>& h, const Collection& collection,
                           const std::vector<int>& train_ids, const std::vector<TensorPtr<float>>& images,
                           const PretrainConfig& cfg, const std::string& out_dir = "", int start_step = 0,
                           const std::unordered_map<std::string, std::vector<T>>* resume_velocity = nullptr) {
    cfg.validate();
    if (images.empty()) throw ValidationError("pretrain: dataset is empty");
    if (train_ids.empty()) throw ValidationError("pretrain: architecture train split is empty");
    const int steps_per_epoch = std::max(1, static_cast<int>(images.size()) / cfg.batch_size);
    const int total_steps = cfg.epochs * steps_per_epoch;
    if (start_step >= total_steps)
        throw StateError("pretrain: resume step " + std::to_string(start_step) + " is past the schedule of " +
                         std::to_string(total_steps) + " steps");
    SgdOptimizer<T> opt(CosineSchedule(cfg.base_lr, total_steps), static_cast<T>(cfg.momentum));
    if (resume_velocity) opt.velocity() = *resume_velocity;

    PretrainResult<T> result;
    int consecutive_nan = 0;
    for (int step = start_step; step < total_steps; ++step) {
        const int epoch = step / steps_per_epoch;
        Rng rng(derive_seed(cfg.seed, "pretrain-step", step));
        const auto t0 = std::chrono::steady_clock::now();

        const int arch_id = train_ids[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(train_ids.size())))];
        auto arch = collection.sample(arch_id);
        std::vector<int> picks(cfg.batch_size);
        for (auto& p : picks) p = static_cast<int>(rng.uniform_int(static_cast<int64_t>(images.size())));
        auto batch = make_rotation_batch<T>(images, picks, cfg, rng);

        const double loss = pretrain_step(h, arch, batch, opt, step, static_cast<T>(cfg.clip_norm));
        const auto wall =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
        if (std::isnan(loss)) {
            ++consecutive_nan;
            std::fprintf(stderr, "warning: non-finite pretext loss at step %d (arch %d); step skipped\n", step,
                         arch_id);
            if (consecutive_nan >= 3) throw NumericError("3 consecutive non-finite pretext losses; aborting");
            continue;
        }
        consecutive_nan = 0;
        result.records.push_back({step, epoch, arch_id, loss, opt.schedule().lr(step),
                                  static_cast<long>(wall.count())});
        ++result.steps_done;

        if (!out_dir.empty() && (step + 1) % steps_per_epoch == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint-epoch-%03d.bin", epoch);
            std::vector<NamedParam<T>> moments;
            for (const auto& p : h.parameters()) {
                auto it = opt.velocity().find(p.name);
                if (it == opt.velocity().end()) continue;
                auto t = make_tensor<T>(p.value->shape);
                t->data = it->second;
                moments.push_back({"opt." + p.name, t});
            }
            h.save((std::filesystem::path(out_dir) / name).string(),
                   {{"seed", cfg.seed},
                    {"step", step + 1},
                    {"epoch", epoch},
                    {"modality", cfg.modality},
                    {"input_side", cfg.side},
                    {"design_space_hash", design_space_hash(collection.space)}},
                   &moments);
        }
    }

    // mean loss over the final epoch
    double sum = 0;
    int count = 0;
    for (const auto& r : result.records)
        if (r.epoch == cfg.epochs - 1) {
            sum += r.loss;
            ++count;
        }
    if (count == 0) throw StateError("pretrain: final epoch recorded no steps");
    result.last_epoch_mean_loss = sum / count;
    return result;
}

// 4-way rotation accuracy of hypernet-predicted weights, measured without any
// fine-tuning. Batch statistics drive the normalization layers since
// predicted nets carry no running stats.
template <typename T>
double rotation_accuracy(const HyperInitializer<T>& h, const Collection& collection,
                         const std::vector<int>& arch_ids, const std::vector<TensorPtr<float>>& images,
                         const PretrainConfig& cfg, int batches, uint64_t seed) {
    int correct = 0, total = 0;
    for (int b = 0; b < batches; ++b) {
        Rng rng(derive_seed(seed, "rot-eval", b));
        const int arch_id = arch_ids[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(arch_ids.size())))];
        auto arch = collection.sample(arch_id);
        auto params = h.predict(arch);
        std::vector<int> picks(cfg.batch_size);
        for (auto& p : picks) p = static_cast<int>(rng.uniform_int(static_cast<int64_t>(images.size())));
        auto batch = make_rotation_batch<T>(images, picks, cfg, rng);
        ExecOptions<T> opts;
        opts.training = true;  // batch statistics
        auto logits = execute(arch, params, batch.x, opts);
        for (int i = 0; i < logits->shape[0]; ++i) {
            int best = 0;
            for (int c = 1; c < logits->shape[1]; ++c)
                if (logits->at2(i, c) > logits->at2(i, best)) best = c;
            correct += best == batch.labels[i];
            ++total;
        }
    }
    return static_cast<double>(correct) / total;
}

}  // namespace hyperinit
