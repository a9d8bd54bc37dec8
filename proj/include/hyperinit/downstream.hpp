#pragma once

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "hyperinit/dataset.hpp"
#include "hyperinit/hypernet.hpp"
#include "hyperinit/metrics.hpp"
#include "hyperinit/ssl.hpp"

namespace hyperinit {

// Downstream harness: initialize an architecture from a trained
// hyper-initializer (or at random), fine-tune on a task, and produce the
// comparison artifacts: per-run records, sample-efficiency tables,
// convergence statistics, CAM grids.

enum class TaskKind { Classification, Segmentation };
enum class TaskMetric { Kappa, Auc, Dice };

inline const char* to_string(TaskMetric m) {
    switch (m) {
        case TaskMetric::Kappa: return "kappa";
        case TaskMetric::Auc: return "auc";
        case TaskMetric::Dice: return "dice";
    }
    return "?";
}

struct DatasetSpec {
    bool synthetic = true;
    uint64_t seed = 0;
    int train_count = 200;
    int eval_count = 100;
    int side = 64;
    // on-disk mode
    std::string root;
    std::string labels_csv;  // classification
};

struct TaskSpec {
    TaskKind kind = TaskKind::Classification;
    int num_classes = 5;
    TaskMetric metric = TaskMetric::Kappa;
    int epochs = 10;
    double subsample_fraction = 1.0;
    DatasetSpec dataset;
    std::string modality = "synthetic";

    void validate() const {
        if ((metric == TaskMetric::Dice) != (kind == TaskKind::Segmentation))
            throw ValidationError("task: dice pairs with segmentation; kappa/auc with classification");
        if (subsample_fraction <= 0.0 || subsample_fraction > 1.0)
            throw ValidationError("task: subsample fraction must lie in (0,1]");
        if (epochs < 0) throw ValidationError("task: negative epoch count");
        if (num_classes < 2) throw ValidationError("task: need at least 2 classes");
        if (metric == TaskMetric::Auc && num_classes != 2)
            throw ValidationError("task: auc requires a binary task");
    }
};

enum class InitMode { Full, EncoderOnly, Random };

inline const char* to_string(InitMode m) {
    switch (m) {
        case InitMode::Full: return "full";
        case InitMode::EncoderOnly: return "encoder-only";
        case InitMode::Random: return "random";
    }
    return "?";
}

inline InitMode init_mode_from_string(const std::string& s) {
    if (s == "full") return InitMode::Full;
    if (s == "encoder-only") return InitMode::EncoderOnly;
    if (s == "random") return InitMode::Random;
    throw ValidationError("unknown init policy '" + s + "'");
}

struct InitPolicy {
    InitMode mode = InitMode::Full;
    // the task head is always re-drawn randomly, whatever the mode
};

struct FinetuneConfig {
    int batch_size = 16;
    double base_lr = 0.01;
    double momentum = 0.9;
    double clip_norm = 5.0;  // 0 disables
    double crop_lo = 0.8;
    double crop_hi = 1.2;
    uint64_t seed = 0;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0;  // NaN on the epoch-0 (raw init) row
    double metric = 0;
    long wall_ms = 0;
};

struct RunRecord {
    std::string arch;
    std::string init;
    uint64_t seed = 0;
    std::vector<EpochRow> rows;

    double best_metric() const {
        double best = -2;
        for (const auto& r : rows) best = std::max(best, r.metric);
        return best;
    }
    double final_metric() const { return rows.empty() ? -2 : rows.back().metric; }
    // wall time excluded: the checksum covers the semantic trace
    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&](uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
        for (const auto& r : rows) {
            mix(static_cast<uint64_t>(r.epoch));
            uint64_t bits;
            double tl = r.train_loss, m = r.metric;
            std::memcpy(&bits, &tl, 8);
            mix(bits);
            std::memcpy(&bits, &m, 8);
            mix(bits);
        }
        return h;
    }
};

inline void write_run_csv(const std::string& path, const RunRecord& rec) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write run record '" + path + "'");
    os << "# arch=" << rec.arch << " init=" << rec.init << " seed=" << rec.seed << "\n";
    os << "epoch,train_loss,metric,wall_ms\n";
    char buf[128];
    for (const auto& r : rec.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%ld\n", r.epoch, r.train_loss, r.metric, r.wall_ms);
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// Initialization policies

namespace detail {

// the last weight-bearing node on the path into the output head
inline int head_param_node(const Architecture& a) {
    const auto heads = a.output_head_ids();
    if (heads.size() != 1) throw ValidationError("head lookup needs exactly one output-head");
    int cur = heads[0];
    for (int hops = 0; hops < static_cast<int>(a.nodes.size()); ++hops) {
        const auto& preds = a.preds[a.pos.at(cur)];
        if (preds.size() != 1) break;
        cur = preds[0];
        const auto cat = a.node(cur).category;
        if (cat == OpCategory::Linear || cat == OpCategory::Conv2d || cat == OpCategory::DepthwiseConv2d)
            return cur;
        if (cat == OpCategory::AddJunction || cat == OpCategory::ConcatJunction || cat == OpCategory::Input) break;
    }
    throw ValidationError("architecture '" + a.name + "' has no weight-bearing head node");
}

template <typename T>
void fill_random_node_params(const OpNode& n, std::map<std::string, TensorPtr<T>>& roles,
                             const std::map<std::string, std::vector<int>>& shapes, Rng& rng) {
    for (const auto& [role, shape] : shapes) {
        auto t = make_tensor<T>(shape);
        if (role == "weight") {
            // conv gets He scale, linear the rectifier-free variant
            double fan_in = shape.size() == 4 ? static_cast<double>(shape[1]) * shape[2] * shape[3]
                                              : static_cast<double>(shape[1]);
            const double gain = shape.size() == 4 ? 2.0 : 1.0;
            const double std = std::sqrt(gain / fan_in);
            for (auto& v : t->data) v = static_cast<T>(rng.normal(0.0, std));
        } else if (role == "gamma") {
            t->data.assign(t->data.size(), T(1));
        }  // bias & beta stay zero
        roles[role] = t;
    }
}

}  // namespace detail

// Rewrites the head's output width to the task's class count (classification
// heads are linear; segmentation heads are 1x1 convs emitting mask logits).
inline Architecture retarget_head(const Architecture& a, int num_classes) {
    const int head_id = detail::head_param_node(a);
    std::vector<OpNode> nodes = a.nodes;
    for (auto& n : nodes)
        if (n.id == head_id) {
            if (n.category == OpCategory::Linear)
                n.attrs->out = num_classes;
            else if (n.category == OpCategory::Conv2d)
                n.attrs->out = num_classes;
            else
                throw ValidationError("cannot retarget a depthwise head");
        }
    return finalize_architecture(a.name, std::move(nodes), a.edges);
}

// full: body from predict, head random. encoder-only: encoder subgraph from
// predict, decoder (and head) random. random: everything random at fan-in
// scale. The head is re-drawn in every mode.
template <typename T>
ParamSet<T> initialize(const HyperInitializer<T>* h, const Architecture& a, const InitPolicy& policy,
                       Rng& rng, const nlohmann::json* checkpoint_meta = nullptr,
                       const std::string& task_modality = "") {
    const auto plan = param_shape_plan(a);
    if (checkpoint_meta && !task_modality.empty() && checkpoint_meta->contains("modality") &&
        (*checkpoint_meta)["modality"].get<std::string>() != task_modality)
        std::fprintf(stderr, "warning: checkpoint modality '%s' differs from task modality '%s'\n",
                     (*checkpoint_meta)["modality"].get<std::string>().c_str(), task_modality.c_str());

    ParamSet<T> out;
    if (policy.mode == InitMode::Random) {
        for (const auto& n : a.nodes)
            if (plan.count(n.id)) detail::fill_random_node_params(n, out.values[n.id], plan.at(n.id), rng);
        return out;
    }
    if (!h) throw InitializationError("hyper-initializer required for policy " + std::string(to_string(policy.mode)));
    out = h->predict(a);
    std::set<int> redraw = {detail::head_param_node(a)};
    if (policy.mode == InitMode::EncoderOnly) {
        const auto enc = encoder_node_ids(a);
        for (const auto& n : a.nodes)
            if (plan.count(n.id) && !enc.count(n.id)) redraw.insert(n.id);
    }
    for (int id : redraw) {
        out.values[id].clear();
        detail::fill_random_node_params(a.node(id), out.values[id], plan.at(id), rng);
    }
    return out;
}

// ParamSet container: entries "node<id>.<role>" in (id, role) order.
template <typename T>
void save_paramset(const std::string& path, const ParamSet<T>& ps, nlohmann::json metadata) {
    std::vector<NamedParam<T>> entries;
    for (const auto& [id, roles] : ps.values)
        for (const auto& [role, t] : roles) entries.push_back({"node" + std::to_string(id) + "." + role, t});
    save_checkpoint(path, entries, std::move(metadata));
}

template <typename T>
ParamSet<T> load_paramset(const std::string& path, nlohmann::json* metadata_out = nullptr) {
    auto ck = load_checkpoint<T>(path);
    ParamSet<T> ps;
    for (const auto& e : ck.entries) {
        if (e.name.rfind("node", 0) != 0) throw IoError("paramset entry '" + e.name + "' is not node-scoped");
        const auto dot = e.name.find('.');
        if (dot == std::string::npos) throw IoError("paramset entry '" + e.name + "' lacks a role");
        ps.values[std::stoi(e.name.substr(4, dot - 4))][e.name.substr(dot + 1)] = e.value;
    }
    if (metadata_out) *metadata_out = ck.metadata;
    return ps;
}

// Shapes must match the architecture's demands exactly.
template <typename T>
void validate_paramset(const Architecture& a, const ParamSet<T>& ps) {
    for (const auto& [id, roles] : param_shape_plan(a))
        for (const auto& [role, shape] : roles) {
            auto t = ps.get(id, role);
            if (!t)
                throw InitializationError("missing parameter '" + role + "' for node " + std::to_string(id));
            if (t->shape != shape)
                throw DimensionError("parameter '" + role + "' for node " + std::to_string(id) + " has shape " +
                                     format_shape(t->shape) + ", expected " + format_shape(shape));
        }
}

// ---------------------------------------------------------------------------
// Task data

template <typename T>
struct TaskSample {
    TensorPtr<float> image;
    int label = 0;           // classification
    std::vector<int> mask;   // segmentation, side*side
};

template <typename T>
struct TaskData {
    std::vector<TaskSample<T>> train;
    std::vector<TaskSample<T>> eval;
    int side = 0;
};

template <typename T>
TaskData<T> load_task_data(const TaskSpec& task) {
    TaskData<T> data;
    data.side = task.dataset.side;
    const auto& ds = task.dataset;
    if (ds.synthetic) {
        if (task.kind == TaskKind::Classification) {
            for (auto& s : make_classification_dataset(derive_seed(ds.seed, "train"), ds.train_count, ds.side,
                                                       task.num_classes))
                data.train.push_back({s.image, s.label, {}});
            for (auto& s : make_classification_dataset(derive_seed(ds.seed, "eval"), ds.eval_count, ds.side,
                                                       task.num_classes))
                data.eval.push_back({s.image, s.label, {}});
        } else {
            for (auto& s : make_segmentation_dataset(derive_seed(ds.seed, "train"), ds.train_count, ds.side))
                data.train.push_back({s.image, 0, s.mask});
            for (auto& s : make_segmentation_dataset(derive_seed(ds.seed, "eval"), ds.eval_count, ds.side))
                data.eval.push_back({s.image, 0, s.mask});
        }
        return data;
    }
    if (task.kind != TaskKind::Classification)
        throw ValidationError("on-disk segmentation datasets are not wired; use the synthetic generator");
    auto all = load_labeled_directory(ds.root, ds.labels_csv);
    if (all.empty()) throw ValidationError("dataset under '" + ds.root + "' is empty");
    // deterministic split: last eval_count entries evaluate
    const int ecount = std::min<int>(ds.eval_count, static_cast<int>(all.size()) / 5 + 1);
    for (size_t i = 0; i < all.size(); ++i) {
        auto img = bilinear_resize(all[i].image, ds.side, ds.side);
        if (static_cast<int>(all.size() - i) <= ecount)
            data.eval.push_back({img, all[i].label, {}});
        else
            data.train.push_back({img, all[i].label, {}});
    }
    return data;
}

namespace detail {

inline std::vector<int> nearest_resize_mask(const std::vector<int>& m, int h, int w, int oh, int ow) {
    std::vector<int> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / oh));
            const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / ow));
            out[static_cast<size_t>(y) * ow + x] = m[static_cast<size_t>(sy) * w + sx];
        }
    return out;
}

inline std::vector<int> crop_mask(const std::vector<int>& m, int h, int w, int top, int left, int ch, int cw) {
    std::vector<int> out(static_cast<size_t>(ch) * cw, 0);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
            const int sy = top + y, sx = left + x;
            if (sy >= 0 && sy < h && sx >= 0 && sx < w) out[static_cast<size_t>(y) * cw + x] = m[static_cast<size_t>(sy) * w + sx];
        }
    return out;
}

inline std::vector<int> rot90_mask(const std::vector<int>& m, int s, int k) {
    std::vector<int> out(m.size());
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            int sy = y, sx = x;
            for (int i = 0; i < k; ++i) {
                const int ny = sx, nx = s - 1 - sy;
                sy = ny, sx = nx;
            }
            out[static_cast<size_t>(y) * s + x] = m[static_cast<size_t>(sy) * s + sx];
        }
    return out;
}

inline std::vector<int> flip_mask(const std::vector<int>& m, int s, bool horizontal) {
    std::vector<int> out(m.size());
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            out[static_cast<size_t>(y) * s + x] =
                horizontal ? m[static_cast<size_t>(y) * s + (s - 1 - x)] : m[static_cast<size_t>(s - 1 - y) * s + x];
    return out;
}

// resized-crop + random 90-degree rotation + random flip; the mask follows
// the image through the same window
template <typename T>
TaskSample<T> augment_sample(const TaskSample<T>& s, int side, const FinetuneConfig& cfg, bool segmentation,
                             Rng& rng) {
    const int h = s.image->shape[1], w = s.image->shape[2];
    const double scale = rng.uniform(cfg.crop_lo, cfg.crop_hi);
    const double ry = rng.uniform(), rx = rng.uniform();
    auto img = augment_with(s.image, side, scale, ry, rx);
    TaskSample<T> out;
    out.label = s.label;
    if (segmentation) {
        int ch = std::max(1, static_cast<int>(std::lround(std::sqrt(scale) * h)));
        int cw = std::max(1, static_cast<int>(std::lround(std::sqrt(scale) * w)));
        std::vector<int> m = s.mask;
        int mh = h, mw = w;
        if (ch > h || cw > w) {
            // reflect padding would invent vessel pixels; clamp the window instead
            ch = std::min(ch, h);
            cw = std::min(cw, w);
        }
        const int top = static_cast<int>(ry * (mh - ch)), left = static_cast<int>(rx * (mw - cw));
        m = crop_mask(m, mh, mw, top, left, ch, cw);
        out.mask = nearest_resize_mask(m, ch, cw, side, side);
        // the image must see the same clamped window
        img = bilinear_resize(crop(s.image, top, left, ch, cw), side, side);
    }
    const int k = static_cast<int>(rng.uniform_int(4));
    img = rot90(img, k);
    if (segmentation) out.mask = rot90_mask(out.mask, side, k);
    if (rng.uniform() < 0.5) {
        img = flip_horizontal(img);
        if (segmentation) out.mask = flip_mask(out.mask, side, true);
    }
    if (rng.uniform() < 0.5) {
        img = flip_vertical(img);
        if (segmentation) out.mask = flip_mask(out.mask, side, false);
    }
    out.image = img;
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fine-tuning

template <typename T>
struct EvalResult {
    double metric = 0;
};

template <typename T>
double evaluate_task(const Architecture& a, const ParamSet<T>& params, BatchNormState<T>& bn,
                     const std::vector<TaskSample<T>>& eval_set, const TaskSpec& task, int batch_size) {
    const int side = eval_set.front().image->shape[1];
    std::vector<int> pred_grades, truth_grades;
    std::vector<double> scores;
    std::vector<int> bin_truth;
    double dice_sum = 0;
    int dice_count = 0;
    for (size_t start = 0; start < eval_set.size(); start += batch_size) {
        const int n = static_cast<int>(std::min<size_t>(batch_size, eval_set.size() - start));
        auto x = make_tensor<T>({n, 3, side, side});
        for (int i = 0; i < n; ++i) {
            const auto& img = eval_set[start + i].image;
            for (size_t j = 0; j < img->data.size(); ++j)
                x->data[static_cast<size_t>(i) * img->data.size() + j] = static_cast<T>(img->data[j]);
        }
        ExecOptions<T> opts;
        opts.training = false;
        opts.bn_state = &bn;
        auto logits = execute(a, params, x, opts);
        if (task.kind == TaskKind::Classification) {
            auto probs = softmax_rows(logits);
            for (int i = 0; i < n; ++i) {
                int best = 0;
                for (int c = 1; c < task.num_classes; ++c)
                    if (logits->at2(i, c) > logits->at2(i, best)) best = c;
                pred_grades.push_back(best);
                truth_grades.push_back(eval_set[start + i].label);
                if (task.metric == TaskMetric::Auc) {
                    scores.push_back(static_cast<double>(probs[static_cast<size_t>(i) * task.num_classes + 1]));
                    bin_truth.push_back(eval_set[start + i].label);
                }
            }
        } else {
            for (int i = 0; i < n; ++i) {
                std::vector<int> mask(static_cast<size_t>(side) * side);
                for (int y = 0; y < side; ++y)
                    for (int xx = 0; xx < side; ++xx) {
                        int best = 0;
                        for (int c = 1; c < task.num_classes; ++c)
                            if (logits->at4(i, c, y, xx) > logits->at4(i, best, y, xx)) best = c;
                        mask[static_cast<size_t>(y) * side + xx] = best > 0;
                    }
                dice_sum += dice(mask, side, side, eval_set[start + i].mask, side, side);
                ++dice_count;
            }
        }
    }
    switch (task.metric) {
        case TaskMetric::Kappa: return quadratic_weighted_kappa(pred_grades, truth_grades, task.num_classes);
        case TaskMetric::Auc: return auc(scores, bin_truth);
        case TaskMetric::Dice: return dice_sum / std::max(1, dice_count);
    }
    return 0;
}

// Trains all parameters under a cosine schedule, evaluating the task metric
// each epoch (epoch 0 scores the raw initialization). Per-run batchnorm
// running statistics start fresh.
template <typename T>
RunRecord finetune(const Architecture& a, ParamSet<T> init, const TaskSpec& task, const FinetuneConfig& cfg,
                   const std::function<void(int, const ParamSet<T>&, BatchNormState<T>&)>& epoch_hook = {}) {
    task.validate();
    auto data = load_task_data<T>(task);
    if (data.train.empty()) throw ValidationError("finetune: empty training set");
    if (data.eval.empty()) throw ValidationError("finetune: empty evaluation set");

    // seed-stable subsample of exactly ceil(fraction*N) items
    const int keep = static_cast<int>(std::ceil(task.subsample_fraction * data.train.size()));
    if (keep < 1) throw ValidationError("finetune: dataset empty after subsampling");
    {
        std::vector<int> idx(data.train.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        Rng sub(derive_seed(cfg.seed, "subsample"));
        sub.shuffle(idx.begin(), idx.end());
        idx.resize(keep);
        std::sort(idx.begin(), idx.end());
        std::vector<TaskSample<T>> kept;
        kept.reserve(keep);
        for (int i : idx) kept.push_back(data.train[i]);
        data.train = std::move(kept);
    }
    if (task.metric == TaskMetric::Auc) {
        std::set<int> classes;
        for (const auto& s : data.train) classes.insert(s.label);
        if (classes.size() < 2) throw ValidationError("finetune: single-class subsample; auc is undefined");
    }

    // named trainable leaves
    std::vector<NamedParam<T>> params;
    for (auto& [id, roles] : init.values)
        for (auto& [role, t] : roles) {
            t->requires_grad = true;
            t->on_tape = false;
            params.push_back({"node" + std::to_string(id) + "." + role, t});
        }

    const int steps_per_epoch = std::max(1, static_cast<int>(data.train.size()) / cfg.batch_size);
    const int total_steps = std::max(1, task.epochs * steps_per_epoch);
    SgdOptimizer<T> opt(CosineSchedule(cfg.base_lr, total_steps), static_cast<T>(cfg.momentum));
    BatchNormState<T> bn;

    RunRecord rec;
    rec.arch = a.name;
    rec.seed = cfg.seed;
    auto t_start = std::chrono::steady_clock::now();
    auto record_epoch = [&](int epoch, double train_loss) {
        const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - t_start);
        const double m = evaluate_task(a, init, bn, data.eval, task, cfg.batch_size);
        const double lo = task.metric == TaskMetric::Kappa ? -1.0 : 0.0;
        if (m < lo - 1e-9 || m > 1.0 + 1e-9)
            throw NumericError("metric " + std::to_string(m) + " escaped its valid range");
        rec.rows.push_back({epoch, train_loss, m, static_cast<long>(wall.count())});
        if (epoch_hook) epoch_hook(epoch, init, bn);
    };
    record_epoch(0, std::numeric_limits<double>::quiet_NaN());

    const bool seg = task.kind == TaskKind::Segmentation;
    int step = 0;
    for (int epoch = 1; epoch <= task.epochs; ++epoch) {
        double loss_sum = 0;
        int loss_count = 0;
        Rng order_rng(derive_seed(cfg.seed, "order", epoch));
        std::vector<int> order(data.train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        order_rng.shuffle(order.begin(), order.end());
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            Rng aug_rng(derive_seed(cfg.seed, "augment", step));
            const int bsz = cfg.batch_size;
            auto x = make_tensor<T>({bsz, 3, data.side, data.side});
            std::vector<int> labels;
            for (int i = 0; i < bsz; ++i) {
                const auto& sample = data.train[order[(static_cast<size_t>(s) * bsz + i) % order.size()]];
                auto augmented = detail::augment_sample(sample, data.side, cfg, seg, aug_rng);
                for (size_t j = 0; j < augmented.image->data.size(); ++j)
                    x->data[static_cast<size_t>(i) * augmented.image->data.size() + j] =
                        static_cast<T>(augmented.image->data[j]);
                if (seg)
                    labels.insert(labels.end(), augmented.mask.begin(), augmented.mask.end());
                else
                    labels.push_back(augmented.label);
            }
            Tape<T> tape;
            ExecOptions<T> opts;
            opts.training = true;
            opts.tape = &tape;
            opts.bn_state = &bn;
            auto logits = execute(a, init, x, opts);
            TensorPtr<T> loss;
            if (seg)
                loss = softmax_cross_entropy(pixelwise_logits(logits, &tape), labels, &tape);
            else
                loss = softmax_cross_entropy(logits, labels, &tape);
            loss_sum += loss->data[0];
            ++loss_count;
            tape.backward(loss);
            clip_grad_norm(params, static_cast<T>(cfg.clip_norm));
            opt.step(params, step);
        }
        record_epoch(epoch, loss_sum / std::max(1, loss_count));
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Class activation maps

// Weighted sum of the final conv features by the head weights for one class,
// rectified, min-max normalized, upsampled to the input size.
template <typename T>
TensorPtr<float> cam(const Architecture& a, const ParamSet<T>& params, const TensorPtr<T>& x,
                     int class_index, BatchNormState<T>* bn_state = nullptr) {
    const auto heads = a.output_head_ids();
    if (heads.size() != 1) throw ValidationError("cam: need exactly one output-head");
    // tail must be ... -> global-avg-pool -> linear -> output-head
    const auto& head_preds = a.preds[a.pos.at(heads[0])];
    const int linear_id = head_preds[0];
    if (a.node(linear_id).category != OpCategory::Linear)
        throw ValidationError("cam: unsupported architecture; the head must be a linear layer");
    const int gap_id = a.preds[a.pos.at(linear_id)][0];
    if (a.node(gap_id).category != OpCategory::GlobalAvgPool)
        throw ValidationError("cam: unsupported architecture; the head must follow global-avg-pool");
    const int feature_id = a.preds[a.pos.at(gap_id)][0];
    if (class_index < 0 || class_index >= a.node(linear_id).attrs->out)
        throw ValidationError("cam: class index outside the head width");

    std::map<int, TensorPtr<T>> trace;
    ExecOptions<T> opts;
    opts.training = false;
    opts.bn_state = bn_state;
    opts.trace = &trace;
    execute(a, params, x, opts);
    auto feats = trace.at(feature_id);  // [N,C,h,w]
    const int c = feats->shape[1], fh = feats->shape[2], fw = feats->shape[3];
    auto w = params.get(linear_id, "weight");  // [classes, C]

    auto map = make_tensor<float>({1, fh, fw});
    for (int y = 0; y < fh; ++y)
        for (int xx = 0; xx < fw; ++xx) {
            double s = 0;
            for (int ch = 0; ch < c; ++ch)
                s += static_cast<double>(w->at2(class_index, ch)) * static_cast<double>(feats->at4(0, ch, y, xx));
            map->data[static_cast<size_t>(y) * fw + xx] = static_cast<float>(std::max(0.0, s));
        }
    float mx = 0;
    for (float v : map->data) mx = std::max(mx, v);
    if (mx > 0)
        for (auto& v : map->data) v /= mx;  // all-zero maps stay zero
    auto up = bilinear_resize(map, x->shape[2], x->shape[3]);
    auto out = make_tensor<float>({x->shape[2], x->shape[3]});
    out->data = up->data;
    return out;
}

// ---------------------------------------------------------------------------
// Initializer comparison

struct CompareOptions {
    std::vector<uint64_t> seeds;
    std::vector<double> fractions = {1.0};
    InitMode hyper_mode = InitMode::Full;  // encoder-only for U-Nets
    std::vector<int> cam_epochs;           // emit CAM heatmaps at these epochs
    int threads = 2;
    double threshold_ratio = 0.9;  // epochs-to-threshold target
};

struct CompareCell {
    double fraction = 1.0;
    std::string init;
    double mean_best = 0;
    double sd_best = 0;
    double median_epochs_to_threshold = 0;
};

struct CompareReport {
    std::vector<RunRecord> runs;  // tagged with init + fraction via RunRecord::init and run order
    std::vector<double> fractions;
    std::vector<CompareCell> cells;
    // cam grids: epoch -> heatmap, per init mode
    std::map<std::string, std::map<int, TensorPtr<float>>> cam_maps;
    std::map<std::string, std::map<double, std::vector<double>>> best_by_init_fraction;

    double mean_best(const std::string& init, double fraction) const {
        const auto& v = best_by_init_fraction.at(init).at(fraction);
        double s = 0;
        for (double x : v) s += x;
        return s / v.size();
    }
};

// first epoch whose metric reaches the threshold; epochs+1 when never
inline int epochs_to_threshold(const RunRecord& rec, double threshold) {
    for (const auto& r : rec.rows)
        if (r.epoch >= 1 && r.metric >= threshold) return r.epoch;
    return rec.rows.empty() ? 1 : rec.rows.back().epoch + 1;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Runs finetune for {hyper, random} x seeds x fractions. Data order and
// augmentation depend on (seed, fraction) only, so paired runs differ only
// through their initialization.
template <typename T>
CompareReport compare_initializers(const Architecture& arch, const HyperInitializer<T>& h, TaskSpec task,
                                   const FinetuneConfig& base_cfg, const CompareOptions& opts) {
    if (opts.seeds.empty()) throw ValidationError("compare: need at least 1 seed");
    task.validate();

    struct Job {
        uint64_t seed;
        double fraction;
        InitMode mode;
        std::string tag;
        int index;
    };
    std::vector<Job> jobs;
    int idx = 0;
    for (double f : opts.fractions)
        for (uint64_t s : opts.seeds)
            for (InitMode mode : {opts.hyper_mode, InitMode::Random})
                jobs.push_back({s, f, mode, mode == InitMode::Random ? "random" : "hyper", idx++});

    std::vector<RunRecord> results(jobs.size());
    std::map<std::string, std::map<int, TensorPtr<float>>> cam_maps;
    std::mutex cam_mutex;

    // a fixed probe image for CAM evolution
    TensorPtr<T> cam_probe;
    if (!opts.cam_epochs.empty() && task.kind == TaskKind::Classification) {
        auto probe_set = make_classification_dataset(derive_seed(task.dataset.seed, "cam-probe"), 1,
                                                     task.dataset.side, task.num_classes);
        cam_probe = make_tensor<T>({1, 3, task.dataset.side, task.dataset.side});
        for (size_t j = 0; j < probe_set[0].image->data.size(); ++j)
            cam_probe->data[j] = static_cast<T>(probe_set[0].image->data[j]);
    }

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            const Job& job = jobs[j];
            TaskSpec t = task;
            t.subsample_fraction = job.fraction;
            FinetuneConfig cfg = base_cfg;
            // data order shared across init modes: no init-mode component
            cfg.seed = derive_seed(base_cfg.seed, "run", job.seed * 1000003ULL +
                                                             static_cast<uint64_t>(job.fraction * 1000));
            Rng init_rng(derive_seed(cfg.seed, job.tag));
            auto params = initialize<T>(&h, arch, {job.mode}, init_rng);

            std::function<void(int, const ParamSet<T>&, BatchNormState<T>&)> hook;
            const bool wants_cam = cam_probe && job.seed == opts.seeds.front() && job.fraction == opts.fractions.front();
            if (wants_cam)
                hook = [&, tag = job.tag](int epoch, const ParamSet<T>& p, BatchNormState<T>& bn) {
                    if (std::find(opts.cam_epochs.begin(), opts.cam_epochs.end(), epoch) == opts.cam_epochs.end())
                        return;
                    auto heat = cam(arch, p, cam_probe, 0, &bn);
                    std::lock_guard<std::mutex> lock(cam_mutex);
                    cam_maps[tag][epoch] = heat;
                };
            auto rec = finetune(arch, std::move(params), t, cfg, hook);
            rec.init = job.tag;
            rec.seed = job.seed;  // report the user-facing seed, not the derived stream
            results[job.index] = std::move(rec);
        }
    };
    const int nthreads = std::max(1, std::min<int>(opts.threads, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    CompareReport report;
    report.fractions = opts.fractions;
    report.runs = std::move(results);
    report.cam_maps = std::move(cam_maps);

    for (double f : opts.fractions) {
        for (const char* tag : {"hyper", "random"}) {
            std::vector<double> best;
            for (size_t j = 0; j < jobs.size(); ++j)
                if (jobs[j].fraction == f && jobs[j].tag == tag) best.push_back(report.runs[j].best_metric());
            report.best_by_init_fraction[tag][f] = best;
            CompareCell cell;
            cell.fraction = f;
            cell.init = tag;
            double mean = 0;
            for (double b : best) mean += b;
            mean /= best.size();
            double var = 0;
            for (double b : best) var += (b - mean) * (b - mean);
            cell.mean_best = mean;
            cell.sd_best = std::sqrt(var / best.size());
            // threshold derives from the paired random run of the same seed
            std::vector<double> e2t;
            for (uint64_t s : opts.seeds) {
                const RunRecord* self = nullptr;
                const RunRecord* random_ref = nullptr;
                for (size_t j = 0; j < jobs.size(); ++j) {
                    if (jobs[j].fraction != f || jobs[j].seed != s) continue;
                    if (jobs[j].tag == tag) self = &report.runs[j];
                    if (jobs[j].tag == std::string("random")) random_ref = &report.runs[j];
                }
                e2t.push_back(epochs_to_threshold(*self, opts.threshold_ratio * random_ref->final_metric()));
            }
            cell.median_epochs_to_threshold = median(e2t);
            report.cells.push_back(cell);
        }
    }
    return report;
}

inline void write_compare_report(const std::string& dir, const CompareReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "runs");
    int i = 0;
    for (const auto& run : report.runs) {
        char name[128];
        std::snprintf(name, sizeof(name), "run-%03d-%s-s%llu.csv", i++, run.init.c_str(),
                      static_cast<unsigned long long>(run.seed));
        write_run_csv((fs::path(dir) / "runs" / name).string(), run);
    }
    std::ofstream agg(fs::path(dir) / "aggregate.csv", std::ios::trunc);
    agg << "fraction,init,mean_best,sd_best,median_epochs_to_threshold\n";
    char buf[160];
    for (const auto& c : report.cells) {
        std::snprintf(buf, sizeof(buf), "%.4g,%s,%.9g,%.9g,%.9g\n", c.fraction, c.init.c_str(), c.mean_best,
                      c.sd_best, c.median_epochs_to_threshold);
        agg << buf;
    }
    nlohmann::json summary;
    for (const auto& c : report.cells)
        summary["cells"].push_back({{"fraction", c.fraction},
                                    {"init", c.init},
                                    {"mean_best", c.mean_best},
                                    {"sd_best", c.sd_best},
                                    {"median_epochs_to_threshold", c.median_epochs_to_threshold}});
    std::ofstream(fs::path(dir) / "summary.json") << summary.dump(2) << "\n";

    if (!report.cam_maps.empty()) {
        fs::create_directories(fs::path(dir) / "cam");
        // one grid per init: panels left to right over epochs, heat as a
        // black-red-yellow ramp
        for (const auto& [tag, maps] : report.cam_maps) {
            if (maps.empty()) continue;
            const int s = maps.begin()->second->shape[0];
            const int cols = static_cast<int>(maps.size());
            auto grid = make_tensor<float>({3, s, cols * (s + 2)});
            int col = 0;
            for (const auto& [epoch, heat] : maps) {
                for (int y = 0; y < s; ++y)
                    for (int x = 0; x < s; ++x) {
                        const float v = heat->data[static_cast<size_t>(y) * s + x];
                        const int gx = col * (s + 2) + x;
                        grid->data[(0 * static_cast<size_t>(s) + y) * cols * (s + 2) + gx] = std::min(1.0f, 2 * v);
                        grid->data[(1 * static_cast<size_t>(s) + y) * cols * (s + 2) + gx] =
                            std::max(0.0f, 2 * v - 1);
                    }
                ++col;
            }
            write_png((fs::path(dir) / "cam" / ("cam-" + tag + ".png")).string(), grid);
        }
    }
}

}  // namespace hyperinit
