#pragma once

#include <filesystem>
#include <fstream>

#include "hyperinit/image.hpp"
#include "hyperinit/rng.hpp"

namespace hyperinit {

// Seeded synthetic corpora. The generator family has a canonical "up":
// a luminance ramp biased toward the top plus a bright blob in the upper
// half. Without such cues every 90-degree rotation of the corpus would be
// equally likely and the rotation pretext label would be unidentifiable.
// Texture class structure (for downstream tasks) rides on the grating
// frequency, which survives rotations and flips.

struct TextureParams {
    double frequency;    // cycles per pixel
    double orientation;  // radians
};

namespace detail {

inline void add_ramp(TensorPtr<float>& img, Rng& rng) {
    const int h = img->shape[1], w = img->shape[2];
    const double phi = M_PI / 2 + rng.normal(0.0, 0.35);  // ~up
    const double amp = rng.uniform(0.25, 0.45);
    const double base = rng.uniform(0.25, 0.45);
    for (int c = 0; c < 3; ++c) {
        const double tint = 1.0 + 0.12 * (c - 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                // y axis points down; "up" means decreasing y
                const double u = (std::cos(phi) * x - std::sin(phi) * y) / std::max(h, w);
                img->data[(static_cast<size_t>(c) * h + y) * w + x] +=
                    static_cast<float>(tint * (base + amp * u));
            }
    }
}

inline void add_grating(TensorPtr<float>& img, const TextureParams& p, double amp, Rng& rng) {
    const int h = img->shape[1], w = img->shape[2];
    const double phase = rng.uniform(0, 2 * M_PI);
    const double kx = 2 * M_PI * p.frequency * std::cos(p.orientation);
    const double ky = 2 * M_PI * p.frequency * std::sin(p.orientation);
    for (int c = 0; c < 3; ++c) {
        const double tint = 1.0 + 0.1 * (1 - c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img->data[(static_cast<size_t>(c) * h + y) * w + x] +=
                    static_cast<float>(tint * amp * std::sin(kx * x + ky * y + phase));
    }
}

inline void add_blob(TensorPtr<float>& img, Rng& rng) {
    const int h = img->shape[1], w = img->shape[2];
    const double cx = w * 0.5 + rng.normal(0.0, w / 8.0);
    const double cy = h * 0.30 + rng.normal(0.0, h / 10.0);  // upper half
    const double sigma = rng.uniform(h / 8.0, h / 5.0);
    const double amp = rng.uniform(0.2, 0.35);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                img->data[(static_cast<size_t>(c) * h + y) * w + x] +=
                    static_cast<float>(amp * std::exp(-r2 / (2 * sigma * sigma)));
            }
}

inline void add_noise_and_clamp(TensorPtr<float>& img, Rng& rng) {
    for (auto& v : img->data) {
        v += static_cast<float>(rng.normal(0.0, 0.02));
        v = std::min(1.0f, std::max(0.0f, v));
    }
}

// A few dark meandering strokes; optionally rasterizes the support mask.
inline void add_strokes(TensorPtr<float>& img, Rng& rng, std::vector<int>* mask) {
    const int h = img->shape[1], w = img->shape[2];
    const int strokes = 2 + static_cast<int>(rng.uniform_int(2));
    if (mask) mask->assign(static_cast<size_t>(h) * w, 0);
    for (int s = 0; s < strokes; ++s) {
        double x = rng.uniform(0.1, 0.9) * w;
        double y = rng.uniform(0.05, 0.25) * h;  // strokes grow downward
        double dir = M_PI / 2 + rng.normal(0.0, 0.4);
        const double thick = rng.uniform(0.9, 1.9);
        const double depth = rng.uniform(0.25, 0.4);
        const int steps = static_cast<int>(1.1 * h);
        for (int t = 0; t < steps; ++t) {
            dir += rng.normal(0.0, 0.18);
            x += std::cos(dir);
            y += std::sin(dir);
            if (x < 1 || y < 1 || x >= w - 1 || y >= h - 1) break;
            const int x0 = std::max(0, static_cast<int>(x - thick - 1));
            const int x1 = std::min(w - 1, static_cast<int>(x + thick + 1));
            const int y0 = std::max(0, static_cast<int>(y - thick - 1));
            const int y1 = std::min(h - 1, static_cast<int>(y + thick + 1));
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx) {
                    const double d2 = (xx - x) * (xx - x) + (yy - y) * (yy - y);
                    const double soft = std::exp(-d2 / (thick * thick));
                    if (soft < 0.05) continue;
                    for (int c = 0; c < 3; ++c)
                        img->data[(static_cast<size_t>(c) * h + yy) * w + xx] -=
                            static_cast<float>(depth * soft);
                    if (mask && d2 <= thick * thick) (*mask)[static_cast<size_t>(yy) * w + xx] = 1;
                }
        }
    }
}

}  // namespace detail

constexpr double kFreqLow = 0.08;   // cycles/pixel, grade-0 band start
constexpr double kFreqHigh = 0.40;  // grade-(G-1) band end

inline TensorPtr<float> make_texture(Rng& rng, int side, const TextureParams& p, bool with_strokes = false,
                                     std::vector<int>* mask = nullptr) {
    auto img = make_tensor<float>({3, side, side});
    detail::add_ramp(img, rng);
    detail::add_grating(img, p, rng.uniform(0.15, 0.30), rng);
    detail::add_blob(img, rng);
    if (with_strokes) detail::add_strokes(img, rng, mask);
    detail::add_noise_and_clamp(img, rng);
    return img;
}

// Unlabeled pretraining corpus: full frequency range, mixed stroke content.
inline std::vector<TensorPtr<float>> make_pretrain_corpus(uint64_t seed, int count, int side) {
    std::vector<TensorPtr<float>> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, "corpus", i));
        TextureParams p{rng.uniform(kFreqLow, kFreqHigh), rng.uniform(0.0, M_PI)};
        out.push_back(make_texture(rng, side, p, rng.uniform() < 0.3));
    }
    return out;
}

struct LabeledImage {
    TensorPtr<float> image;
    int label = 0;
};

struct MaskedImage {
    TensorPtr<float> image;
    std::vector<int> mask;  // H*W, {0,1}
};

// Grade = frequency band; ordinal by construction, invariant to rotation
// and flips.
inline std::vector<LabeledImage> make_classification_dataset(uint64_t seed, int count, int side, int grades) {
    if (grades < 2) throw ValidationError("classification dataset needs >= 2 grades");
    std::vector<LabeledImage> out;
    out.reserve(count);
    const double band = (kFreqHigh - kFreqLow) / grades;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, "cls", i));
        const int grade = static_cast<int>(rng.uniform_int(grades));
        TextureParams p{kFreqLow + (grade + rng.uniform(0.2, 0.8)) * band, rng.uniform(0.0, M_PI)};
        out.push_back({make_texture(rng, side, p, false), grade});
    }
    return out;
}

inline std::vector<MaskedImage> make_segmentation_dataset(uint64_t seed, int count, int side) {
    std::vector<MaskedImage> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, "seg", i));
        TextureParams p{rng.uniform(kFreqLow, kFreqHigh), rng.uniform(0.0, M_PI)};
        MaskedImage m;
        m.image = make_texture(rng, side, p, true, &m.mask);
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// On-disk datasets

// PNG files under a root; an optional manifest lists relative paths (one per
// line). Unreadable entries are skipped with a warning on stderr.
inline std::vector<TensorPtr<float>> load_image_directory(const std::string& root,
                                                          const std::string& manifest = "") {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IoError("dataset root '" + root + "' is not a directory");
    std::vector<std::string> paths;
    if (!manifest.empty()) {
        std::ifstream mf(manifest);
        if (!mf) throw IoError("cannot open dataset manifest '" + manifest + "'");
        std::string line;
        while (std::getline(mf, line))
            if (!line.empty()) paths.push_back((fs::path(root) / line).string());
    } else {
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path().string());
        std::sort(paths.begin(), paths.end());
    }
    std::vector<TensorPtr<float>> images;
    for (const auto& p : paths) {
        try {
            images.push_back(read_png(p));
        } catch (const IoError& e) {
            std::fprintf(stderr, "warning: skipping unreadable image: %s\n", e.what());
        }
    }
    return images;
}

// label file: CSV lines "relative/path.png,label"
inline std::vector<LabeledImage> load_labeled_directory(const std::string& root, const std::string& label_csv) {
    namespace fs = std::filesystem;
    std::ifstream lf(label_csv);
    if (!lf) throw IoError("cannot open label file '" + label_csv + "'");
    std::vector<LabeledImage> out;
    std::string line;
    while (std::getline(lf, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw ValidationError("label line without comma: " + line);
        const std::string rel = line.substr(0, comma);
        const int label = std::stoi(line.substr(comma + 1));
        try {
            out.push_back({read_png((fs::path(root) / rel).string()), label});
        } catch (const IoError& e) {
            std::fprintf(stderr, "warning: skipping unreadable image: %s\n", e.what());
        }
    }
    return out;
}

}  // namespace hyperinit
