#pragma once

#include <filesystem>
#include <fstream>

#include "artseg/image_io.hpp"
#include "artseg/raster.hpp"
#include "artseg/trainer.hpp"

namespace artseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Class palette: ordered names plus one RGB triple per class.
// ---------------------------------------------------------------------------

struct Palette {
    std::vector<std::string> names;
    std::vector<std::array<std::uint8_t, 3>> colors;

    int size() const { return static_cast<int>(names.size()); }

    // The nine thermal classes in report order; background is class 0 and is
    // scored like any other class.
    static Palette thermal9() {
        Palette p;
        p.names = {"background", "car",       "pedestrian", "bike",       "curve",
                   "car_stop",   "guardrail", "color_cone", "bump"};
        p.colors = {{{0, 0, 0}},       {{64, 0, 128}},   {{64, 64, 0}},
                    {{0, 128, 192}},   {{0, 0, 192}},    {{128, 128, 0}},
                    {{64, 64, 128}},   {{192, 128, 128}}, {{192, 64, 0}}};
        return p;
    }

    // Generic palette for synthetic class counts; hue-stepped colors, all
    // distinct by construction.
    static Palette generic(int num_classes) {
        if (num_classes < 1) throw ConfigError("palette needs at least one class");
        Palette p;
        for (int k = 0; k < num_classes; ++k) {
            p.names.push_back("class_" + std::to_string(k));
            if (k == 0) {
                p.colors.push_back({0, 0, 0});
                continue;
            }
            const double h = std::fmod(0.61803398875 * k, 1.0) * 6.0;
            const int i = static_cast<int>(h);
            const double f = h - i;
            const auto q = static_cast<std::uint8_t>(255 * (1.0 - f));
            const auto t = static_cast<std::uint8_t>(255 * f);
            switch (i % 6) {
                case 0: p.colors.push_back({255, t, 40}); break;
                case 1: p.colors.push_back({q, 255, 40}); break;
                case 2: p.colors.push_back({40, 255, t}); break;
                case 3: p.colors.push_back({40, q, 255}); break;
                case 4: p.colors.push_back({t, 40, 255}); break;
                default: p.colors.push_back({255, 40, q}); break;
            }
        }
        return p;
    }

    static Palette for_classes(int num_classes) {
        return num_classes == 9 ? thermal9() : generic(num_classes);
    }
};

// Per-pixel palette lookup written as an 8-bit RGB PNG.
inline void render_prediction(const IndexMap& map, const Palette& palette,
                              const std::string& path) {
    std::vector<std::uint8_t> rgb(map.values.size() * 3);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const std::uint8_t v = map.values[i];
        if (v >= palette.size())
            throw DataError("render_prediction: class " + std::to_string(int(v)) +
                            " outside the " + std::to_string(palette.size()) + "-entry palette");
        const auto& c = palette.colors[v];
        rgb[3 * i] = c[0];
        rgb[3 * i + 1] = c[1];
        rgb[3 * i + 2] = c[2];
    }
    write_rgb8_png(path, map.height, map.width, rgb);
}

// ---------------------------------------------------------------------------
// Dataset directory handle.
//
// Layout: root/images/<id>.png (grayscale), root/labels/<id>.png (8-bit
// index), root/splits/{train,test_day,test_night}.txt (one id per line).
// ---------------------------------------------------------------------------

enum class Split { train, test_day, test_night };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test_day: return "test_day";
        default: return "test_night";
    }
}

class Dataset {
public:
    // Validates the whole tree: every listed id must have an image and a
    // label of matching size with in-range class values.
    static Dataset scan(const std::string& root, int num_classes) {
        Dataset ds;
        ds.root_ = root;
        ds.num_classes_ = num_classes;
        if (!fs::is_directory(root)) throw DataError("dataset root '" + root + "' does not exist");
        for (const char* sub : {"images", "labels", "splits"})
            if (!fs::is_directory(fs::path(root) / sub))
                throw DataError("dataset root '" + root + "' is missing the " + sub +
                                "/ directory");

        ds.train_ = read_split(root, "train");
        ds.test_day_ = read_split(root, "test_day");
        ds.test_night_ = read_split(root, "test_night");
        if (ds.train_.empty())
            throw ConfigError("dataset '" + root + "' has an empty train split");

        for (const auto* ids : {&ds.train_, &ds.test_day_, &ds.test_night_})
            for (const std::string& id : *ids) ds.validate_sample(id);
        return ds;
    }

    const std::string& root() const { return root_; }
    int num_classes() const { return num_classes_; }

    const std::vector<std::string>& ids(Split s) const {
        switch (s) {
            case Split::train: return train_;
            case Split::test_day: return test_day_;
            default: return test_night_;
        }
    }

    // The combined test set is day followed by night.
    std::vector<std::string> test_ids() const {
        std::vector<std::string> out = test_day_;
        out.insert(out.end(), test_night_.begin(), test_night_.end());
        return out;
    }

    std::string image_path(const std::string& id) const {
        return (fs::path(root_) / "images" / (id + ".png")).string();
    }
    std::string label_path(const std::string& id) const {
        return (fs::path(root_) / "labels" / (id + ".png")).string();
    }

    // Image: bilinear resize, intensities in [0,1]. Label: nearest-neighbour
    // resize, class indices untouched by interpolation.
    TrainSample load(const std::string& id, int target_h, int target_w) const {
        if (target_h % 32 != 0 || target_w % 32 != 0)
            throw ConfigError("resize target " + std::to_string(target_h) + "x" +
                              std::to_string(target_w) + " must be divisible by 32");
        TrainSample s;
        s.id = id;
        s.image = resize_bilinear(gray_to_float(read_gray_png(image_path(id))), target_h, target_w);
        s.label = resize_nearest(read_index_png(label_path(id)), target_h, target_w);
        return s;
    }

    std::vector<TrainSample> load_ids(std::span<const std::string> ids, int target_h,
                                      int target_w) const {
        std::vector<TrainSample> out;
        out.reserve(ids.size());
        for (const auto& id : ids) out.push_back(load(id, target_h, target_w));
        return out;
    }

    std::vector<TrainSample> load_split(Split s, int target_h, int target_w) const {
        return load_ids(ids(s), target_h, target_w);
    }

private:
    static std::vector<std::string> read_split(const std::string& root, const char* name) {
        const fs::path p = fs::path(root) / "splits" / (std::string(name) + ".txt");
        std::ifstream f(p);
        if (!f) throw DataError("missing split file '" + p.string() + "'");
        std::vector<std::string> ids;
        std::string line;
        while (std::getline(f, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (!line.empty()) ids.push_back(line);
        }
        return ids;
    }

    void validate_sample(const std::string& id) const {
        const std::string img = image_path(id);
        const std::string lab = label_path(id);
        if (!fs::exists(img)) throw DataError("sample '" + id + "': missing image " + img);
        if (!fs::exists(lab)) throw DataError("sample '" + id + "': missing label " + lab);
        const PngInfo info = read_png_header(img);
        const IndexMap label = read_index_png(lab);
        if (info.height != label.height || info.width != label.width)
            throw DataError("sample '" + id + "': image is " + std::to_string(info.width) + "x" +
                            std::to_string(info.height) + " but label is " +
                            std::to_string(label.width) + "x" + std::to_string(label.height));
        for (std::uint8_t v : label.values)
            if (v >= num_classes_)
                throw DataError("sample '" + id + "': label value " + std::to_string(int(v)) +
                                " out of range for " + std::to_string(num_classes_) + " classes");
    }

    std::string root_;
    int num_classes_ = 0;
    std::vector<std::string> train_, test_day_, test_night_;
};

// ---------------------------------------------------------------------------
// Synthetic scene generator: a background field plus one random axis-aligned
// rectangle or ellipse per non-background class, each class painted with a
// distinct intensity band plus seeded noise. Labels are the exact masks
// (later shapes overdraw earlier ones), so a model fitting these labels is
// fitting truth, not noise.
// ---------------------------------------------------------------------------

inline std::vector<std::string> synth_generate(const std::string& root, int n, int height,
                                               int width, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("synth_generate needs at least 2 classes");
    if (n < 1) throw ConfigError("synth_generate needs at least one sample");
    if (num_classes > 200) throw ConfigError("synth intensity bands need num_classes <= 200");
    fs::create_directories(fs::path(root) / "images");
    fs::create_directories(fs::path(root) / "labels");
    fs::create_directories(fs::path(root) / "splits");

    Rng rng(seed);
    std::vector<std::string> ids;
    const double band = 1.0 / num_classes;  // class k lives at (k + 0.5) / C
    constexpr double noise_sigma = 0.02;

    for (int i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth_%04d", i);
        const std::string id = buf;
        ids.push_back(id);

        IndexMap label(height, width, 0);
        for (int k = 1; k < num_classes; ++k) {
            // alternate rectangles and ellipses; fixed footprint, random
            // position. Equal per-class areas keep the per-image statistics
            // homogeneous, so the scenes probe segmentation, not batch-norm
            // robustness.
            const bool ellipse = (k % 2) == 0;
            const int ry = std::max(2, height / 5), rx = std::max(2, width / 5);
            const int cy = ry + static_cast<int>(rng.below(
                                    static_cast<std::uint64_t>(std::max(1, height - 2 * ry))));
            const int cx = rx + static_cast<int>(rng.below(
                                    static_cast<std::uint64_t>(std::max(1, width - 2 * rx))));
            for (int y = std::max(0, cy - ry); y <= std::min(height - 1, cy + ry); ++y)
                for (int x = std::max(0, cx - rx); x <= std::min(width - 1, cx + rx); ++x) {
                    if (ellipse) {
                        const double dy = static_cast<double>(y - cy) / ry;
                        const double dx = static_cast<double>(x - cx) / rx;
                        if (dy * dy + dx * dx > 1.0) continue;
                    }
                    label.at(y, x) = static_cast<std::uint8_t>(k);
                }
        }

        std::vector<std::uint8_t> img(label.values.size());
        for (std::size_t p = 0; p < label.values.size(); ++p) {
            const double center = (label.values[p] + 0.5) * band;
            const double v = std::clamp(center + noise_sigma * rng.normal(), 0.0, 1.0);
            img[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }

        write_gray8_png((fs::path(root) / "images" / (id + ".png")).string(), height, width, img);
        write_gray8_png((fs::path(root) / "labels" / (id + ".png")).string(), height, width,
                        label.values);
    }

    std::ofstream train(fs::path(root) / "splits" / "train.txt");
    for (const auto& id : ids) train << id << '\n';
    std::ofstream(fs::path(root) / "splits" / "test_day.txt");
    std::ofstream(fs::path(root) / "splits" / "test_night.txt");
    return ids;
}

}  // namespace artseg
