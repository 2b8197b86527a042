#pragma once

#include <functional>
#include <numeric>

#include "artseg/checkpoint.hpp"
#include "artseg/metrics.hpp"
#include "artseg/model.hpp"
#include "artseg/optimizer.hpp"
#include "artseg/raster.hpp"

namespace artseg {

// Training diverged or was fed an unusable batch.
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error("training error: " + msg) {}
};

struct TrainSample {
    std::string id;
    FloatImage image;  // intensities in [0,1]
    IndexMap label;
};

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;  // simple mean over the epoch's batch losses
    double lr = 0.0;
};

inline std::string history_csv(std::span<const EpochRecord> history) {
    std::ostringstream os;
    os << "epoch,loss,lr\n" << std::setprecision(17);
    for (const auto& r : history) os << r.epoch << ',' << r.mean_loss << ',' << r.lr << '\n';
    return os.str();
}

// Argmax over the class axis per pixel, lowest class index on ties.
template <typename T>
std::vector<IndexMap> argmax_classes(const Tensor<T>& logits) {
    detail::require_rank4(logits.shape(), "argmax input");
    const int B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    const int HW = H * W;
    std::vector<IndexMap> out;
    out.reserve(static_cast<std::size_t>(B));
    auto lv = logits.values();
    for (int b = 0; b < B; ++b) {
        IndexMap m(H, W);
        const std::size_t base = static_cast<std::size_t>(b) * C * HW;
        for (int i = 0; i < HW; ++i) {
            int best = 0;
            T bestv = lv[base + i];
            for (int c = 1; c < C; ++c) {
                const T v = lv[base + static_cast<std::size_t>(c) * HW + i];
                if (v > bestv) {
                    bestv = v;
                    best = c;
                }
            }
            m.values[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
        }
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trainer: owns the optimizer state and the epoch loop. Every source of
// randomness (shuffle order, flip coins) is drawn from one generator seeded
// by TrainConfig::seed, so runs with equal config are bitwise reproducible.
// ---------------------------------------------------------------------------

template <typename T>
class Trainer {
public:
    Trainer(ARTSegModel<T>& model, std::vector<TrainSample> train_set, TrainConfig cfg)
        : model_(model), samples_(std::move(train_set)), cfg_(cfg), rng_(cfg.seed) {
        cfg_.validate();
        if (samples_.empty()) throw ConfigError("training set is empty");
        if (model_.config().in_channels != 1)
            throw ConfigError("the data pipeline feeds single-channel images");
        height_ = samples_[0].image.height;
        width_ = samples_[0].image.width;
        for (const auto& s : samples_) {
            if (s.image.height != height_ || s.image.width != width_)
                throw ConfigError("sample '" + s.id + "' has mismatched dimensions");
            if (s.label.height != height_ || s.label.width != width_)
                throw ConfigError("sample '" + s.id + "' label does not match its image");
        }
        params_ = model_.parameters();
        adam_.init_like(params_);
    }

    const std::vector<EpochRecord>& history() const { return history_; }
    AdamState<T>& adam_state() { return adam_; }
    const std::vector<TrainSample>& samples() const { return samples_; }

    EpochRecord run_epoch(int epoch) {
        const double lr = poly_lr(epoch, cfg_);
        std::vector<std::size_t> order(samples_.size());
        std::iota(order.begin(), order.end(), 0);
        rng_.shuffle(order.begin(), order.end());

        const int HW = height_ * width_;
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const int B = static_cast<int>(
                std::min<std::size_t>(cfg_.batch_size, order.size() - start));
            Tensor<T> images(Shape{B, 1, height_, width_});
            std::vector<std::uint8_t> labels(static_cast<std::size_t>(B) * HW);
            auto iv = images.values();
            for (int b = 0; b < B; ++b) {
                const TrainSample& s = samples_[order[start + b]];
                FloatImage img = s.image;
                IndexMap lab = s.label;
                if (rng_.uniform() < 0.5) hflip(img, lab);
                for (int i = 0; i < HW; ++i)
                    iv[static_cast<std::size_t>(b) * HW + i] = static_cast<T>(img.values[i]);
                std::copy(lab.values.begin(), lab.values.end(),
                          labels.begin() + static_cast<std::size_t>(b) * HW);
            }

            Tape<T> tape;
            Tensor<T> loss;
            {
                auto scope = tape.activate();
                model_.watch_parameters(tape);
                Tensor<T> logits = model_.forward(images, Mode::train);
                loss = softmax_cross_entropy(logits, labels);
            }
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batches) + " (first sample '" +
                                    samples_[order[start]].id + "')");
            tape.backward(loss);
            adam_step(params_, adam_, lr, cfg_);
            loss_sum += loss_value;
            ++batches;
        }

        EpochRecord rec{epoch, loss_sum / batches, lr};
        history_.push_back(rec);
        return rec;
    }

    // Runs the configured number of epochs; per_epoch (when given) fires
    // after each one, checkpoint files land in checkpoint_dir at the
    // configured interval plus once at the end.
    std::vector<EpochRecord> train(
        const std::string& checkpoint_dir = "",
        const std::function<void(const EpochRecord&)>& per_epoch = nullptr) {
        for (int e = 0; e < cfg_.total_epochs; ++e) {
            const EpochRecord rec = run_epoch(e);
            if (per_epoch) per_epoch(rec);
            if (!checkpoint_dir.empty() && cfg_.checkpoint_interval > 0 &&
                (e + 1) % cfg_.checkpoint_interval == 0 && e + 1 < cfg_.total_epochs) {
                save_checkpoint(checkpoint_dir + "/checkpoint_epoch" + std::to_string(e + 1) +
                                ".ckpt");
            }
        }
        if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir + "/model_final.ckpt");
        return history_;
    }

    void save_checkpoint(const std::string& path) {
        std::vector<CheckpointEntry> entries = model_state_entries(model_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            entries.push_back(
                CheckpointEntry::from_tensor("adam.m." + params_[i].first, adam_.m[i]));
            entries.push_back(
                CheckpointEntry::from_tensor("adam.v." + params_[i].first, adam_.v[i]));
        }
        entries.push_back(CheckpointEntry::from_i64("adam.step", adam_.step));
        write_checkpoint(path, entries);
    }

    void load_checkpoint(const std::string& path) {
        auto entries = read_checkpoint(path);
        apply_model_entries(model_, entries);
        std::size_t found = 0;
        for (const auto& e : entries) {
            if (e.name == "adam.step") {
                adam_.step = e.as_i64();
                ++found;
                continue;
            }
            for (std::size_t i = 0; i < params_.size(); ++i) {
                if (e.name == "adam.m." + params_[i].first) {
                    e.copy_into(adam_.m[i]);
                    ++found;
                } else if (e.name == "adam.v." + params_[i].first) {
                    e.copy_into(adam_.v[i]);
                    ++found;
                }
            }
        }
        if (found != 2 * params_.size() + 1)
            throw CheckpointError(CheckpointError::Kind::bad_entry,
                                  "'" + path + "' is missing optimizer state");
    }

private:
    ARTSegModel<T>& model_;
    std::vector<TrainSample> samples_;
    TrainConfig cfg_;
    Rng rng_;
    int height_ = 0, width_ = 0;
    std::vector<std::pair<std::string, Tensor<T>*>> params_;
    AdamState<T> adam_;
    std::vector<EpochRecord> history_;
};

// Model-only checkpoint helpers (evaluation and inference do not need the
// optimizer state; extra adam.* entries are ignored on load).
template <typename T>
std::vector<CheckpointEntry> model_state_entries(ARTSegModel<T>& model) {
    std::vector<CheckpointEntry> entries;
    model.visit_state([&entries](const std::string& name, Tensor<T>& t, ParamKind) {
        entries.push_back(CheckpointEntry::from_tensor(name, t));
    });
    return entries;
}

template <typename T>
void apply_model_entries(ARTSegModel<T>& model, const std::vector<CheckpointEntry>& entries) {
    std::size_t applied = 0;
    model.visit_state([&entries, &applied](const std::string& name, Tensor<T>& t, ParamKind) {
        for (const auto& e : entries) {
            if (e.name == name) {
                e.copy_into(t);
                ++applied;
                return;
            }
        }
        throw CheckpointError(CheckpointError::Kind::bad_entry,
                              "checkpoint is missing entry '" + name + "'");
    });
    (void)applied;
}

template <typename T>
void save_model_checkpoint(ARTSegModel<T>& model, const std::string& path) {
    auto entries = model_state_entries(model);
    write_checkpoint(path, entries);
}

template <typename T>
void load_model_checkpoint(ARTSegModel<T>& model, const std::string& path) {
    apply_model_entries(model, read_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Evaluation: eval-mode forward, per-pixel argmax, confusion accumulation.
// Deterministic and side-effect free on the model.
// ---------------------------------------------------------------------------

template <typename T>
MetricsReport evaluate(ARTSegModel<T>& model, std::span<const TrainSample> split,
                       std::span<const std::string> class_names) {
    if (split.empty()) throw ConfigError("evaluation split is empty");
    ConfusionMatrix cm(model.config().num_classes);
    for (const auto& s : split) {
        const int H = s.image.height, W = s.image.width;
        Tensor<T> img(Shape{1, 1, H, W});
        auto iv = img.values();
        for (std::size_t i = 0; i < s.image.values.size(); ++i)
            iv[i] = static_cast<T>(s.image.values[i]);
        Tensor<T> logits = model.forward(img, Mode::eval);
        auto preds = argmax_classes(logits);
        cm.accumulate(preds[0], s.label);
    }
    return per_class_report(cm, class_names);
}

}  // namespace artseg
