#pragma once

#include "artseg/tensor.hpp"

namespace artseg {

struct TrainConfig {
    double base_lr = 5e-4;
    double weight_decay = 1e-4;
    double adam_eps = 1e-8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int total_epochs = 100;
    double poly_power = 0.9;
    int batch_size = 4;
    std::uint64_t seed = 0;
    int checkpoint_interval = 0;  // epochs between checkpoints; 0 = final only
    // Coupled L2 (decay folded into the gradient) is the default reading of
    // "Adam with weight decay"; the decoupled variant is available but off.
    bool decoupled_weight_decay = false;

    void validate() const {
        if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
            throw ConfigError("adam betas must lie in (0, 1)");
        if (base_lr < 0.0) throw ConfigError("base_lr must be >= 0");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
        if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    }
};

// Polynomial decay: base_lr * (1 - epoch/total)^p. Strictly decreasing on
// [0, total] for p > 0, base_lr at epoch 0, exactly 0 at the last boundary.
inline double poly_lr(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch > cfg.total_epochs)
        throw UsageError("poly_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(cfg.total_epochs) + "]");
    const double frac = 1.0 - static_cast<double>(epoch) / cfg.total_epochs;
    return cfg.base_lr * std::pow(frac, cfg.poly_power);
}

// Adam moment buffers, shaped like their parameters, plus the shared step
// counter. Owned by the trainer, serialized into checkpoints.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t step = 0;

    void init_like(const std::vector<std::pair<std::string, Tensor<T>*>>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, p] : params) {
            m.emplace_back(p->shape());
            v.emplace_back(p->shape());
        }
        step = 0;
    }
};

// One Adam update over all parameters. Gradients must be populated; they are
// consumed (cleared) by the step. g' = g + wd*theta unless decay is
// decoupled, in which case theta shrinks by lr*wd*theta separately.
template <typename T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
               AdamState<T>& state, double lr, const TrainConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw UsageError("adam_step: state does not match the parameter list");
    state.step += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i].second;
        if (!p.has_grad())
            throw UsageError("adam_step: parameter " + params[i].first + " has no gradient");
        auto pv = p.values();
        auto g = p.grad();
        auto mv = state.m[i].values();
        auto vv = state.v[i].values();
        for (std::size_t j = 0; j < pv.size(); ++j) {
            double gj = static_cast<double>(g[j]);
            if (!cfg.decoupled_weight_decay) gj += cfg.weight_decay * static_cast<double>(pv[j]);
            const double mj = b1 * static_cast<double>(mv[j]) + (1.0 - b1) * gj;
            const double vj = b2 * static_cast<double>(vv[j]) + (1.0 - b2) * gj * gj;
            mv[j] = static_cast<T>(mj);
            vv[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            double upd = lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            if (cfg.decoupled_weight_decay)
                upd += lr * cfg.weight_decay * static_cast<double>(pv[j]);
            pv[j] = static_cast<T>(static_cast<double>(pv[j]) - upd);
        }
        p.clear_grad();
    }
}

}  // namespace artseg
