#pragma once

#include "artseg/ops.hpp"

namespace artseg {

// Central-difference gradient verification. Double precision only: single
// precision finite differences are too noisy to judge a backward rule.
//
// `fn` evaluates the scalar loss from the watched `inputs`; it is called once
// under a fresh tape for the analytic pass and repeatedly (untaped) for the
// numeric pass. When `sample_per_tensor` is positive, only that many
// seeded-random coordinates per tensor are probed.
//
// `resample_kinks` extends the "resample inputs near a ReLU kink" rule to
// composite graphs, where activations cannot be placed directly: each probe
// also compares its one-sided forward and backward differences, which agree
// to O(h) for smooth coordinates but differ by the slope change when a
// subgradient kink sits inside the probe window; such probes are redrawn.
// A wrong backward rule cannot hide behind this test: away from kinks the
// one-sided estimates agree with each other and the central estimate still
// exposes any mismatch against the tape gradient.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::int64_t coords_checked = 0;
    std::int64_t kinks_skipped = 0;
};

template <typename Fn>
GradCheckResult grad_check(Fn&& fn, std::vector<Tensor<double>*> inputs, double step,
                           int sample_per_tensor = 0, std::uint64_t seed = 0,
                           bool resample_kinks = false) {
    if (step <= 0.0) throw UsageError("grad_check: step must be positive");

    // Analytic pass. Stale gradients from earlier backward calls would be
    // read as part of the analytic answer, so drop them first.
    Tape<double> tape;
    Tensor<double> loss;
    {
        auto scope = tape.activate();
        for (Tensor<double>* in : inputs) {
            in->clear_grad();
            tape.watch(*in);
        }
        loss = fn();
    }
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("grad_check: fn must return a scalar tensor");
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (Tensor<double>* in : inputs) {
        if (in->has_grad())
            analytic.emplace_back(in->grad().begin(), in->grad().end());
        else
            analytic.emplace_back(in->numel(), 0.0);
        in->clear_grad();
    }

    // Numeric pass, with no tape active.
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    GradCheckResult res;
    const double f_base = resample_kinks ? fn().item() : 0.0;

    struct Probe {
        double central;
        double forward;
        double backward;
    };
    auto numeric_at = [&](Tensor<double>& x, std::int64_t i, double h) {
        auto vals = x.values();
        const double v = vals[static_cast<std::size_t>(i)];
        vals[static_cast<std::size_t>(i)] = v + h;
        const double f_plus = fn().item();
        vals[static_cast<std::size_t>(i)] = v - h;
        const double f_minus = fn().item();
        vals[static_cast<std::size_t>(i)] = v;
        return Probe{(f_plus - f_minus) / (2.0 * h), (f_plus - f_base) / h,
                     (f_base - f_minus) / h};
    };

    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor<double>& x = *inputs[t];
        const std::int64_t n = x.numel();
        const bool sampled = sample_per_tensor > 0 && n > sample_per_tensor;
        const std::int64_t want = sampled ? sample_per_tensor : n;

        std::int64_t checked = 0, cursor = 0;
        std::int64_t budget = want * 6;  // retry allowance for kink redraws
        while (checked < want) {
            std::int64_t i;
            if (sampled) {
                if (budget-- <= 0) break;
                i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
            } else {
                if (cursor >= n) break;
                i = cursor++;
            }
            const Probe p = numeric_at(x, i, step);
            if (resample_kinks) {
                const double spread = std::abs(p.forward - p.backward) /
                                      std::max({std::abs(p.forward), std::abs(p.backward), 1e-8});
                if (spread > 0.002) {
                    // subgradient kink inside the probe window; redraw
                    ++res.kinks_skipped;
                    continue;
                }
            }
            const double a = analytic[t][static_cast<std::size_t>(i)];
            const double rel = std::abs(a - p.central) /
                               std::max({std::abs(a), std::abs(p.central), 1e-8});
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.coords_checked;
            ++checked;
        }
    }
    return res;
}

}  // namespace artseg
