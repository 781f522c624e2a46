#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance
// suites. Central differences with step 1e-5; kept independent of the
// backward() implementation it checks.

#include <cstdint>
#include <functional>
#include <string>

#include "nst/loss.hpp"
#include "nst/nn.hpp"

namespace nst::testing {

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_location;
    std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// Scalar training loss as a pure function of (model params, batch), with the
// noise rng re-seeded identically on every evaluation so masks and gates are
// constant across the perturbed evaluations.
inline double loss_value(const Model& model, const Tensor& batch, const Tensor& target,
                         const NoiseConfig& noise, Mode mode, std::uint64_t noise_seed) {
    Rng rng(noise_seed);
    auto [logits, trace] = forward(model, batch, noise, mode, rng);
    return softmax_cross_entropy(logits, target, uniform_row_weights(batch.shape[0])).loss;
}

// Checks every parameter gradient and the input gradient of backward()
// against central finite differences.
inline FdReport check_gradients(Model model, Tensor batch, const Tensor& target,
                                const NoiseConfig& noise, Mode mode, std::uint64_t noise_seed,
                                double step = 1e-5) {
    Rng rng(noise_seed);
    auto [logits, trace] = forward(model, batch, noise, mode, rng);
    auto lg = softmax_cross_entropy(logits, target, uniform_row_weights(batch.shape[0]));
    Grads grads = backward(model, trace, lg.d_logits);

    FdReport report;
    auto record = [&](double analytic, double numeric, const std::string& where) {
        const double e = rel_err(analytic, numeric);
        ++report.checked;
        if (e > report.max_rel_err) {
            report.max_rel_err = e;
            report.worst_location = where;
        }
    };

    for (std::size_t li = 0; li < model.params.size(); ++li)
        for (std::size_t ti = 0; ti < model.params[li].t.size(); ++ti)
            for (std::size_t k = 0; k < model.params[li].t[ti].data.size(); ++k) {
                double& theta = model.params[li].t[ti].data[k];
                const double saved = theta;
                theta = saved + step;
                const double up = loss_value(model, batch, target, noise, mode, noise_seed);
                theta = saved - step;
                const double dn = loss_value(model, batch, target, noise, mode, noise_seed);
                theta = saved;
                record(grads.layers[li].t[ti].data[k], (up - dn) / (2.0 * step),
                       "layer " + std::to_string(li) + " tensor " + std::to_string(ti) +
                           " index " + std::to_string(k));
            }

    for (std::size_t k = 0; k < batch.data.size(); ++k) {
        const double saved = batch.data[k];
        batch.data[k] = saved + step;
        const double up = loss_value(model, batch, target, noise, mode, noise_seed);
        batch.data[k] = saved - step;
        const double dn = loss_value(model, batch, target, noise, mode, noise_seed);
        batch.data[k] = saved;
        record(grads.d_input.data[k], (up - dn) / (2.0 * step), "input index " + std::to_string(k));
    }
    return report;
}

inline Tensor random_batch(std::size_t n, const ImageShape& s, Rng& rng) {
    Tensor t({n, s.h, s.w, s.c});
    for (double& v : t.data) v = rng.uniform();
    return t;
}

inline Tensor random_distribution_rows(std::size_t n, std::size_t k, Rng& rng) {
    Tensor t({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            t.at2(i, j) = 0.05 + rng.uniform();
            sum += t.at2(i, j);
        }
        for (std::size_t j = 0; j < k; ++j) t.at2(i, j) /= sum;
    }
    return t;
}

}  // namespace nst::testing
