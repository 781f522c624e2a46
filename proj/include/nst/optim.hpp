#pragma once

#include <cmath>

#include "nst/error.hpp"
#include "nst/nn.hpp"

namespace nst {

struct MomentumState {
    std::vector<LayerParams> velocity;

    static MomentumState zeros_like(const Model& m) {
        MomentumState s;
        s.velocity.reserve(m.params.size());
        for (const auto& lp : m.params) {
            LayerParams z;
            for (const auto& t : lp.t) z.t.emplace_back(t.shape);
            s.velocity.push_back(std::move(z));
        }
        return s;
    }
};

// Nesterov momentum SGD:
//   v <- mu * v + g
//   theta <- theta - lr * (g + mu * v)
// mu = 0 reduces to plain SGD. The whole step aborts (no partial update)
// when any gradient entry is non-finite.
inline void sgd_step(Model& model, const Grads& grads, double lr, MomentumState& state,
                     double momentum = 0.9, bool nesterov = true) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (grads.layers.size() != model.params.size())
        throw ShapeError("gradient/model layer count mismatch");

    for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (grads.layers[i].t.size() != model.params[i].t.size())
            throw ShapeError("gradient tensor count mismatch", static_cast<int>(i));
        for (std::size_t j = 0; j < model.params[i].t.size(); ++j) {
            if (!grads.layers[i].t[j].same_shape(model.params[i].t[j]))
                throw ShapeError("gradient shape mismatch", static_cast<int>(i));
            if (!grads.layers[i].t[j].all_finite())
                throw NumericError("non-finite gradient, step aborted", static_cast<int>(i));
        }
    }

    for (std::size_t i = 0; i < model.params.size(); ++i)
        for (std::size_t j = 0; j < model.params[i].t.size(); ++j) {
            auto& theta = model.params[i].t[j].data;
            auto& vel = state.velocity[i].t[j].data;
            const auto& g = grads.layers[i].t[j].data;
            for (std::size_t k = 0; k < theta.size(); ++k) {
                vel[k] = momentum * vel[k] + g[k];
                theta[k] -= lr * (nesterov ? g[k] + momentum * vel[k] : vel[k]);
            }
        }
    ++model.train_step;
}

}  // namespace nst
