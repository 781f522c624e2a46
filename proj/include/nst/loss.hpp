#pragma once

#include <cmath>
#include <vector>

#include "nst/error.hpp"
#include "nst/tensor.hpp"

namespace nst {

// Log argument floor; keeps confidently-wrong predictions from producing
// -inf loss.
constexpr double kProbFloor = 1e-12;

// Row-wise softmax with max-subtraction for stability. logits: [N,K].
inline Tensor softmax(const Tensor& logits) {
    if (logits.ndim() != 2) throw ShapeError("softmax expects [N,K] logits");
    const std::size_t n = logits.shape[0], k = logits.shape[1];
    Tensor probs(logits.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        double* out = probs.data.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
    }
    return probs;
}

namespace detail {

inline void check_rows_sum_to_one(const Tensor& t, const char* what) {
    const std::size_t n = t.shape[0], k = t.shape[1];
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += t.data[i * k + j];
        if (std::abs(sum - 1.0) > 1e-6)
            throw DistributionError(std::string(what) + " row " + std::to_string(i) +
                                    " sums to " + std::to_string(sum) + ", not 1");
    }
}

}  // namespace detail

// Mean over rows of -sum_k target_k * log(max(probs_k, floor)).
// Targets may be soft distributions or one-hot rows.
inline double cross_entropy(const Tensor& probs, const Tensor& target) {
    if (probs.shape != target.shape || probs.ndim() != 2)
        throw ShapeError("cross_entropy expects matching [N,K] probs and targets");
    detail::check_rows_sum_to_one(probs, "probs");
    detail::check_rows_sum_to_one(target, "target");
    const std::size_t n = probs.shape[0], k = probs.shape[1];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double t = target.data[i * k + j];
            if (t == 0.0) continue;
            total -= t * std::log(std::max(probs.data[i * k + j], kProbFloor));
        }
    return total / static_cast<double>(n);
}

struct LossGrad {
    double loss = 0.0;
    Tensor d_logits;
    std::vector<double> row_ce;  // unweighted per-row CE, for logging
};

// Weighted softmax cross entropy for training:
//   loss = sum_i w_i * CE(softmax(logits_i), target_i)
//   d_logits_i = w_i * (softmax(logits_i) - target_i)
// With w_i = 1/N this is the plain batch mean; the student trainer uses the
// weights to realize its two loss modes.
inline LossGrad softmax_cross_entropy(const Tensor& logits, const Tensor& targets,
                                      const std::vector<double>& row_weights) {
    if (logits.shape != targets.shape || logits.ndim() != 2)
        throw ShapeError("softmax_cross_entropy expects matching [N,K] logits and targets");
    const std::size_t n = logits.shape[0], k = logits.shape[1];
    if (row_weights.size() != n) throw ShapeError("row_weights length != batch size");
    LossGrad out;
    Tensor probs = softmax(logits);
    out.d_logits = Tensor(logits.shape);
    out.row_ce.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = row_weights[i];
        double ce = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double t = targets.data[i * k + j];
            const double p = probs.data[i * k + j];
            if (t != 0.0) ce -= t * std::log(std::max(p, kProbFloor));
            out.d_logits.data[i * k + j] = w * (p - t);
        }
        out.row_ce[i] = ce;
        out.loss += w * ce;
    }
    return out;
}

inline std::vector<double> uniform_row_weights(std::size_t n) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace nst
