#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nst/data.hpp"
#include "nst/error.hpp"
#include "nst/loss.hpp"
#include "nst/nn.hpp"

namespace nst {

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

// Predicted classes ranked by (logit desc, index asc); returns the indices
// of the k best classes for one logits row.
inline std::size_t top1_class(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.shape[1];
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (logits.at2(row, j) > logits.at2(row, best)) best = j;
    return best;
}

inline Tensor model_logits(const Model& model, const DatasetStore& store,
                           const std::vector<std::size_t>& indices,
                           const NoiseConfig& noise = NoiseConfig::clean()) {
    Tensor batch = images_to_batch(store, indices);
    Rng rng(0);  // infer mode draws nothing
    auto [logits, trace] = forward(model, batch, noise, Mode::Infer, rng);
    return logits;
}

// Fraction of examples whose true class is among the k highest logits,
// breaking logit ties toward the lower class index.
inline double eval_topk(const Model& model, const DatasetStore& test, std::size_t k,
                        const NoiseConfig& noise = NoiseConfig::clean(),
                        std::size_t batch_size = 512) {
    if (!test.labeled()) throw ConfigError("eval_topk requires a labeled store");
    if (k == 0 || k > model.class_count)
        throw ConfigError("top-k with k=" + std::to_string(k) + " out of range for K=" +
                          std::to_string(model.class_count));
    std::size_t hits = 0;
    for (std::size_t begin = 0; begin < test.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, test.size());
        std::vector<std::size_t> indices(end - begin);
        std::iota(indices.begin(), indices.end(), begin);
        Tensor logits = model_logits(model, test, indices, noise);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const std::size_t truth = test.labels[indices[i]];
            // Rank of the true class: classes strictly better, plus equal
            // ones with a lower index.
            std::size_t rank = 0;
            const double v = logits.at2(i, truth);
            for (std::size_t j = 0; j < model.class_count; ++j) {
                if (j == truth) continue;
                if (logits.at2(i, j) > v || (logits.at2(i, j) == v && j < truth)) ++rank;
            }
            if (rank < k) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

enum class CorruptionKind {
    GaussianNoise,
    ShotNoise,
    DefocusBlur,
    MotionBlur,
    SnowLite,
    FogLite,
    Brightness,
    Contrast,
    Pixelate,
    JpegLite,
};

inline const char* to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::GaussianNoise: return "gaussian-noise";
        case CorruptionKind::ShotNoise: return "shot-noise";
        case CorruptionKind::DefocusBlur: return "defocus-blur";
        case CorruptionKind::MotionBlur: return "motion-blur";
        case CorruptionKind::SnowLite: return "snow-lite";
        case CorruptionKind::FogLite: return "fog-lite";
        case CorruptionKind::Brightness: return "brightness";
        case CorruptionKind::Contrast: return "contrast";
        case CorruptionKind::Pixelate: return "pixelate";
        case CorruptionKind::JpegLite: return "jpeg-lite";
    }
    return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
    for (CorruptionKind k :
         {CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise, CorruptionKind::DefocusBlur,
          CorruptionKind::MotionBlur, CorruptionKind::SnowLite, CorruptionKind::FogLite,
          CorruptionKind::Brightness, CorruptionKind::Contrast, CorruptionKind::Pixelate,
          CorruptionKind::JpegLite})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown corruption kind '" + s + "'");
}

inline std::vector<CorruptionKind> all_corruption_kinds() {
    return {CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise, CorruptionKind::DefocusBlur,
            CorruptionKind::MotionBlur,    CorruptionKind::SnowLite,  CorruptionKind::FogLite,
            CorruptionKind::Brightness,    CorruptionKind::Contrast,  CorruptionKind::Pixelate,
            CorruptionKind::JpegLite};
}

struct CorruptionSpec {
    CorruptionKind kind;
    int severity;  // 1..5 (0 allowed as the identity extension)
};

// Severity parameter tables. Index 0 is the identity extension; indices 1-5
// are the operating severities. These constants are echoed into every
// robustness report so the severity semantics stay auditable.
struct CorruptionTables {
    double gaussian_sigma[6] = {0.0, 0.04, 0.08, 0.14, 0.22, 0.32};
    double shot_scale[6] = {0.0, 120.0, 60.0, 30.0, 15.0, 8.0};  // photon count scale
    int defocus_radius[6] = {0, 1, 2, 3, 4, 5};
    int motion_length[6] = {1, 3, 5, 9, 13, 17};
    double snow_fraction[6] = {0.0, 0.03, 0.06, 0.10, 0.15, 0.21};
    double snow_alpha = 0.8;
    double fog_blend[6] = {0.0, 0.15, 0.27, 0.39, 0.51, 0.63};
    double fog_plateau = 0.85;
    double brightness_delta[6] = {0.0, 0.08, 0.15, 0.22, 0.29, 0.36};
    double contrast_scale[6] = {1.0, 0.75, 0.60, 0.45, 0.30, 0.18};
    int pixelate_block[6] = {1, 2, 3, 4, 7, 14};
    double jpeg_quant[6] = {0.0, 0.06, 0.12, 0.22, 0.38, 0.60};
};

inline const CorruptionTables& corruption_tables() {
    static const CorruptionTables t;
    return t;
}

namespace detail {

inline Tensor mean_filter(const Tensor& img, int radius_r, int radius_c) {
    const std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
    Tensor out(img.shape);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                int n = 0;
                for (int dr = -radius_r; dr <= radius_r; ++dr)
                    for (int dc = -radius_c; dc <= radius_c; ++dc) {
                        const long rr = static_cast<long>(r) + dr;
                        const long cc = static_cast<long>(col) + dc;
                        if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) ||
                            cc >= static_cast<long>(w))
                            continue;
                        acc += img.data[(static_cast<std::size_t>(rr) * w +
                                         static_cast<std::size_t>(cc)) * c + ch];
                        ++n;
                    }
                out.data[(r * w + col) * c + ch] = acc / n;
            }
    return out;
}

inline long poisson_draw(double lambda, Rng& rng) {
    if (lambda <= 0.0) return 0;
    // Knuth's algorithm; lambda stays small enough here for exp(-lambda)
    // to be representable.
    const double limit = std::exp(-lambda);
    long k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

// 1-D DCT-II / DCT-III pair used by the jpeg-lite corruption.
inline void dct2_inplace(std::vector<double>& v, std::vector<double>& tmp) {
    const std::size_t n = v.size();
    tmp.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            acc += v[i] * std::cos(M_PI / static_cast<double>(n) *
                                   (static_cast<double>(i) + 0.5) * static_cast<double>(k));
        tmp[k] = acc * std::sqrt(2.0 / static_cast<double>(n)) *
                 (k == 0 ? std::sqrt(0.5) : 1.0);
    }
    v = tmp;
}

inline void idct2_inplace(std::vector<double>& v, std::vector<double>& tmp) {
    const std::size_t n = v.size();
    tmp.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            acc += v[k] * std::sqrt(2.0 / static_cast<double>(n)) *
                   (k == 0 ? std::sqrt(0.5) : 1.0) *
                   std::cos(M_PI / static_cast<double>(n) * (static_cast<double>(i) + 0.5) *
                            static_cast<double>(k));
        tmp[i] = acc;
    }
    v = tmp;
}

}  // namespace detail

// Deterministic severity-parameterized corruption of one [H,W,C] image.
inline Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::uint64_t seed) {
    if (image.ndim() != 3) throw ShapeError("corrupt expects an [H,W,C] image");
    if (spec.severity < 0 || spec.severity > 5)
        throw ConfigError("corruption severity must be in [0,5]");
    const auto s = static_cast<std::size_t>(spec.severity);
    const CorruptionTables& tab = corruption_tables();
    Rng rng(derive_seed(seed, 0xc0, static_cast<std::uint64_t>(spec.kind), s));
    const std::size_t h = image.shape[0], w = image.shape[1], c = image.shape[2];

    switch (spec.kind) {
        case CorruptionKind::GaussianNoise: {
            Tensor out = image;
            const double sigma = tab.gaussian_sigma[s];
            if (sigma > 0.0)
                for (double& v : out.data) v = detail::clamp01(v + rng.normal(0.0, sigma));
            return out;
        }
        case CorruptionKind::ShotNoise: {
            Tensor out = image;
            const double scale = tab.shot_scale[s];
            if (scale > 0.0)
                for (double& v : out.data)
                    v = detail::clamp01(static_cast<double>(detail::poisson_draw(v * scale, rng)) /
                                        scale);
            return out;
        }
        case CorruptionKind::DefocusBlur: {
            const int r = tab.defocus_radius[s];
            return r == 0 ? image : detail::mean_filter(image, r, r);
        }
        case CorruptionKind::MotionBlur: {
            const int len = tab.motion_length[s];
            return len <= 1 ? image : detail::mean_filter(image, 0, len / 2);
        }
        case CorruptionKind::SnowLite: {
            Tensor out = image;
            const double frac = tab.snow_fraction[s];
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t col = 0; col < w; ++col)
                    if (rng.uniform() < frac)
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            double& v = out.data[(r * w + col) * c + ch];
                            v = detail::clamp01((1.0 - tab.snow_alpha) * v + tab.snow_alpha);
                        }
            return out;
        }
        case CorruptionKind::FogLite: {
            Tensor out = image;
            const double t = tab.fog_blend[s];
            for (double& v : out.data)
                v = detail::clamp01((1.0 - t) * v + t * tab.fog_plateau);
            return out;
        }
        case CorruptionKind::Brightness: {
            Tensor out = image;
            const double d = tab.brightness_delta[s];
            for (double& v : out.data) v = detail::clamp01(v + d);
            return out;
        }
        case CorruptionKind::Contrast: {
            const double k = tab.contrast_scale[s];
            if (k == 1.0) return image;
            Tensor out = image;
            const double mean = detail::image_mean(image);
            for (double& v : out.data) v = detail::clamp01(mean + (v - mean) * k);
            return out;
        }
        case CorruptionKind::Pixelate: {
            const int block = tab.pixelate_block[s];
            if (block <= 1) return image;
            Tensor out = image;
            for (std::size_t r0 = 0; r0 < h; r0 += static_cast<std::size_t>(block))
                for (std::size_t c0 = 0; c0 < w; c0 += static_cast<std::size_t>(block))
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t r1 = std::min(r0 + static_cast<std::size_t>(block), h);
                        const std::size_t c1 = std::min(c0 + static_cast<std::size_t>(block), w);
                        double acc = 0.0;
                        for (std::size_t r = r0; r < r1; ++r)
                            for (std::size_t col = c0; col < c1; ++col)
                                acc += image.data[(r * w + col) * c + ch];
                        acc /= static_cast<double>((r1 - r0) * (c1 - c0));
                        for (std::size_t r = r0; r < r1; ++r)
                            for (std::size_t col = c0; col < c1; ++col)
                                out.data[(r * w + col) * c + ch] = acc;
                    }
            return out;
        }
        case CorruptionKind::JpegLite: {
            const double q = tab.jpeg_quant[s];
            if (q <= 0.0) return image;
            // Blockwise separable DCT, uniform coefficient quantization,
            // inverse transform.
            const std::size_t block = 7;
            Tensor out = image;
            std::vector<double> line, tmp;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t r0 = 0; r0 + block <= h; r0 += block)
                    for (std::size_t c0 = 0; c0 + block <= w; c0 += block) {
                        double buf[7][7];
                        for (std::size_t r = 0; r < block; ++r) {
                            line.assign(block, 0.0);
                            for (std::size_t col = 0; col < block; ++col)
                                line[col] = out.data[((r0 + r) * w + (c0 + col)) * c + ch];
                            detail::dct2_inplace(line, tmp);
                            for (std::size_t col = 0; col < block; ++col) buf[r][col] = line[col];
                        }
                        for (std::size_t col = 0; col < block; ++col) {
                            line.assign(block, 0.0);
                            for (std::size_t r = 0; r < block; ++r) line[r] = buf[r][col];
                            detail::dct2_inplace(line, tmp);
                            for (std::size_t r = 0; r < block; ++r)
                                buf[r][col] = std::round(line[r] / q) * q;
                        }
                        for (std::size_t col = 0; col < block; ++col) {
                            line.assign(block, 0.0);
                            for (std::size_t r = 0; r < block; ++r) line[r] = buf[r][col];
                            detail::idct2_inplace(line, tmp);
                            for (std::size_t r = 0; r < block; ++r) buf[r][col] = line[r];
                        }
                        for (std::size_t r = 0; r < block; ++r) {
                            line.assign(block, 0.0);
                            for (std::size_t col = 0; col < block; ++col) line[col] = buf[r][col];
                            detail::idct2_inplace(line, tmp);
                            for (std::size_t col = 0; col < block; ++col)
                                out.data[((r0 + r) * w + (c0 + col)) * c + ch] =
                                    detail::clamp01(line[col]);
                        }
                    }
            return out;
        }
    }
    throw ConfigError("unknown corruption kind");
}

struct ErrorMatrix {
    std::vector<CorruptionKind> kinds;
    std::vector<int> severities;
    std::vector<std::vector<double>> errors;  // [kind][severity]
};

// Top-1 error of the model on corrupted copies of the test set, one cell
// per (kind, severity).
inline ErrorMatrix corruption_error_matrix(const Model& model, const DatasetStore& test,
                                           const std::vector<CorruptionKind>& kinds,
                                           const std::vector<int>& severities, std::uint64_t seed,
                                           const NoiseConfig& noise = NoiseConfig::clean(),
                                           std::size_t batch_size = 512) {
    if (kinds.empty() || severities.empty())
        throw ConfigError("corruption kinds and severities must be non-empty");
    ErrorMatrix em;
    em.kinds = kinds;
    em.severities = severities;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        std::vector<double> row;
        for (int sev : severities) {
            DatasetStore corrupted;
            corrupted.kind = test.kind;
            corrupted.image_shape = test.image_shape;
            corrupted.class_count = test.class_count;
            corrupted.labels = test.labels;
            corrupted.images.reserve(test.size());
            for (std::size_t i = 0; i < test.size(); ++i)
                corrupted.images.push_back(
                    corrupt(test.images[i], {kinds[ki], sev}, derive_seed(seed, ki, sev, i)));
            row.push_back(1.0 - eval_topk(model, corrupted, 1, noise, batch_size));
        }
        em.errors.push_back(std::move(row));
    }
    return em;
}

// Per-kind corruption error normalized by a baseline model, averaged over
// kinds: CE_kind = 100 * sum_s err / sum_s baseline_err; mCE = mean CE_kind.
inline double mce(const ErrorMatrix& model_errors, const ErrorMatrix& baseline_errors) {
    if (model_errors.errors.size() != baseline_errors.errors.size())
        throw ShapeError("mCE matrices have different kind counts");
    double acc = 0.0;
    for (std::size_t ki = 0; ki < model_errors.errors.size(); ++ki) {
        if (model_errors.errors[ki].size() != baseline_errors.errors[ki].size())
            throw ShapeError("mCE matrices have different severity counts");
        double num = 0.0, den = 0.0;
        for (std::size_t si = 0; si < model_errors.errors[ki].size(); ++si) {
            num += model_errors.errors[ki][si];
            den += baseline_errors.errors[ki][si];
        }
        if (den <= 0.0)
            throw NumericError("baseline corruption error sums to zero; mCE undefined",
                               static_cast<int>(ki));
        acc += num / den * 100.0;
    }
    return acc / static_cast<double>(model_errors.errors.size());
}

// ---------------------------------------------------------------------------
// Perturbation sequences
// ---------------------------------------------------------------------------

enum class PerturbationKind { GaussianNoise, Translate, Rotate, Brightness, ScaleLite };

inline const char* to_string(PerturbationKind k) {
    switch (k) {
        case PerturbationKind::GaussianNoise: return "gaussian-noise";
        case PerturbationKind::Translate: return "translate";
        case PerturbationKind::Rotate: return "rotate";
        case PerturbationKind::Brightness: return "brightness";
        case PerturbationKind::ScaleLite: return "scale-lite";
    }
    return "?";
}

inline PerturbationKind perturbation_kind_from_string(const std::string& s) {
    for (PerturbationKind k :
         {PerturbationKind::GaussianNoise, PerturbationKind::Translate, PerturbationKind::Rotate,
          PerturbationKind::Brightness, PerturbationKind::ScaleLite})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown perturbation kind '" + s + "'");
}

inline std::vector<PerturbationKind> all_perturbation_kinds() {
    return {PerturbationKind::GaussianNoise, PerturbationKind::Translate,
            PerturbationKind::Rotate, PerturbationKind::Brightness, PerturbationKind::ScaleLite};
}

struct PerturbationSequence {
    PerturbationKind kind;
    std::vector<Tensor> frames;  // frame 0 is the clean image
};

// Per-step magnitudes of each perturbation kind.
constexpr double kPerturbGaussianStep = 0.02;
constexpr double kPerturbRotateStep = 2.5;      // degrees
constexpr double kPerturbBrightnessStep = 0.03;
constexpr double kPerturbScaleStep = 0.04;

inline PerturbationSequence perturb_sequence(const Tensor& image, PerturbationKind kind,
                                             std::size_t frames, std::uint64_t seed) {
    if (frames < 2) throw ConfigError("perturbation sequence needs at least 2 frames");
    if (image.ndim() != 3) throw ShapeError("perturb_sequence expects an [H,W,C] image");
    PerturbationSequence seq;
    seq.kind = kind;
    seq.frames.push_back(image);
    for (std::size_t i = 1; i < frames; ++i) {
        const double fi = static_cast<double>(i);
        switch (kind) {
            case PerturbationKind::GaussianNoise: {
                Tensor f = image;
                Rng rng(derive_seed(seed, 0xbe, i));
                const double sigma = kPerturbGaussianStep * fi;
                for (double& v : f.data) v = detail::clamp01(v + rng.normal(0.0, sigma));
                seq.frames.push_back(std::move(f));
                break;
            }
            case PerturbationKind::Translate:
                seq.frames.push_back(detail::translate(image, 0, static_cast<long>(i)));
                break;
            case PerturbationKind::Rotate: {
                Rng unused(0);
                seq.frames.push_back(
                    apply_op(image, AugKind::Rotate, kPerturbRotateStep * fi, unused));
                break;
            }
            case PerturbationKind::Brightness: {
                Tensor f = image;
                for (double& v : f.data) v = detail::clamp01(v + kPerturbBrightnessStep * fi);
                seq.frames.push_back(std::move(f));
                break;
            }
            case PerturbationKind::ScaleLite: {
                // Zoom in by factor 1 + step*i; inverse map shrinks toward
                // the center so no fill is needed.
                const double inv = 1.0 / (1.0 + kPerturbScaleStep * fi);
                seq.frames.push_back(detail::affine_resample(image, inv, 0, 0, inv, 0, 0));
                break;
            }
        }
    }
    return seq;
}

// Fraction of consecutive frame pairs where the top-1 prediction changes,
// averaged over sequences.
inline double flip_probability(const Model& model,
                               const std::vector<PerturbationSequence>& sequences,
                               const NoiseConfig& noise = NoiseConfig::clean()) {
    if (sequences.empty()) throw ConfigError("flip_probability needs at least one sequence");
    double total = 0.0;
    Rng rng(0);
    for (const auto& seq : sequences) {
        if (seq.frames.size() < 2) throw ConfigError("sequence has fewer than 2 frames");
        Tensor batch({seq.frames.size(), seq.frames[0].shape[0], seq.frames[0].shape[1],
                      seq.frames[0].shape[2]});
        for (std::size_t i = 0; i < seq.frames.size(); ++i)
            std::copy(seq.frames[i].data.begin(), seq.frames[i].data.end(),
                      batch.data.begin() +
                          static_cast<std::ptrdiff_t>(i * seq.frames[0].numel()));
        auto [logits, trace] = forward(model, batch, noise, Mode::Infer, rng);
        std::size_t flips = 0;
        std::size_t prev = top1_class(logits, 0);
        for (std::size_t i = 1; i < seq.frames.size(); ++i) {
            const std::size_t cur = top1_class(logits, i);
            if (cur != prev) ++flips;
            prev = cur;
        }
        total += static_cast<double>(flips) / static_cast<double>(seq.frames.size() - 1);
    }
    return total / static_cast<double>(sequences.size());
}

// Mean over kinds of the model flip probability normalized by a baseline
// model's flip probability, times 100.
inline double mfr(const std::vector<double>& model_fp, const std::vector<double>& baseline_fp) {
    if (model_fp.size() != baseline_fp.size() || model_fp.empty())
        throw ShapeError("mFR inputs must be non-empty and the same length");
    double acc = 0.0;
    for (std::size_t i = 0; i < model_fp.size(); ++i) {
        if (baseline_fp[i] <= 0.0)
            throw NumericError("baseline flip probability is zero; mFR undefined",
                               static_cast<int>(i));
        acc += model_fp[i] / baseline_fp[i] * 100.0;
    }
    return acc / static_cast<double>(model_fp.size());
}

// ---------------------------------------------------------------------------
// Adversarial attacks
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor input_ce_gradient(const Model& model, const Tensor& image, std::size_t true_label,
                                const NoiseConfig& noise) {
    Tensor batch({1, image.shape[0], image.shape[1], image.shape[2]}, image.data);
    Rng rng(0);
    auto [logits, trace] = forward(model, batch, noise, Mode::Infer, rng);
    Tensor target({1, model.class_count});
    target.at2(0, true_label) = 1.0;
    auto lg = softmax_cross_entropy(logits, target, {1.0});
    Grads grads = backward(model, trace, lg.d_logits);
    return grads.d_input;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

// Single signed-gradient step of size eps on the input, clamped to [0,1].
inline Tensor fgsm(const Model& model, const Tensor& image, std::size_t true_label, double eps,
                   const NoiseConfig& noise = NoiseConfig::clean()) {
    if (eps < 0.0) throw ConfigError("eps must be >= 0");
    Tensor grad = detail::input_ce_gradient(model, image, true_label, noise);
    Tensor adv = image;
    for (std::size_t i = 0; i < adv.data.size(); ++i)
        adv.data[i] = detail::clamp01(adv.data[i] + eps * detail::sign(grad.data[i]));
    return adv;
}

// Iterated signed-gradient ascent projected onto the l-inf ball of radius
// eps around the input and onto the [0,1] box. steps=1 with step_size=eps
// reduces exactly to fgsm.
inline Tensor pgd(const Model& model, const Tensor& image, std::size_t true_label, double eps,
                  std::size_t steps, double step_size,
                  const NoiseConfig& noise = NoiseConfig::clean()) {
    if (steps < 1) throw ConfigError("pgd needs steps >= 1");
    if (eps < 0.0 || step_size < 0.0) throw ConfigError("eps and step size must be >= 0");
    Tensor adv = image;
    for (std::size_t it = 0; it < steps; ++it) {
        Tensor grad = detail::input_ce_gradient(model, adv, true_label, noise);
        for (std::size_t i = 0; i < adv.data.size(); ++i) {
            double v = adv.data[i] + step_size * detail::sign(grad.data[i]);
            v = std::min(std::max(v, image.data[i] - eps), image.data[i] + eps);
            adv.data[i] = detail::clamp01(v);
        }
    }
    return adv;
}

enum class AttackKind { Fgsm, Pgd };

// Top-1 accuracy under attack at one eps.
inline double attack_accuracy(const Model& model, const DatasetStore& test, double eps,
                              AttackKind kind, std::size_t pgd_steps = 10,
                              double pgd_step_size = 0.0,
                              const NoiseConfig& noise = NoiseConfig::clean()) {
    if (!test.labeled()) throw ConfigError("attack evaluation requires a labeled store");
    if (pgd_step_size <= 0.0) pgd_step_size = eps / 4.0;
    std::size_t hits = 0;
    Rng rng(0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        Tensor adv = kind == AttackKind::Fgsm
                         ? fgsm(model, test.images[i], test.labels[i], eps, noise)
                         : pgd(model, test.images[i], test.labels[i], eps, pgd_steps,
                               pgd_step_size, noise);
        Tensor batch({1, adv.shape[0], adv.shape[1], adv.shape[2]}, adv.data);
        auto [logits, trace] = forward(model, batch, noise, Mode::Infer, rng);
        if (top1_class(logits, 0) == test.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace nst
