#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nst/error.hpp"
#include "nst/noise_config.hpp"
#include "nst/rng.hpp"
#include "nst/tensor.hpp"

namespace nst {

// Fixed layer menu with exact manual backpropagation. Models are flat layer
// stacks; activations flow as [N,D] through dense layers and [N,H,W,C]
// through conv layers (the two layouts are bit-identical row-major, so
// "flatten" is a shape reinterpretation).

enum class LayerKind { Dense, Conv3x3, ResidualBlock, GlobalPool, Dropout, SoftmaxHead };
enum class Activation { None, Relu };
enum class Mode { Train, Infer };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv3x3: return "conv3x3";
        case LayerKind::ResidualBlock: return "residual-block";
        case LayerKind::GlobalPool: return "global-pool";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::SoftmaxHead: return "softmax-head";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
    for (LayerKind k : {LayerKind::Dense, LayerKind::Conv3x3, LayerKind::ResidualBlock,
                        LayerKind::GlobalPool, LayerKind::Dropout, LayerKind::SoftmaxHead})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
    LayerKind kind;
    std::size_t width = 0;  // dense/head output width; conv/residual channels
    Activation activation = Activation::None;
};

struct LayerParams {
    std::vector<Tensor> t;
};

struct Model {
    std::string arch_id;
    ImageShape input;
    std::size_t class_count = 0;
    std::vector<LayerSpec> layers;
    std::vector<LayerParams> params;
    std::uint64_t train_step = 0;
    std::uint64_t rng_state = 0;

    std::size_t residual_block_count() const {
        std::size_t n = 0;
        for (const auto& l : layers)
            if (l.kind == LayerKind::ResidualBlock) ++n;
        return n;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& lp : params)
            for (const auto& t : lp.t) n += t.numel();
        return n;
    }

    void zero_params() {
        for (auto& lp : params)
            for (auto& t : lp.t) t.fill(0.0);
    }
};

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

// Size order used for the equal-or-larger student check:
// mlp-S < mlp-L < resnetlite-N < resnetlite-M for N < M.
inline std::pair<int, int> arch_rank(const std::string& arch_id) {
    if (arch_id == "mlp-S") return {0, 0};
    if (arch_id == "mlp-L") return {1, 0};
    if (arch_id.rfind("resnetlite-", 0) == 0) {
        const std::string num = arch_id.substr(11);
        try {
            std::size_t pos = 0;
            int n = std::stoi(num, &pos);
            if (pos == num.size() && n >= 1) return {2, n};
        } catch (...) {
        }
    }
    throw ConfigError("unknown arch_id '" + arch_id + "'");
}

inline int arch_compare(const std::string& a, const std::string& b) {
    auto ra = arch_rank(a), rb = arch_rank(b);
    if (ra == rb) return 0;
    return ra < rb ? -1 : 1;
}

inline std::vector<LayerSpec> arch_layers(const std::string& arch_id, std::size_t class_count) {
    std::vector<LayerSpec> ls;
    auto rank = arch_rank(arch_id);
    if (arch_id == "mlp-S") {
        ls.push_back({LayerKind::Dense, 64, Activation::Relu});
    } else if (arch_id == "mlp-L") {
        ls.push_back({LayerKind::Dense, 128, Activation::Relu});
        ls.push_back({LayerKind::Dense, 64, Activation::Relu});
    } else {  // resnetlite-N
        const std::size_t channels = 8;
        ls.push_back({LayerKind::Conv3x3, channels, Activation::Relu});
        for (int i = 0; i < rank.second; ++i)
            ls.push_back({LayerKind::ResidualBlock, channels, Activation::Relu});
        ls.push_back({LayerKind::GlobalPool, 0, Activation::None});
    }
    ls.push_back({LayerKind::Dropout, 0, Activation::None});
    ls.push_back({LayerKind::SoftmaxHead, class_count, Activation::None});
    return ls;
}

namespace detail {

// Symbolic activation shape while walking the layer stack.
struct ActShape {
    bool image;
    std::size_t h, w, c;  // valid when image
    std::size_t d;        // flat width when !image
    std::size_t numel() const { return image ? h * w * c : d; }
};

inline ActShape walk_layer(const ActShape& in, const LayerSpec& spec, std::size_t index) {
    switch (spec.kind) {
        case LayerKind::Dense:
        case LayerKind::SoftmaxHead:
            return {false, 0, 0, 0, spec.width};
        case LayerKind::Conv3x3:
            if (!in.image) throw ShapeError("conv3x3 requires image input", static_cast<int>(index));
            return {true, in.h, in.w, spec.width, 0};
        case LayerKind::ResidualBlock:
            if (!in.image)
                throw ShapeError("residual-block requires image input", static_cast<int>(index));
            if (in.c != spec.width)
                throw ShapeError("residual-block channels " + std::to_string(spec.width) +
                                     " do not match input channels " + std::to_string(in.c),
                                 static_cast<int>(index));
            return in;
        case LayerKind::GlobalPool:
            if (!in.image)
                throw ShapeError("global-pool requires image input", static_cast<int>(index));
            return {false, 0, 0, 0, in.c};
        case LayerKind::Dropout:
            return in;
    }
    throw ConfigError("unknown layer kind");
}

}  // namespace detail

// Checks layer-spec consistency and that parameter shapes (when present)
// match. Dropout layers may only sit directly before the softmax head.
inline void validate_model(const Model& m) {
    if (m.layers.empty()) throw ConfigError("model has no layers");
    if (m.layers.back().kind != LayerKind::SoftmaxHead)
        throw ConfigError("model must end in a softmax-head layer");
    if (m.layers.back().width != m.class_count)
        throw ShapeError("softmax-head width " + std::to_string(m.layers.back().width) +
                         " != class count " + std::to_string(m.class_count));
    detail::ActShape cur{true, m.input.h, m.input.w, m.input.c, 0};
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& spec = m.layers[i];
        if (spec.kind == LayerKind::Dropout && (i + 1 >= m.layers.size() ||
                                                m.layers[i + 1].kind != LayerKind::SoftmaxHead))
            throw ConfigError("dropout layer must sit directly before the softmax head");
        detail::ActShape next = detail::walk_layer(cur, spec, i);
        if (!m.params.empty()) {
            const auto& lp = m.params.at(i).t;
            auto expect = [&](std::size_t n_tensors) {
                if (lp.size() != n_tensors)
                    throw ShapeError("unexpected parameter tensor count", static_cast<int>(i));
            };
            switch (spec.kind) {
                case LayerKind::Dense:
                case LayerKind::SoftmaxHead: {
                    expect(2);
                    const std::size_t d_in = cur.numel();
                    if (lp[0].shape != std::vector<std::size_t>{d_in, spec.width} ||
                        lp[1].shape != std::vector<std::size_t>{spec.width})
                        throw ShapeError("dense parameter shape mismatch", static_cast<int>(i));
                    break;
                }
                case LayerKind::Conv3x3:
                    expect(2);
                    if (lp[0].shape != std::vector<std::size_t>{3, 3, cur.c, spec.width} ||
                        lp[1].shape != std::vector<std::size_t>{spec.width})
                        throw ShapeError("conv parameter shape mismatch", static_cast<int>(i));
                    break;
                case LayerKind::ResidualBlock:
                    expect(4);
                    for (int k : {0, 2})
                        if (lp[static_cast<std::size_t>(k)].shape !=
                            std::vector<std::size_t>{3, 3, spec.width, spec.width})
                            throw ShapeError("residual conv shape mismatch", static_cast<int>(i));
                    for (int k : {1, 3})
                        if (lp[static_cast<std::size_t>(k)].shape !=
                            std::vector<std::size_t>{spec.width})
                            throw ShapeError("residual bias shape mismatch", static_cast<int>(i));
                    break;
                case LayerKind::GlobalPool:
                case LayerKind::Dropout:
                    expect(0);
                    break;
            }
        }
        cur = next;
    }
}

// He-uniform initialization of all parameter tensors, deterministic in seed.
inline void init_params(Model& m, std::uint64_t seed) {
    m.rng_state = seed;
    m.params.clear();
    Rng rng(derive_seed(seed, 0x1217));

    auto he_uniform = [&](Tensor& t, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : t.data) v = rng.uniform(-bound, bound);
    };

    detail::ActShape cur{true, m.input.h, m.input.w, m.input.c, 0};
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& spec = m.layers[i];
        LayerParams lp;
        switch (spec.kind) {
            case LayerKind::Dense:
            case LayerKind::SoftmaxHead: {
                const std::size_t d_in = cur.numel();
                Tensor w({d_in, spec.width}), b({spec.width});
                he_uniform(w, d_in);
                lp.t = {std::move(w), std::move(b)};
                break;
            }
            case LayerKind::Conv3x3: {
                Tensor w({3, 3, cur.c, spec.width}), b({spec.width});
                he_uniform(w, 9 * cur.c);
                lp.t = {std::move(w), std::move(b)};
                break;
            }
            case LayerKind::ResidualBlock: {
                Tensor w1({3, 3, spec.width, spec.width}), b1({spec.width});
                Tensor w2({3, 3, spec.width, spec.width}), b2({spec.width});
                he_uniform(w1, 9 * spec.width);
                he_uniform(w2, 9 * spec.width);
                lp.t = {std::move(w1), std::move(b1), std::move(w2), std::move(b2)};
                break;
            }
            case LayerKind::GlobalPool:
            case LayerKind::Dropout:
                break;
        }
        m.params.push_back(std::move(lp));
        cur = detail::walk_layer(cur, spec, i);
    }
}

inline Model make_model(const std::string& arch_id, ImageShape input, std::size_t class_count,
                        std::uint64_t seed) {
    Model m;
    m.arch_id = arch_id;
    m.input = input;
    m.class_count = class_count;
    m.layers = arch_layers(arch_id, class_count);
    init_params(m, seed);
    validate_model(m);
    return m;
}

// ---------------------------------------------------------------------------
// Model-noise primitives
// ---------------------------------------------------------------------------

struct SdGate {
    bool kept;
    double scale;
    double survival;
};

// Linear decay rule: survival p_l = 1 - (l/L) * (1 - p_L), l in [1, L].
inline double sd_survival(std::size_t block_index, std::size_t total_blocks,
                          double final_survival) {
    return 1.0 - (static_cast<double>(block_index) / static_cast<double>(total_blocks)) *
                     (1.0 - final_survival);
}

// Train mode samples keep/skip; the kept residual branch passes unscaled and
// a skipped branch is dropped entirely. Infer mode always keeps, with the
// branch scaled by the survival probability.
inline SdGate stochastic_depth_gate(std::size_t block_index, std::size_t total_blocks,
                                    double final_survival, Rng& rng, Mode mode) {
    const double p = sd_survival(block_index, total_blocks, final_survival);
    if (mode == Mode::Infer) return {true, p, p};
    const bool kept = rng.bernoulli(p);
    return {kept, kept ? 1.0 : 0.0, p};
}

// Inverted-scaling dropout mask: entries are 0 with probability rate and
// 1/(1-rate) otherwise, so the masked activation is unbiased in expectation.
inline Tensor dropout_mask(const std::vector<std::size_t>& shape, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0,1)");
    Tensor mask(shape);
    const double keep_value = 1.0 / (1.0 - rate);
    for (double& v : mask.data) v = rng.uniform() < rate ? 0.0 : keep_value;
    return mask;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct LayerTrace {
    Tensor input;     // activation as consumed by the layer
    Tensor pre_act;   // affine output before the layer activation
    Tensor r_pre1, r_act1, r_pre2;  // residual branch internals
    std::vector<double> sd_gate;    // per-example branch scale
    Tensor dropout_mask;            // empty when dropout was identity
};

struct ForwardTrace {
    std::string arch_id;
    Mode mode = Mode::Infer;
    std::size_t batch = 0;
    std::vector<LayerTrace> layers;
};

namespace detail {

inline void conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    const std::size_t n = x.shape[0], h = x.shape[1], ww = x.shape[2], ci = x.shape[3];
    const std::size_t co = w.shape[3];
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cl = 0; cl < ww; ++cl) {
                double* yp = &y.at4(in, r, cl, 0);
                for (std::size_t o = 0; o < co; ++o) yp[o] = b[o];
                for (int kr = -1; kr <= 1; ++kr) {
                    const long sr = static_cast<long>(r) + kr;
                    if (sr < 0 || sr >= static_cast<long>(h)) continue;
                    for (int kc = -1; kc <= 1; ++kc) {
                        const long sc = static_cast<long>(cl) + kc;
                        if (sc < 0 || sc >= static_cast<long>(ww)) continue;
                        const double* xp = &x.data[((in * h + static_cast<std::size_t>(sr)) * ww +
                                                    static_cast<std::size_t>(sc)) * ci];
                        const double* wp = &w.data[((static_cast<std::size_t>(kr + 1) * 3 +
                                                     static_cast<std::size_t>(kc + 1)) * ci) * co];
                        for (std::size_t i = 0; i < ci; ++i) {
                            const double xv = xp[i];
                            if (xv == 0.0) continue;
                            const double* wrow = wp + i * co;
                            for (std::size_t o = 0; o < co; ++o) yp[o] += xv * wrow[o];
                        }
                    }
                }
            }
}

// Accumulates into dx/dw/db, which must be zero-initialized by the caller
// (or hold partial sums).
inline void conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx,
                             Tensor& dw, Tensor& db) {
    const std::size_t n = x.shape[0], h = x.shape[1], ww = x.shape[2], ci = x.shape[3];
    const std::size_t co = w.shape[3];
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cl = 0; cl < ww; ++cl) {
                const double* dyp = &dy.data[((in * h + r) * ww + cl) * co];
                for (std::size_t o = 0; o < co; ++o) db[o] += dyp[o];
                for (int kr = -1; kr <= 1; ++kr) {
                    const long sr = static_cast<long>(r) + kr;
                    if (sr < 0 || sr >= static_cast<long>(h)) continue;
                    for (int kc = -1; kc <= 1; ++kc) {
                        const long sc = static_cast<long>(cl) + kc;
                        if (sc < 0 || sc >= static_cast<long>(ww)) continue;
                        const std::size_t xoff = ((in * h + static_cast<std::size_t>(sr)) * ww +
                                                  static_cast<std::size_t>(sc)) * ci;
                        const std::size_t woff = (static_cast<std::size_t>(kr + 1) * 3 +
                                                  static_cast<std::size_t>(kc + 1)) * ci * co;
                        for (std::size_t i = 0; i < ci; ++i) {
                            const double xv = x.data[xoff + i];
                            double dxv = 0.0;
                            const double* wrow = &w.data[woff + i * co];
                            double* dwrow = &dw.data[woff + i * co];
                            for (std::size_t o = 0; o < co; ++o) {
                                const double g = dyp[o];
                                dxv += g * wrow[o];
                                dwrow[o] += g * xv;
                            }
                            dx.data[xoff + i] += dxv;
                        }
                    }
                }
            }
}

inline void apply_relu(Tensor& t) {
    for (double& v : t.data)
        if (v < 0.0) v = 0.0;
}

inline void check_finite(const Tensor& t, std::size_t layer) {
    if (!t.all_finite())
        throw NumericError("non-finite activation", static_cast<int>(layer));
}

}  // namespace detail

// Runs the model on a batch ([N,D] or [N,H,W,C]; D must equal the model's
// input pixel count). Train mode samples model noise from rng as enabled by
// the config; infer mode is deterministic and draws nothing.
inline std::pair<Tensor, ForwardTrace> forward(const Model& model, const Tensor& batch,
                                               const NoiseConfig& noise, Mode mode, Rng& rng) {
    if (batch.ndim() < 2) throw ShapeError("batch must have a leading batch dimension");
    const std::size_t n = batch.shape[0];
    const std::size_t per_example = batch.numel() / (n ? n : 1);
    if (n == 0 || per_example != model.input.numel())
        throw ShapeError("batch example size " + std::to_string(per_example) +
                         " does not match model input " + std::to_string(model.input.numel()));

    ForwardTrace trace;
    trace.arch_id = model.arch_id;
    trace.mode = mode;
    trace.batch = n;
    trace.layers.resize(model.layers.size());

    Tensor cur(std::vector<std::size_t>{n, model.input.h, model.input.w, model.input.c},
               batch.data);
    const std::size_t total_blocks = model.residual_block_count();
    std::size_t block_ordinal = 0;

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        LayerTrace& lt = trace.layers[i];
        switch (spec.kind) {
            case LayerKind::Dense:
            case LayerKind::SoftmaxHead: {
                Tensor flat({n, cur.numel() / n}, cur.data);
                lt.input = flat;
                const Tensor& w = model.params[i].t[0];
                const Tensor& b = model.params[i].t[1];
                if (w.shape[0] != flat.shape[1])
                    throw ShapeError("dense input width " + std::to_string(flat.shape[1]) +
                                         " != weight rows " + std::to_string(w.shape[0]),
                                     static_cast<int>(i));
                Tensor y({n, spec.width});
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < spec.width; ++j) y.at2(r, j) = b[j];
                matmul_accumulate(flat, w, y);
                lt.pre_act = y;
                if (spec.activation == Activation::Relu) detail::apply_relu(y);
                cur = std::move(y);
                break;
            }
            case LayerKind::Conv3x3: {
                lt.input = cur;
                const Tensor& w = model.params[i].t[0];
                const Tensor& b = model.params[i].t[1];
                Tensor y({n, cur.shape[1], cur.shape[2], spec.width});
                detail::conv3x3_forward(cur, w, b, y);
                lt.pre_act = y;
                if (spec.activation == Activation::Relu) detail::apply_relu(y);
                cur = std::move(y);
                break;
            }
            case LayerKind::ResidualBlock: {
                lt.input = cur;
                ++block_ordinal;
                const auto& p = model.params[i].t;
                Tensor pre1(cur.shape);
                detail::conv3x3_forward(cur, p[0], p[1], pre1);
                Tensor act1 = pre1;
                detail::apply_relu(act1);
                Tensor pre2(cur.shape);
                detail::conv3x3_forward(act1, p[2], p[3], pre2);
                lt.r_pre1 = std::move(pre1);
                lt.r_act1 = std::move(act1);
                lt.r_pre2 = pre2;

                lt.sd_gate.assign(n, 1.0);
                if (noise.enable_sd) {
                    for (std::size_t ex = 0; ex < n; ++ex)
                        lt.sd_gate[ex] = stochastic_depth_gate(block_ordinal, total_blocks,
                                                               noise.sd_final_survival, rng, mode)
                                             .scale;
                }
                Tensor sum = cur;
                const std::size_t stride = sum.numel() / n;
                for (std::size_t ex = 0; ex < n; ++ex) {
                    const double g = lt.sd_gate[ex];
                    if (g == 0.0) continue;
                    double* sp = sum.data.data() + ex * stride;
                    const double* bp = pre2.data.data() + ex * stride;
                    for (std::size_t k = 0; k < stride; ++k) sp[k] += g * bp[k];
                }
                lt.pre_act = sum;
                if (spec.activation == Activation::Relu) detail::apply_relu(sum);
                cur = std::move(sum);
                break;
            }
            case LayerKind::GlobalPool: {
                lt.input = cur;
                const std::size_t h = cur.shape[1], w = cur.shape[2], c = cur.shape[3];
                Tensor y({n, c});
                const double inv = 1.0 / static_cast<double>(h * w);
                for (std::size_t ex = 0; ex < n; ++ex)
                    for (std::size_t r = 0; r < h; ++r)
                        for (std::size_t cl = 0; cl < w; ++cl)
                            for (std::size_t ch = 0; ch < c; ++ch)
                                y.at2(ex, ch) += cur.at4(ex, r, cl, ch) * inv;
                cur = std::move(y);
                break;
            }
            case LayerKind::Dropout: {
                lt.input = cur;
                if (mode == Mode::Train && noise.enable_dropout && noise.dropout_rate > 0.0) {
                    lt.dropout_mask = dropout_mask(cur.shape, noise.dropout_rate, rng);
                    for (std::size_t k = 0; k < cur.data.size(); ++k)
                        cur.data[k] *= lt.dropout_mask.data[k];
                }
                break;
            }
        }
        detail::check_finite(cur, i);
    }
    if (cur.shape != std::vector<std::size_t>{n, model.class_count})
        throw ShapeError("model output shape " + cur.shape_str() + " is not [batch, K]");
    return {std::move(cur), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

struct Grads {
    std::vector<LayerParams> layers;
    Tensor d_input;  // gradient w.r.t. the batch (used by input-space attacks)

    static Grads zeros_like(const Model& m) {
        Grads g;
        g.layers.reserve(m.params.size());
        for (const auto& lp : m.params) {
            LayerParams z;
            for (const auto& t : lp.t) z.t.emplace_back(t.shape);
            g.layers.push_back(std::move(z));
        }
        return g;
    }

    void accumulate(const Grads& o) {
        for (std::size_t i = 0; i < layers.size(); ++i)
            for (std::size_t j = 0; j < layers[i].t.size(); ++j)
                for (std::size_t k = 0; k < layers[i].t[j].data.size(); ++k)
                    layers[i].t[j].data[k] += o.layers[i].t[j].data[k];
    }

    void scale(double s) {
        for (auto& lp : layers)
            for (auto& t : lp.t)
                for (double& v : t.data) v *= s;
        for (double& v : d_input.data) v *= s;
    }
};

// Exact gradients for the traced forward pass. Noise gates recorded in the
// trace are respected: gradient flows only through kept units and blocks.
inline Grads backward(const Model& model, const ForwardTrace& trace, const Tensor& d_logits) {
    if (trace.arch_id != model.arch_id || trace.layers.size() != model.layers.size())
        throw ShapeError("trace does not belong to this model");
    const std::size_t n = trace.batch;
    if (d_logits.shape != std::vector<std::size_t>{n, model.class_count})
        throw ShapeError("upstream gradient shape " + d_logits.shape_str() +
                         " is not [batch, K]");

    Grads grads = Grads::zeros_like(model);
    Tensor g = d_logits;

    for (std::size_t ri = model.layers.size(); ri-- > 0;) {
        const LayerSpec& spec = model.layers[ri];
        const LayerTrace& lt = trace.layers[ri];
        switch (spec.kind) {
            case LayerKind::Dense:
            case LayerKind::SoftmaxHead: {
                if (spec.activation == Activation::Relu)
                    for (std::size_t k = 0; k < g.data.size(); ++k)
                        if (lt.pre_act.data[k] <= 0.0) g.data[k] = 0.0;
                const Tensor& w = model.params[ri].t[0];
                Tensor& dw = grads.layers[ri].t[0];
                Tensor& db = grads.layers[ri].t[1];
                matmul_at_b_accumulate(lt.input, g, dw);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < spec.width; ++j) db[j] += g.at2(r, j);
                Tensor dx({n, w.shape[0]});
                matmul_b_wt_accumulate(g, w, dx);
                g = std::move(dx);
                break;
            }
            case LayerKind::Conv3x3: {
                if (spec.activation == Activation::Relu)
                    for (std::size_t k = 0; k < g.data.size(); ++k)
                        if (lt.pre_act.data[k] <= 0.0) g.data[k] = 0.0;
                Tensor dx(lt.input.shape);
                detail::conv3x3_backward(lt.input, model.params[ri].t[0], g, dx,
                                         grads.layers[ri].t[0], grads.layers[ri].t[1]);
                g = std::move(dx);
                break;
            }
            case LayerKind::ResidualBlock: {
                if (spec.activation == Activation::Relu)
                    for (std::size_t k = 0; k < g.data.size(); ++k)
                        if (lt.pre_act.data[k] <= 0.0) g.data[k] = 0.0;
                // Identity path.
                Tensor dx = g;
                // Branch path, scaled by the per-example gate.
                Tensor d_pre2 = g;
                const std::size_t stride = g.numel() / n;
                for (std::size_t ex = 0; ex < n; ++ex) {
                    const double gate = lt.sd_gate[ex];
                    double* p = d_pre2.data.data() + ex * stride;
                    for (std::size_t k = 0; k < stride; ++k) p[k] *= gate;
                }
                const auto& p = model.params[ri].t;
                Tensor d_act1(lt.r_act1.shape);
                detail::conv3x3_backward(lt.r_act1, p[2], d_pre2, d_act1, grads.layers[ri].t[2],
                                         grads.layers[ri].t[3]);
                for (std::size_t k = 0; k < d_act1.data.size(); ++k)
                    if (lt.r_pre1.data[k] <= 0.0) d_act1.data[k] = 0.0;
                detail::conv3x3_backward(lt.input, p[0], d_act1, dx, grads.layers[ri].t[0],
                                         grads.layers[ri].t[1]);
                g = std::move(dx);
                break;
            }
            case LayerKind::GlobalPool: {
                const std::size_t h = lt.input.shape[1], w = lt.input.shape[2],
                                  c = lt.input.shape[3];
                Tensor dx(lt.input.shape);
                const double inv = 1.0 / static_cast<double>(h * w);
                for (std::size_t ex = 0; ex < n; ++ex)
                    for (std::size_t r = 0; r < h; ++r)
                        for (std::size_t cl = 0; cl < w; ++cl)
                            for (std::size_t ch = 0; ch < c; ++ch)
                                dx.at4(ex, r, cl, ch) = g.at2(ex, ch) * inv;
                g = std::move(dx);
                break;
            }
            case LayerKind::Dropout: {
                if (lt.dropout_mask.numel() > 0)
                    for (std::size_t k = 0; k < g.data.size(); ++k)
                        g.data[k] *= lt.dropout_mask.data[k];
                break;
            }
        }
    }
    grads.d_input = std::move(g);
    return grads;
}

}  // namespace nst
