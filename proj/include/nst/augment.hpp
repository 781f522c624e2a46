#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nst/error.hpp"
#include "nst/rng.hpp"
#include "nst/tensor.hpp"

namespace nst {

// Input-noise library: single-image augmentation ops on [H,W,C] tensors with
// pixels in [0,1], a RandAugment-style random policy, and the baseline
// translate+flip augmentation. All ops clamp their output back to [0,1];
// geometric ops fill exposed pixels with mid-gray 0.5.

enum class AugKind {
    TranslateX,
    TranslateY,
    ShearX,
    ShearY,
    Rotate,
    FlipHorizontal,
    Brightness,
    Contrast,
    Sharpness,
    Invert,
    Cutout,
};

inline const char* to_string(AugKind k) {
    switch (k) {
        case AugKind::TranslateX: return "translate-x";
        case AugKind::TranslateY: return "translate-y";
        case AugKind::ShearX: return "shear-x";
        case AugKind::ShearY: return "shear-y";
        case AugKind::Rotate: return "rotate";
        case AugKind::FlipHorizontal: return "flip-horizontal";
        case AugKind::Brightness: return "brightness";
        case AugKind::Contrast: return "contrast";
        case AugKind::Sharpness: return "sharpness";
        case AugKind::Invert: return "invert";
        case AugKind::Cutout: return "cutout";
    }
    return "?";
}

inline AugKind aug_kind_from_string(const std::string& s) {
    for (AugKind k : {AugKind::TranslateX, AugKind::TranslateY, AugKind::ShearX, AugKind::ShearY,
                      AugKind::Rotate, AugKind::FlipHorizontal, AugKind::Brightness,
                      AugKind::Contrast, AugKind::Sharpness, AugKind::Invert, AugKind::Cutout})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown augment op kind '" + s + "'");
}

// Physical parameter reached at policy magnitude 30. Signed ops draw a
// random sign per application.
struct AugRange {
    double max;
    bool is_signed;
};

inline AugRange aug_range(AugKind k) {
    switch (k) {
        case AugKind::TranslateX:
        case AugKind::TranslateY: return {0.30, true};   // fraction of side
        case AugKind::ShearX:
        case AugKind::ShearY: return {0.30, true};       // shear factor
        case AugKind::Rotate: return {30.0, true};       // degrees
        case AugKind::FlipHorizontal: return {0.0, false};
        case AugKind::Brightness:
        case AugKind::Contrast:
        case AugKind::Sharpness: return {0.90, true};    // factor = 1 + m
        case AugKind::Invert: return {0.0, false};
        case AugKind::Cutout: return {0.40, false};      // patch side / image side
    }
    return {0.0, false};
}

namespace detail {

constexpr double kGeomFill = 0.5;

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline void check_image(const Tensor& img) {
    if (img.ndim() != 3)
        throw ShapeError("augment expects an [H,W,C] image, got " + img.shape_str());
}

// Nearest-neighbor resample through an inverse affine map
//   src = A * (dst - center) + center + offset
inline Tensor affine_resample(const Tensor& img, double a00, double a01, double a10, double a11,
                              double off_r, double off_c) {
    const std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
    const double cr = (static_cast<double>(h) - 1.0) / 2.0;
    const double cc = (static_cast<double>(w) - 1.0) / 2.0;
    Tensor out(img.shape);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            const double rr = static_cast<double>(r) - cr;
            const double ww = static_cast<double>(col) - cc;
            const double sr = a00 * rr + a01 * ww + cr + off_r;
            const double sc = a10 * rr + a11 * ww + cc + off_c;
            const long ir = std::lround(sr);
            const long ic = std::lround(sc);
            const bool inside = ir >= 0 && ic >= 0 && ir < static_cast<long>(h) &&
                                ic < static_cast<long>(w);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double v = inside ? img.data[(static_cast<std::size_t>(ir) * w +
                                              static_cast<std::size_t>(ic)) * c + ch]
                                  : kGeomFill;
                out.data[(r * w + col) * c + ch] = v;
            }
        }
    }
    return out;
}

inline Tensor translate(const Tensor& img, long dr, long dc) {
    return affine_resample(img, 1, 0, 0, 1, static_cast<double>(-dr), static_cast<double>(-dc));
}

inline Tensor box_blur3(const Tensor& img) {
    const std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
    Tensor out(img.shape);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                int n = 0;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        long rr = static_cast<long>(r) + dr, cc2 = static_cast<long>(col) + dc;
                        if (rr < 0 || cc2 < 0 || rr >= static_cast<long>(h) ||
                            cc2 >= static_cast<long>(w))
                            continue;
                        acc += img.data[(static_cast<std::size_t>(rr) * w +
                                         static_cast<std::size_t>(cc2)) * c + ch];
                        ++n;
                    }
                out.data[(r * w + col) * c + ch] = acc / n;
            }
    return out;
}

inline double image_mean(const Tensor& img) {
    double s = 0.0;
    for (double v : img.data) s += v;
    return img.data.empty() ? 0.0 : s / static_cast<double>(img.data.size());
}

}  // namespace detail

// Applies one op at a signed physical magnitude. Deterministic except
// cutout, which draws its patch center from rng.
inline Tensor apply_op(const Tensor& img, AugKind kind, double magnitude, Rng& rng) {
    detail::check_image(img);
    const std::size_t h = img.shape[0], w = img.shape[1], c = img.shape[2];
    switch (kind) {
        case AugKind::TranslateX:
            return detail::translate(img, 0, std::lround(magnitude * static_cast<double>(w)));
        case AugKind::TranslateY:
            return detail::translate(img, std::lround(magnitude * static_cast<double>(h)), 0);
        case AugKind::ShearX:
            // dst col displaced by m * (row - center): invert by subtracting.
            return detail::affine_resample(img, 1, 0, -magnitude, 1, 0, 0);
        case AugKind::ShearY:
            return detail::affine_resample(img, 1, -magnitude, 0, 1, 0, 0);
        case AugKind::Rotate: {
            const double th = magnitude * 0.017453292519943295;  // deg -> rad
            return detail::affine_resample(img, std::cos(th), std::sin(th), -std::sin(th),
                                           std::cos(th), 0, 0);
        }
        case AugKind::FlipHorizontal: {
            Tensor out(img.shape);
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t col = 0; col < w; ++col)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        out.data[(r * w + col) * c + ch] =
                            img.data[(r * w + (w - 1 - col)) * c + ch];
            return out;
        }
        case AugKind::Brightness: {
            Tensor out = img;
            for (double& v : out.data) v = detail::clamp01(v * (1.0 + magnitude));
            return out;
        }
        case AugKind::Contrast: {
            const double mean = detail::image_mean(img);
            Tensor out = img;
            for (double& v : out.data) v = detail::clamp01(mean + (v - mean) * (1.0 + magnitude));
            return out;
        }
        case AugKind::Sharpness: {
            Tensor blur = detail::box_blur3(img);
            Tensor out = img;
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] =
                    detail::clamp01(blur.data[i] + (1.0 + magnitude) * (img.data[i] - blur.data[i]));
            return out;
        }
        case AugKind::Invert: {
            Tensor out = img;
            for (double& v : out.data) v = detail::clamp01(1.0 - v);
            return out;
        }
        case AugKind::Cutout: {
            const std::size_t side = std::min(h, w);
            const long patch = std::lround(magnitude * static_cast<double>(side));
            Tensor out = img;
            if (patch <= 0) return out;
            const long pr = static_cast<long>(rng.below(h));
            const long pc = static_cast<long>(rng.below(w));
            for (long r = pr - patch / 2; r < pr - patch / 2 + patch; ++r)
                for (long col = pc - patch / 2; col < pc - patch / 2 + patch; ++col) {
                    if (r < 0 || col < 0 || r >= static_cast<long>(h) || col >= static_cast<long>(w))
                        continue;
                    for (std::size_t ch = 0; ch < c; ++ch)
                        out.data[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(col)) *
                                     c + ch] = detail::kGeomFill;
                }
            return out;
        }
    }
    throw ConfigError("unknown augment op kind");
}

inline std::vector<AugKind> default_op_menu() {
    return {AugKind::TranslateX, AugKind::TranslateY, AugKind::ShearX,      AugKind::ShearY,
            AugKind::Rotate,     AugKind::FlipHorizontal, AugKind::Brightness, AugKind::Contrast,
            AugKind::Sharpness,  AugKind::Invert,     AugKind::Cutout};
}

struct RandAugmentPolicy {
    int num_ops = 2;
    int magnitude = 27;  // 0..30 scale
    std::vector<AugKind> op_menu = default_op_menu();

    void validate() const {
        if (num_ops < 1) throw ConfigError("num_ops must be >= 1", "augment.num_ops");
        if (magnitude < 0 || magnitude > 30)
            throw ConfigError("magnitude must be in [0,30]", "augment.magnitude");
        if (op_menu.empty()) throw ConfigError("op menu must not be empty", "augment.op_menu");
    }
};

// Samples num_ops ops uniformly with replacement and applies them in order.
// Per-op physical magnitude is the op range interpolated at magnitude/30;
// signed ops get a random sign.
inline Tensor randaugment(const Tensor& img, const RandAugmentPolicy& policy, Rng& rng) {
    policy.validate();
    Tensor out = img;
    for (int i = 0; i < policy.num_ops; ++i) {
        AugKind kind = policy.op_menu[rng.below(policy.op_menu.size())];
        AugRange range = aug_range(kind);
        double mag = range.max * static_cast<double>(policy.magnitude) / 30.0;
        if (range.is_signed && rng.bernoulli(0.5)) mag = -mag;
        out = apply_op(out, kind, mag, rng);
    }
    return out;
}

// Deterministic core of the baseline augmentation; shift in pixels.
inline Tensor standard_augment_with(const Tensor& img, long shift_r, long shift_c, bool flip) {
    detail::check_image(img);
    Tensor out = detail::translate(img, shift_r, shift_c);
    if (flip) {
        Rng unused(0);
        out = apply_op(out, AugKind::FlipHorizontal, 0.0, unused);
    }
    return out;
}

// Baseline augmentation: random translation up to +/-10% of side, then
// horizontal flip with probability 0.5.
inline Tensor standard_augment(const Tensor& img, Rng& rng) {
    detail::check_image(img);
    const long max_r = std::lround(0.10 * static_cast<double>(img.shape[0]));
    const long max_c = std::lround(0.10 * static_cast<double>(img.shape[1]));
    const long dr = static_cast<long>(rng.below(2 * static_cast<std::uint64_t>(max_r) + 1)) - max_r;
    const long dc = static_cast<long>(rng.below(2 * static_cast<std::uint64_t>(max_c) + 1)) - max_c;
    const bool flip = rng.bernoulli(0.5);
    return standard_augment_with(img, dr, dc, flip);
}

}  // namespace nst
