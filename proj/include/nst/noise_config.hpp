#pragma once

#include "nst/augment.hpp"
#include "nst/error.hpp"

namespace nst {

enum class AugmentMode { None, Standard, RandAugment };

inline const char* to_string(AugmentMode m) {
    switch (m) {
        case AugmentMode::None: return "none";
        case AugmentMode::Standard: return "standard";
        case AugmentMode::RandAugment: return "randaugment";
    }
    return "?";
}

inline AugmentMode augment_mode_from_string(const std::string& s) {
    if (s == "none") return AugmentMode::None;
    if (s == "standard") return AugmentMode::Standard;
    if (s == "randaugment") return AugmentMode::RandAugment;
    throw ConfigError("unknown augment policy '" + s + "'");
}

struct AugmentPolicy {
    AugmentMode mode = AugmentMode::RandAugment;
    RandAugmentPolicy ra;

    Tensor apply(const Tensor& img, Rng& rng) const {
        switch (mode) {
            case AugmentMode::None: return img;
            case AugmentMode::Standard: return standard_augment(img, rng);
            case AugmentMode::RandAugment: return randaugment(img, ra, rng);
        }
        return img;
    }
};

// Noise applied to the student: input noise (augmentation policy) and model
// noise (dropout before the softmax head, stochastic depth on residual
// blocks). Disabling all three gives the clean function f.
struct NoiseConfig {
    double dropout_rate = 0.5;
    double sd_final_survival = 0.8;
    AugmentPolicy augment;
    bool enable_aug = true;
    bool enable_sd = true;
    bool enable_dropout = true;

    static NoiseConfig clean() {
        NoiseConfig n;
        n.enable_aug = n.enable_sd = n.enable_dropout = false;
        return n;
    }

    bool all_disabled() const { return !enable_aug && !enable_sd && !enable_dropout; }

    void validate() const {
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("dropout_rate must be in [0,1)", "noise.dropout_rate");
        if (!(sd_final_survival > 0.0 && sd_final_survival <= 1.0))
            throw ConfigError("sd_final_survival must be in (0,1]", "noise.sd_final_survival");
        if (enable_aug && augment.mode == AugmentMode::RandAugment) augment.ra.validate();
    }
};

}  // namespace nst
