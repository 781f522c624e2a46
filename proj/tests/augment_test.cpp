#include <gtest/gtest.h>

#include "nst/augment.hpp"

using namespace nst;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
    Tensor img({h, w, c});
    Rng rng(seed);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

TEST(ApplyOp, ZeroMagnitudeTranslateAndBrightnessAreIdentity) {
    Tensor img = random_image(8, 8, 1, 1);
    Rng rng(0);
    EXPECT_EQ(apply_op(img, AugKind::TranslateX, 0.0, rng).data, img.data);
    EXPECT_EQ(apply_op(img, AugKind::TranslateY, 0.0, rng).data, img.data);
    // Magnitude 0 maps to factor 1.0.
    EXPECT_EQ(apply_op(img, AugKind::Brightness, 0.0, rng).data, img.data);
    EXPECT_EQ(apply_op(img, AugKind::Contrast, 0.0, rng).data, img.data);
    EXPECT_EQ(apply_op(img, AugKind::Sharpness, 0.0, rng).data, img.data);
}

TEST(ApplyOp, Rotate90MatchesHandPixelPermutation) {
    // [[a,b],[c,d]] rotated 90 degrees -> [[b,d],[a,c]] under the inverse
    // nearest-neighbor map about the image center.
    const double a = 0.1, b = 0.4, c = 0.7, d = 0.9;
    Tensor img({2, 2, 1}, {a, b, c, d});
    Rng rng(0);
    Tensor out = apply_op(img, AugKind::Rotate, 90.0, rng);
    EXPECT_NEAR(out.data[0], b, 1e-12);
    EXPECT_NEAR(out.data[1], d, 1e-12);
    EXPECT_NEAR(out.data[2], a, 1e-12);
    EXPECT_NEAR(out.data[3], c, 1e-12);
}

TEST(ApplyOp, TranslateMatchesManualPixelShift) {
    Tensor img = random_image(6, 6, 1, 3);
    Rng rng(0);
    // Shift right by 2 columns: out(r,c) = in(r,c-2), exposed columns 0.5.
    Tensor out = apply_op(img, AugKind::TranslateX, 2.0 / 6.0, rng);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 6; ++c) {
            const double expect = c >= 2 ? img.data[r * 6 + (c - 2)] : 0.5;
            EXPECT_DOUBLE_EQ(out.data[r * 6 + c], expect);
        }
}

TEST(ApplyOp, InvertAndFlipAreInvolutions) {
    Tensor img = random_image(5, 7, 1, 9);
    Rng rng(0);
    Tensor inv2 = apply_op(apply_op(img, AugKind::Invert, 0.0, rng), AugKind::Invert, 0.0, rng);
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(inv2[i], img[i], 1e-12);
    Tensor flip2 = apply_op(apply_op(img, AugKind::FlipHorizontal, 0.0, rng),
                            AugKind::FlipHorizontal, 0.0, rng);
    EXPECT_EQ(flip2.data, img.data);
}

TEST(ApplyOp, CutoutFillsPatchWithMidGray) {
    Tensor img({8, 8, 1});
    img.fill(1.0);
    Rng rng(42);
    Tensor out = apply_op(img, AugKind::Cutout, 0.4, rng);
    std::size_t gray = 0, untouched = 0;
    for (double v : out.data) {
        if (v == 0.5)
            ++gray;
        else if (v == 1.0)
            ++untouched;
    }
    EXPECT_EQ(gray + untouched, 64u);
    EXPECT_GT(gray, 0u);
    EXPECT_GT(untouched, 0u);
}

TEST(ApplyOp, RangeAndShapePreservedForAllKinds) {
    Rng rng(100);
    for (AugKind kind : default_op_menu()) {
        for (double frac : {0.0, 0.3, 0.7, 1.0}) {
            Tensor img = random_image(9, 9, 1, 17);
            const AugRange range = aug_range(kind);
            for (double sgn : {1.0, -1.0}) {
                const double mag = sgn * range.max * frac;
                Tensor out = apply_op(img, kind, range.is_signed ? mag : std::abs(mag), rng);
                EXPECT_EQ(out.shape, img.shape);
                for (double v : out.data) {
                    EXPECT_GE(v, 0.0);
                    EXPECT_LE(v, 1.0);
                }
            }
        }
    }
}

TEST(ApplyOp, BrightnessContrastMonotoneMaxDeviation) {
    Tensor img = random_image(10, 10, 1, 23);
    Rng rng(0);
    for (AugKind kind : {AugKind::Brightness, AugKind::Contrast}) {
        double prev = -1.0;
        for (double mag : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            Tensor out = apply_op(img, kind, mag, rng);
            double dev = 0.0;
            for (std::size_t i = 0; i < img.numel(); ++i)
                dev = std::max(dev, std::abs(out[i] - img[i]));
            EXPECT_GE(dev, prev) << to_string(kind) << " at magnitude " << mag;
            prev = dev;
        }
    }
}

TEST(RandAugment, MagnitudeZeroGeometricMenuIsNearIdentity) {
    RandAugmentPolicy policy;
    policy.num_ops = 2;
    policy.magnitude = 0;
    policy.op_menu = {AugKind::TranslateX, AugKind::TranslateY, AugKind::ShearX, AugKind::ShearY,
                      AugKind::Rotate};
    Tensor img = random_image(8, 8, 1, 5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Tensor out = randaugment(img, policy, rng);
        double max_delta = 0.0;
        for (std::size_t i = 0; i < img.numel(); ++i)
            max_delta = std::max(max_delta, std::abs(out[i] - img[i]));
        EXPECT_LT(max_delta, 1e-9);
    }
}

TEST(RandAugment, FixedSeedDeterministic) {
    RandAugmentPolicy policy;  // defaults: 2 ops at magnitude 27
    EXPECT_EQ(policy.num_ops, 2);
    EXPECT_EQ(policy.magnitude, 27);
    Tensor img = random_image(8, 8, 1, 6);
    Rng r1(33), r2(33);
    Tensor a = randaugment(img, policy, r1);
    Tensor b = randaugment(img, policy, r2);
    EXPECT_EQ(a.data, b.data);
}

TEST(RandAugment, SeedChangesOutput) {
    RandAugmentPolicy policy;
    Tensor img = random_image(8, 8, 1, 6);
    Rng r1(33), r2(34);
    Tensor a = randaugment(img, policy, r1);
    Tensor b = randaugment(img, policy, r2);
    EXPECT_NE(a.data, b.data);
}

TEST(StandardAugment, DeterministicCoreIdentityAndShift) {
    Tensor img = random_image(10, 10, 1, 8);
    EXPECT_EQ(standard_augment_with(img, 0, 0, false).data, img.data);

    // Shift down by 2 rows matches a manual pixel remap.
    Tensor out = standard_augment_with(img, 2, 0, false);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 10; ++c) {
            const double expect = r >= 2 ? img.data[(r - 2) * 10 + c] : 0.5;
            EXPECT_DOUBLE_EQ(out.data[r * 10 + c], expect);
        }

    // Flip is an involution at zero shift.
    Tensor f2 = standard_augment_with(standard_augment_with(img, 0, 0, true), 0, 0, true);
    EXPECT_EQ(f2.data, img.data);
}

TEST(StandardAugment, ShiftsBoundedByTenPercent) {
    Tensor img = random_image(20, 20, 1, 3);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        Tensor out = standard_augment(img, rng);
        EXPECT_EQ(out.shape, img.shape);
        for (double v : out.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(AugKindNames, RoundTrip) {
    for (AugKind k : default_op_menu()) EXPECT_EQ(aug_kind_from_string(to_string(k)), k);
    EXPECT_THROW(aug_kind_from_string("sparkle"), ConfigError);
}
