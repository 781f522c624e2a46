#include <gtest/gtest.h>

#include <cmath>

#include "nst/pseudo.hpp"

using namespace nst;

namespace {

DatasetStore tiny_unlabeled(std::size_t n, ImageShape shape, std::uint64_t seed) {
    DatasetStore s;
    s.kind = StoreKind::Unlabeled;
    s.image_shape = shape;
    s.class_count = 0;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor img({shape.h, shape.w, shape.c});
        for (double& v : img.data) v = rng.uniform();
        s.images.push_back(std::move(img));
    }
    return s;
}

PseudoPool pool_with_confidences(const std::vector<double>& confidences,
                                 const std::vector<std::size_t>& hards, std::size_t k) {
    PseudoPool pool;
    pool.image_shape = {2, 2, 1};
    pool.class_count = k;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        PseudoLabeledExample e;
        e.image = Tensor({2, 2, 1});
        e.image.fill(static_cast<double>(i) / 100.0);  // unique identity per example
        e.hard = hards[i];
        e.confidence = confidences[i];
        e.soft.assign(k, (1.0 - confidences[i]) / static_cast<double>(k - 1));
        e.soft[e.hard] = confidences[i];
        e.source_index = i;
        pool.examples.push_back(std::move(e));
    }
    return pool;
}

}  // namespace

TEST(PseudoGen, ZeroWeightTeacherGivesUniformSoftLabels) {
    Model teacher = make_model("mlp-S", {3, 3, 1}, 4, 1);
    teacher.zero_params();
    DatasetStore u = tiny_unlabeled(5, {3, 3, 1}, 2);
    PseudoPool pool = generate_pseudo_labels(teacher, u);
    ASSERT_EQ(pool.size(), 5u);
    for (const auto& e : pool.examples) {
        for (double v : e.soft) EXPECT_DOUBLE_EQ(v, 0.25);
        EXPECT_EQ(e.hard, 0u);  // tie-break toward the lowest index
        EXPECT_DOUBLE_EQ(e.confidence, 0.25);
    }
}

TEST(PseudoGen, IdenticalImagesGetIdenticalLabels) {
    Model teacher = make_model("mlp-S", {3, 3, 1}, 3, 5);
    DatasetStore u = tiny_unlabeled(1, {3, 3, 1}, 7);
    u.images.push_back(u.images[0]);
    u.images.push_back(u.images[0]);
    PseudoPool pool = generate_pseudo_labels(teacher, u);
    EXPECT_EQ(pool.examples[0].soft, pool.examples[1].soft);
    EXPECT_EQ(pool.examples[0].soft, pool.examples[2].soft);
}

TEST(PseudoGen, HandSetTeacherMatchesHandSoftmax) {
    // Single-head teacher: logits = x W + b; soft labels must equal the
    // directly computed exp/sum values.
    Model teacher;
    teacher.arch_id = "mlp-S";
    teacher.input = {1, 1, 2};
    teacher.class_count = 3;
    teacher.layers = {{LayerKind::SoftmaxHead, 3, Activation::None}};
    init_params(teacher, 0);
    teacher.params[0].t[0] = Tensor({2, 3}, {1.0, -0.5, 0.25, 0.0, 2.0, -1.0});
    teacher.params[0].t[1] = Tensor({3}, {0.1, 0.0, -0.1});

    DatasetStore u;
    u.kind = StoreKind::Unlabeled;
    u.image_shape = {1, 1, 2};
    for (auto xy : {std::pair{0.2, 0.8}, std::pair{1.0, 0.0}, std::pair{0.5, 0.5}})
        u.images.push_back(Tensor({1, 1, 2}, {xy.first, xy.second}));

    PseudoPool pool = generate_pseudo_labels(teacher, u);
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double x0 = u.images[i][0], x1 = u.images[i][1];
        double logits[3];
        for (int j = 0; j < 3; ++j)
            logits[j] = x0 * teacher.params[0].t[0].at2(0, static_cast<std::size_t>(j)) +
                        x1 * teacher.params[0].t[0].at2(1, static_cast<std::size_t>(j)) +
                        teacher.params[0].t[1][static_cast<std::size_t>(j)];
        const double mx = std::max({logits[0], logits[1], logits[2]});
        double sum = 0.0;
        for (double& l : logits) {
            l = std::exp(l - mx);
            sum += l;
        }
        for (int j = 0; j < 3; ++j)
            EXPECT_NEAR(pool.examples[i].soft[static_cast<std::size_t>(j)], logits[j] / sum,
                        1e-12);
    }
}

TEST(Harden, BasicTieBreakAndBruteForce) {
    EXPECT_EQ(harden({0.1, 0.7, 0.2}), (std::vector<double>{0, 1, 0}));
    EXPECT_EQ(harden({0.5, 0.5}), (std::vector<double>{1, 0}));

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> soft(6);
        for (double& v : soft) v = rng.uniform();
        auto one_hot = harden(soft);
        // Brute-force max scan.
        std::size_t best = 0;
        for (std::size_t j = 1; j < soft.size(); ++j)
            if (soft[j] > soft[best]) best = j;
        for (std::size_t j = 0; j < soft.size(); ++j)
            EXPECT_DOUBLE_EQ(one_hot[j], j == best ? 1.0 : 0.0);
    }
}

TEST(Filter, StrictInequalityBoundary) {
    PseudoPool pool = pool_with_confidences({0.2, 0.3, 0.31}, {0, 0, 0}, 3);
    PseudoPool kept = filter_confidence(pool, 0.3);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_DOUBLE_EQ(kept.examples[0].confidence, 0.31);
}

TEST(Filter, MatchesBruteForceAndPreservesOrder) {
    Rng rng(11);
    std::vector<double> confs;
    std::vector<std::size_t> hards;
    for (int i = 0; i < 300; ++i) {
        confs.push_back(rng.uniform());
        hards.push_back(rng.below(4));
    }
    PseudoPool pool = pool_with_confidences(confs, hards, 4);
    const double tau = 0.45;
    PseudoPool kept = filter_confidence(pool, tau);

    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < confs.size(); ++i)
        if (confs[i] > tau) expected.push_back(i);
    ASSERT_EQ(kept.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        EXPECT_EQ(kept.examples[i].source_index, expected[i]);
}

TEST(Balance, KeepsHighestConfidenceWithSortTruncateOracle) {
    PseudoPool pool = pool_with_confidences({0.9, 0.8, 0.7, 0.6, 0.5}, {0, 0, 0, 0, 0}, 2);
    Rng rng(1);
    BalanceResult r = balance(pool, 3, rng);
    auto counts = r.pool.per_class_counts();
    EXPECT_EQ(counts[0], 3u);
    // The three highest-confidence members survive.
    std::vector<double> kept;
    for (const auto& e : r.pool.examples) kept.push_back(e.confidence);
    std::sort(kept.begin(), kept.end(), std::greater<>());
    EXPECT_EQ(kept, (std::vector<double>{0.9, 0.8, 0.7}));
    EXPECT_EQ(r.empty_classes, (std::vector<std::size_t>{1}));
}

TEST(Balance, SingleExampleClassDuplicatedToCap) {
    PseudoPool pool = pool_with_confidences({0.9}, {1}, 3);
    Rng rng(2);
    BalanceResult r = balance(pool, 3, rng);
    auto counts = r.pool.per_class_counts();
    EXPECT_EQ(counts[1], 3u);
    for (const auto& e : r.pool.examples) {
        EXPECT_EQ(e.source_index, 0u);
        EXPECT_EQ(e.image.data, pool.examples[0].image.data);
    }
    EXPECT_EQ(r.pool.distinct_count(), 1u);
    EXPECT_EQ(r.pool.size(), 3u);
}

TEST(Balance, EveryClassEndsAtCapOrZeroAndProvenanceHolds) {
    Rng gen(21);
    std::vector<double> confs;
    std::vector<std::size_t> hards;
    for (int i = 0; i < 157; ++i) {
        confs.push_back(gen.uniform());
        hards.push_back(gen.below(5) == 4 ? 4 : gen.below(3));  // class 3 stays empty
    }
    // Force class 3 empty.
    for (auto& h : hards)
        if (h == 3) h = 0;
    PseudoPool pool = pool_with_confidences(confs, hards, 5);
    Rng rng(3);
    const std::size_t cap = 40;
    BalanceResult r = balance(pool, cap, rng);
    auto counts = r.pool.per_class_counts();
    for (std::size_t c = 0; c < 5; ++c) EXPECT_TRUE(counts[c] == 0 || counts[c] == cap);
    EXPECT_EQ(counts[3], 0u);

    // Duplicates must be copies of members of the same class.
    for (const auto& e : r.pool.examples)
        EXPECT_EQ(e.hard, pool.examples[e.source_index].hard);
    EXPECT_LE(r.pool.distinct_count(), r.pool.size());
}

TEST(Balance, DistinctEqualsTotalIffNoClassWasDeficient) {
    // All classes above cap: truncation only, no duplication.
    Rng gen(5);
    std::vector<double> confs;
    std::vector<std::size_t> hards;
    for (int i = 0; i < 120; ++i) {
        confs.push_back(gen.uniform());
        hards.push_back(static_cast<std::size_t>(i) % 3);
    }
    PseudoPool pool = pool_with_confidences(confs, hards, 3);
    Rng rng(6);
    BalanceResult r = balance(pool, 10, rng);
    EXPECT_EQ(r.pool.distinct_count(), r.pool.size());
    EXPECT_EQ(r.pool.size(), 30u);
}

TEST(Buckets, DecilesPartitionPoolAndBoundaryGoesUp) {
    Rng gen(31);
    std::vector<double> confs = {0.1};  // exact boundary: belongs to [0.1, 0.2)
    std::vector<std::size_t> hards = {0};
    for (int i = 0; i < 400; ++i) {
        confs.push_back(gen.uniform());
        hards.push_back(0);
    }
    PseudoPool pool = pool_with_confidences(confs, hards, 2);
    auto buckets = bucket_by_confidence(pool, decile_intervals());
    ASSERT_EQ(buckets.size(), 10u);

    std::size_t total = 0;
    std::vector<std::size_t> brute(10, 0);
    for (double v : confs) {
        auto b = std::min<std::size_t>(static_cast<std::size_t>(v * 10.0), 9);
        ++brute[b];
    }
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(buckets[i].size(), brute[i]);
        total += buckets[i].size();
    }
    EXPECT_EQ(total, pool.size());

    bool boundary_found = false;
    for (const auto& e : buckets[1].examples)
        if (e.confidence == 0.1) boundary_found = true;
    EXPECT_TRUE(boundary_found);
}

TEST(Buckets, OverlapRejected) {
    PseudoPool pool = pool_with_confidences({0.5}, {0}, 2);
    EXPECT_THROW(bucket_by_confidence(pool, {{0.0, 0.5}, {0.4, 1.0}}), ConfigError);
}

TEST(Persistence, PoolRoundTrip) {
    Rng gen(51);
    std::vector<double> confs;
    std::vector<std::size_t> hards;
    for (int i = 0; i < 25; ++i) {
        confs.push_back(gen.uniform());
        hards.push_back(gen.below(4));
    }
    PseudoPool pool = pool_with_confidences(confs, hards, 4);
    PoolMeta meta{"abc123", 0.3, 130000, 42};
    const std::string path = ::testing::TempDir() + "/pool.bin";
    save_pool(pool, meta, path);
    auto [loaded, lmeta] = load_pool(path);
    EXPECT_EQ(lmeta.teacher_hash, "abc123");
    EXPECT_DOUBLE_EQ(lmeta.tau, 0.3);
    EXPECT_EQ(lmeta.cap, 130000u);
    EXPECT_EQ(lmeta.seed, 42u);
    ASSERT_EQ(loaded.size(), pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        EXPECT_EQ(loaded.examples[i].image.data, pool.examples[i].image.data);
        EXPECT_EQ(loaded.examples[i].soft, pool.examples[i].soft);
        EXPECT_EQ(loaded.examples[i].hard, pool.examples[i].hard);
        EXPECT_EQ(loaded.examples[i].source_index, pool.examples[i].source_index);
        EXPECT_DOUBLE_EQ(loaded.examples[i].confidence, pool.examples[i].confidence);
    }
    EXPECT_EQ(pool_hash(loaded), pool_hash(pool));
}

TEST(PseudoGen, NoisedTeacherDiffersFromCleanAndIsDeterministic) {
    Model teacher = make_model("mlp-S", {4, 4, 1}, 3, 77);
    DatasetStore u = tiny_unlabeled(8, {4, 4, 1}, 3);

    PseudoGenOptions noised;
    noised.noised_teacher = true;
    noised.teacher_noise = NoiseConfig{};  // aug + dropout on
    noised.noise_seed = 5;

    PseudoPool clean = generate_pseudo_labels(teacher, u);
    PseudoPool n1 = generate_pseudo_labels(teacher, u, noised);
    PseudoPool n2 = generate_pseudo_labels(teacher, u, noised);

    bool any_diff = false;
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (clean.examples[i].soft != n1.examples[i].soft) any_diff = true;
        EXPECT_EQ(n1.examples[i].soft, n2.examples[i].soft);
    }
    EXPECT_TRUE(any_diff);
}
