#include <gtest/gtest.h>

#include <cmath>

#include "nst/checkpoint.hpp"
#include "nst/loss.hpp"
#include "nst/nn.hpp"
#include "nst/optim.hpp"

#include "fd_check.hpp"

using namespace nst;

namespace {

Model custom_model(std::vector<LayerSpec> layers, ImageShape input, std::size_t k,
                   std::uint64_t seed) {
    Model m;
    m.arch_id = "mlp-S";  // tag only; layout is the custom stack below
    m.input = input;
    m.class_count = k;
    m.layers = std::move(layers);
    init_params(m, seed);
    return m;
}

}  // namespace

TEST(Forward, ZeroWeightModelGivesZeroLogits) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 7);
    m.zero_params();
    Rng rng(1);
    Tensor batch({2, 16});
    for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform();
    auto [logits, trace] = forward(m, batch, NoiseConfig::clean(), Mode::Infer, rng);
    for (double v : logits.data) EXPECT_EQ(v, 0.0);
}

TEST(Forward, TrainModeDeterministicGivenSeed) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 7);
    NoiseConfig noise;  // dropout enabled
    Tensor batch({3, 16});
    Rng data_rng(9);
    for (double& v : batch.data) v = data_rng.uniform();

    Rng r1(42), r2(42);
    auto [l1, t1] = forward(m, batch, noise, Mode::Train, r1);
    auto [l2, t2] = forward(m, batch, noise, Mode::Train, r2);
    EXPECT_EQ(l1.data, l2.data);
}

TEST(Forward, InferIndependentOfRngState) {
    Model m = make_model("resnetlite-2", {6, 6, 1}, 3, 11);
    NoiseConfig noise;
    Tensor batch({2, 36});
    Rng data_rng(5);
    for (double& v : batch.data) v = data_rng.uniform();

    Rng r1(1), r2(999);
    auto [l1, t1] = forward(m, batch, noise, Mode::Infer, r1);
    auto [l2, t2] = forward(m, batch, noise, Mode::Infer, r2);
    EXPECT_EQ(l1.data, l2.data);
    EXPECT_EQ(r1.state(), Rng(1).state());  // infer draws nothing
}

TEST(Forward, SingleDenseLayerMatchesHandMatrixMultiply) {
    // One softmax-head layer: logits = x W + b, checked against an
    // independently coded matrix multiply.
    Model m = custom_model({{LayerKind::SoftmaxHead, 2, Activation::None}}, {1, 1, 3}, 2, 0);
    m.params[0].t[0] = Tensor({3, 2}, {0.5, -1.0, 2.0, 0.25, -0.75, 1.5});
    m.params[0].t[1] = Tensor({2}, {0.1, -0.2});

    Tensor batch({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.5, 0.0});
    Rng rng(0);
    auto [logits, trace] = forward(m, batch, NoiseConfig::clean(), Mode::Infer, rng);

    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double expect = m.params[0].t[1][j];
            for (std::size_t kk = 0; kk < 3; ++kk)
                expect += batch.at2(i, kk) * m.params[0].t[0].at2(kk, j);
            EXPECT_DOUBLE_EQ(logits.at2(i, j), expect);
        }
}

TEST(Forward, ShapeMismatchThrows) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 7);
    Tensor batch({2, 15});
    Rng rng(0);
    EXPECT_THROW(forward(m, batch, NoiseConfig::clean(), Mode::Infer, rng), ShapeError);
}

TEST(Forward, NonFiniteActivationThrowsNumericError) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 7);
    m.params[0].t[0][0] = std::numeric_limits<double>::infinity();
    Tensor batch({1, 16});
    batch[0] = 1.0;
    Rng rng(0);
    try {
        forward(m, batch, NoiseConfig::clean(), Mode::Infer, rng);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.layer_index, 0);
    }
}

TEST(Softmax, UniformAndExtremeAndReference) {
    Tensor z({1, 4}, {0, 0, 0, 0});
    Tensor p = softmax(z);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(p[j], 0.25);

    Tensor big({1, 2}, {1000.0, 0.0});
    Tensor pb = softmax(big);
    EXPECT_NEAR(pb[0], 1.0, 1e-12);
    EXPECT_NEAR(pb[1], 0.0, 1e-12);
    EXPECT_TRUE(pb.all_finite());

    // Direct e^{x-max}/sum reference.
    Tensor t({1, 3}, {1.0, 2.0, 3.0});
    Tensor pt = softmax(t);
    double e0 = std::exp(1.0 - 3.0), e1 = std::exp(2.0 - 3.0), e2 = std::exp(0.0);
    double s = e0 + e1 + e2;
    EXPECT_NEAR(pt[0], e0 / s, 1e-12);
    EXPECT_NEAR(pt[1], e1 / s, 1e-12);
    EXPECT_NEAR(pt[2], e2 / s, 1e-12);
}

TEST(Softmax, RowsSumToOneUnderExtremeLogits) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor z({4, 6});
        for (double& v : z.data) v = rng.uniform(-1000.0, 1000.0);
        Tensor p = softmax(z);
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) sum += p.at2(i, j);
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(CrossEntropy, UniformPerfectAndHandValue) {
    Tensor u({1, 4}, {0.25, 0.25, 0.25, 0.25});
    EXPECT_NEAR(cross_entropy(u, u), std::log(4.0), 1e-12);

    Tensor onehot({1, 3}, {0.0, 1.0, 0.0});
    EXPECT_DOUBLE_EQ(cross_entropy(onehot, onehot), 0.0);

    Tensor probs({1, 2}, {0.6, 0.4});
    Tensor target({1, 2}, {0.3, 0.7});
    const double expect = -(0.3 * std::log(0.6) + 0.7 * std::log(0.4));
    EXPECT_NEAR(cross_entropy(probs, target), expect, 1e-12);
}

TEST(CrossEntropy, RowSumViolationThrows) {
    Tensor probs({1, 2}, {0.6, 0.6});
    Tensor target({1, 2}, {0.5, 0.5});
    EXPECT_THROW(cross_entropy(probs, target), DistributionError);
    EXPECT_THROW(cross_entropy(target, probs), DistributionError);
}

TEST(CrossEntropy, MinimizedAtTarget) {
    Rng rng(17);
    const std::size_t k = 5;
    Tensor target = nst::testing::random_distribution_rows(1, k, rng);
    const double base = cross_entropy(target, target);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor p = nst::testing::random_distribution_rows(1, k, rng);
        EXPECT_GE(cross_entropy(p, target), base - 1e-12);
    }
}

TEST(Backward, FiniteDifferenceMlpWithNoise) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(derive_seed(1000, seed));
        Model m = make_model("mlp-S", {4, 4, 1}, 3, derive_seed(7, seed));
        Tensor batch = nst::testing::random_batch(2, m.input, rng);
        Tensor target = nst::testing::random_distribution_rows(2, 3, rng);
        NoiseConfig noise;
        noise.dropout_rate = 0.3;
        auto rep = nst::testing::check_gradients(m, batch, target, noise, Mode::Train,
                                                 derive_seed(99, seed));
        EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst_location;
    }
}

TEST(Backward, FiniteDifferenceResnetliteTrainAndInfer) {
    Rng rng(2024);
    Model m = make_model("resnetlite-2", {5, 5, 1}, 3, 31);
    Tensor batch = nst::testing::random_batch(2, m.input, rng);
    Tensor target = nst::testing::random_distribution_rows(2, 3, rng);
    NoiseConfig noise;
    noise.dropout_rate = 0.25;
    noise.sd_final_survival = 0.6;

    auto train_rep =
        nst::testing::check_gradients(m, batch, target, noise, Mode::Train, 555);
    EXPECT_LT(train_rep.max_rel_err, 1e-4) << train_rep.worst_location;

    auto infer_rep =
        nst::testing::check_gradients(m, batch, target, noise, Mode::Infer, 555);
    EXPECT_LT(infer_rep.max_rel_err, 1e-4) << infer_rep.worst_location;
}

TEST(Backward, ZeroUpstreamGradientGivesZeroGrads) {
    Model m = make_model("mlp-L", {4, 4, 1}, 3, 7);
    Tensor batch({2, 16});
    Rng rng(1);
    for (double& v : batch.data) v = rng.uniform();
    auto [logits, trace] = forward(m, batch, NoiseConfig::clean(), Mode::Infer, rng);
    Tensor zero({2, 3});
    Grads g = backward(m, trace, zero);
    for (const auto& lp : g.layers)
        for (const auto& t : lp.t)
            for (double v : t.data) EXPECT_EQ(v, 0.0);
    for (double v : g.d_input.data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, DroppedUnitBlocksGradient) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 7);
    NoiseConfig noise;
    noise.dropout_rate = 0.5;
    Tensor batch({1, 16});
    Rng data_rng(3);
    for (double& v : batch.data) v = data_rng.uniform(0.1, 1.0);

    Rng rng(77);
    auto [logits, trace] = forward(m, batch, noise, Mode::Train, rng);
    const Tensor& mask = trace.layers[1].dropout_mask;
    ASSERT_EQ(mask.numel(), 64u);

    Tensor d_logits({1, 3}, {0.3, -0.2, 0.5});
    Grads g = backward(m, trace, d_logits);
    std::size_t dropped = 0;
    for (std::size_t j = 0; j < 64; ++j) {
        if (mask[j] != 0.0) continue;
        ++dropped;
        for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(g.layers[0].t[0].at2(i, j), 0.0);
        EXPECT_EQ(g.layers[0].t[1][j], 0.0);
    }
    EXPECT_GT(dropped, 0u);
}

TEST(Backward, TraceModelMismatchThrows) {
    Model a = make_model("mlp-S", {4, 4, 1}, 3, 7);
    Model b = make_model("mlp-L", {4, 4, 1}, 3, 7);
    Tensor batch({1, 16});
    Rng rng(1);
    auto [logits, trace] = forward(a, batch, NoiseConfig::clean(), Mode::Infer, rng);
    Tensor d({1, 3});
    EXPECT_THROW(backward(b, trace, d), ShapeError);
}

TEST(Sgd, ZeroLrLeavesParamsUnchanged) {
    Model m = make_model("mlp-S", {2, 2, 1}, 2, 5);
    Model before = m;
    MomentumState mom = MomentumState::zeros_like(m);
    Grads g = Grads::zeros_like(m);
    for (auto& lp : g.layers)
        for (auto& t : lp.t) t.fill(3.5);
    sgd_step(m, g, 0.0, mom);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (std::size_t j = 0; j < m.params[i].t.size(); ++j)
            EXPECT_EQ(m.params[i].t[j].data, before.params[i].t[j].data);
}

TEST(Sgd, MomentumZeroIsPlainSgd) {
    Model m = make_model("mlp-S", {2, 2, 1}, 2, 5);
    Model before = m;
    MomentumState mom = MomentumState::zeros_like(m);
    Grads g = Grads::zeros_like(m);
    for (auto& lp : g.layers)
        for (auto& t : lp.t) t.fill(2.0);
    sgd_step(m, g, 0.1, mom, 0.0);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (std::size_t j = 0; j < m.params[i].t.size(); ++j)
            for (std::size_t k = 0; k < m.params[i].t[j].numel(); ++k)
                EXPECT_DOUBLE_EQ(m.params[i].t[j][k], before.params[i].t[j][k] - 0.1 * 2.0);
}

TEST(Sgd, TwoStepsMatchHandUnrolledNesterovRecursion) {
    // v <- mu v + g; theta <- theta - lr (g + mu v)
    Model m = custom_model({{LayerKind::SoftmaxHead, 1, Activation::None}}, {1, 1, 1}, 1, 0);
    m.params[0].t[0] = Tensor({1, 1}, {1.0});
    m.params[0].t[1] = Tensor({1}, {0.0});
    MomentumState mom = MomentumState::zeros_like(m);

    const double lr = 0.1, mu = 0.9, g1 = 0.5, g2 = -0.25;
    Grads gr = Grads::zeros_like(m);

    gr.layers[0].t[0][0] = g1;
    sgd_step(m, gr, lr, mom, mu);
    double v = mu * 0.0 + g1;
    double theta = 1.0 - lr * (g1 + mu * v);
    EXPECT_DOUBLE_EQ(m.params[0].t[0][0], theta);

    gr.layers[0].t[0][0] = g2;
    sgd_step(m, gr, lr, mom, mu);
    v = mu * v + g2;
    theta = theta - lr * (g2 + mu * v);
    EXPECT_DOUBLE_EQ(m.params[0].t[0][0], theta);
}

TEST(Sgd, NonFiniteGradientAbortsWithLayerIndex) {
    Model m = make_model("mlp-S", {2, 2, 1}, 2, 5);
    Model before = m;
    MomentumState mom = MomentumState::zeros_like(m);
    Grads g = Grads::zeros_like(m);
    g.layers[2].t[0][0] = std::nan("");
    try {
        sgd_step(m, g, 0.1, mom);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.layer_index, 2);
    }
    for (std::size_t i = 0; i < m.params.size(); ++i)
        for (std::size_t j = 0; j < m.params[i].t.size(); ++j)
            EXPECT_EQ(m.params[i].t[j].data, before.params[i].t[j].data);
}

TEST(StochasticDepth, LinearDecaySurvival) {
    EXPECT_DOUBLE_EQ(sd_survival(4, 4, 0.8), 0.8);   // final layer
    EXPECT_DOUBLE_EQ(sd_survival(0, 4, 0.8), 1.0);   // l -> 0 limit
    EXPECT_DOUBLE_EQ(sd_survival(2, 4, 0.8), 0.9);   // 1 - (2/4)(0.2)
}

TEST(StochasticDepth, TrainGateFrequencyMatchesSurvival) {
    Rng rng(8);
    int kept = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        kept += stochastic_depth_gate(4, 4, 0.8, rng, Mode::Train).kept ? 1 : 0;
    EXPECT_NEAR(static_cast<double>(kept) / n, 0.8, 0.01);
}

TEST(StochasticDepth, InferEqualsExpectedGateOnLinearBlock) {
    // Non-negative weights keep the branch relu in its linear region, so
    // infer output must equal x + p_l * branch(x) exactly.
    Model m = custom_model({{LayerKind::ResidualBlock, 2, Activation::None},
                            {LayerKind::GlobalPool, 0, Activation::None},
                            {LayerKind::SoftmaxHead, 2, Activation::None}},
                           {3, 3, 2}, 2, 3);
    Rng wr(12);
    for (auto& t : m.params[0].t)
        for (double& v : t.data) v = wr.uniform(0.0, 0.4);

    Tensor batch({1, 3, 3, 2});
    for (double& v : batch.data) v = wr.uniform(0.0, 1.0);

    NoiseConfig sd_on = NoiseConfig::clean();
    sd_on.enable_sd = true;
    sd_on.sd_final_survival = 0.8;

    Rng r1(0), r2(0), r3(0);
    auto [infer_logits, t1] = forward(m, batch, sd_on, Mode::Infer, r1);
    auto [clean_logits, t2] = forward(m, batch, NoiseConfig::clean(), Mode::Infer, r2);

    Model zero_branch = m;
    zero_branch.params[0].t[2].fill(0.0);
    zero_branch.params[0].t[3].fill(0.0);
    auto [x_logits, t3] = forward(zero_branch, batch, NoiseConfig::clean(), Mode::Infer, r3);

    // After the affine pool+head, infer = x_only + p * (clean - x_only).
    const double p = sd_survival(1, 1, 0.8);
    for (std::size_t j = 0; j < infer_logits.numel(); ++j)
        EXPECT_NEAR(infer_logits[j], x_logits[j] + p * (clean_logits[j] - x_logits[j]), 1e-9);
}

TEST(DropoutMask, RateZeroAllOnes) {
    Rng rng(1);
    Tensor mask = dropout_mask({10, 10}, 0.0, rng);
    for (double v : mask.data) EXPECT_EQ(v, 1.0);
}

TEST(DropoutMask, StatisticalKeepFractionAndScaling) {
    Rng rng(123);
    Tensor mask = dropout_mask({1000, 1000}, 0.5, rng);
    std::size_t kept = 0;
    double sum = 0.0;
    for (double v : mask.data) {
        if (v != 0.0) {
            EXPECT_DOUBLE_EQ(v, 2.0);
            ++kept;
        }
        sum += v;
    }
    const double frac = static_cast<double>(kept) / static_cast<double>(mask.numel());
    EXPECT_NEAR(frac, 0.5, 0.01);
    // Inverted scaling keeps the expectation at 1.
    EXPECT_NEAR(sum / static_cast<double>(mask.numel()), 1.0, 0.01);
}

TEST(DropoutMask, SameSeedSameMask) {
    Rng r1(9), r2(9);
    Tensor m1 = dropout_mask({64}, 0.5, r1);
    Tensor m2 = dropout_mask({64}, 0.5, r2);
    EXPECT_EQ(m1.data, m2.data);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
    Model m = make_model("resnetlite-1", {6, 6, 1}, 4, 99);
    m.train_step = 1234;
    const std::string path = ::testing::TempDir() + "/model.ckpt";
    save_model(m, path);
    Model r = load_model(path);
    EXPECT_EQ(r.arch_id, m.arch_id);
    EXPECT_EQ(r.class_count, m.class_count);
    EXPECT_EQ(r.train_step, m.train_step);
    EXPECT_EQ(r.rng_state, m.rng_state);
    ASSERT_EQ(r.params.size(), m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        ASSERT_EQ(r.params[i].t.size(), m.params[i].t.size());
        for (std::size_t j = 0; j < m.params[i].t.size(); ++j)
            EXPECT_EQ(r.params[i].t[j].data, m.params[i].t[j].data);
    }
    EXPECT_EQ(model_hash(r), model_hash(m));
}

TEST(Checkpoint, TruncatedFileThrowsParseError) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 1);
    const std::string path = ::testing::TempDir() + "/trunc.ckpt";
    save_model(m, path);
    // Chop off the tail of the parameter blocks.
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    EXPECT_THROW(load_model(path), ParseError);
}

TEST(Arch, EqualOrLargerOrder) {
    EXPECT_LT(arch_compare("mlp-S", "mlp-L"), 0);
    EXPECT_LT(arch_compare("mlp-L", "resnetlite-1"), 0);
    EXPECT_LT(arch_compare("resnetlite-1", "resnetlite-3"), 0);
    EXPECT_EQ(arch_compare("mlp-L", "mlp-L"), 0);
    EXPECT_GT(arch_compare("resnetlite-2", "mlp-S"), 0);
    EXPECT_THROW(arch_rank("mlp-XL"), ConfigError);
}

TEST(Arch, DropoutPlacementEnforced) {
    Model m = make_model("mlp-S", {4, 4, 1}, 3, 7);
    // Move the dropout away from the head: now invalid.
    std::swap(m.layers[0], m.layers[1]);
    std::swap(m.params[0], m.params[1]);
    EXPECT_THROW(validate_model(m), ConfigError);
}
