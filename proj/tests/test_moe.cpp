#include "oracles/dense_moe.hpp"

#include <smoe/moe.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace smoe;

namespace {

MoELayer<double> random_layer(Rng& rng, std::size_t in, std::size_t out, std::size_t n, std::size_t k, Mode mode = Mode::Inference)
{
    auto layer = MoELayer<double>::create(in, out, n, k, rng, mode);
    fill_standard_normal(rng, layer.w_gate.values());
    fill_standard_normal(rng, layer.w_noise.values());
    return layer;
}

Batch<double> random_batch(Rng& rng, std::size_t b, std::size_t d)
{
    Batch<double> x(b, d);
    fill_standard_normal(rng, x.values());
    return x;
}

} // namespace

TEST(MoELayer, FreshLayerHasZeroGatingAndBoundedExperts)
{
    Rng rng(1);
    auto layer = MoELayer<double>::create(8, 3, 5, 2, rng);
    for (double v : layer.w_gate.values())
        EXPECT_EQ(v, 0.0);
    for (double v : layer.w_noise.values())
        EXPECT_EQ(v, 0.0);
    ASSERT_EQ(layer.experts.size(), 5u);
    const double bound = std::sqrt(1.0 / 8.0);
    bool any_nonzero = false;
    for (const auto& e : layer.experts) {
        EXPECT_EQ(e.rows(), 8u);
        EXPECT_EQ(e.cols(), 3u);
        for (double v : e.values()) {
            EXPECT_LE(std::abs(v), bound);
            any_nonzero |= v != 0.0;
        }
    }
    EXPECT_TRUE(any_nonzero);
    EXPECT_NE(layer.experts[0], layer.experts[1]);
}

TEST(MoELayer, CreateRejectsBadK)
{
    Rng rng(1);
    EXPECT_THROW(MoELayer<double>::create(4, 4, 3, 4, rng), Error);
    EXPECT_THROW(MoELayer<double>::create(4, 4, 3, 0, rng), Error);
}

TEST(Gate, ZeroInitUniformWhenKEqualsN)
{
    Rng rng(2);
    auto layer = MoELayer<double>::create(6, 2, 4, 4, rng);
    auto x = random_batch(rng, 3, 6);
    const auto g = gate(layer, x);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < 4; ++i)
            EXPECT_DOUBLE_EQ(g.gates(b, i), 0.25);
}

TEST(Gate, KeepTopTwoOfFour)
{
    Rng rng(3);
    auto layer = MoELayer<double>::create(1, 1, 4, 2, rng);
    layer.w_gate = Matrix<double>(1, 4, {2, 1, 0, -1});
    const auto g = gate(layer, Batch<double>(1, 1, {1.0}));
    EXPECT_NEAR(g.gates(0, 0), std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)), 1e-15);
    EXPECT_NEAR(g.gates(0, 0), 0.7311, 1e-4);
    EXPECT_NEAR(g.gates(0, 1), 0.2689, 1e-4);
    EXPECT_EQ(g.gates(0, 2), 0.0);
    EXPECT_EQ(g.gates(0, 3), 0.0);
    EXPECT_EQ(g.active_indices(0)[0], 0u);
    EXPECT_EQ(g.active_indices(0)[1], 1u);
    EXPECT_EQ(g.logits(0, 3), -1.0);
}

TEST(Gate, KEqualsNIsPlainSoftmax)
{
    Rng rng(4);
    auto layer = random_layer(rng, 5, 2, 6, 6);
    auto x = random_batch(rng, 4, 5);
    const auto g = gate(layer, x);
    const auto z = matmul(x, layer.w_gate);
    for (std::size_t b = 0; b < 4; ++b) {
        const auto p = softmax(z.row(b));
        for (std::size_t i = 0; i < 6; ++i)
            EXPECT_NEAR(g.gates(b, i), p[i], 1e-12);
    }
}

TEST(Gate, TiesGoToLowestIndex)
{
    Rng rng(5);
    auto layer = MoELayer<double>::create(3, 2, 8, 3, rng); // all logits zero
    const auto g = gate(layer, random_batch(rng, 2, 3));
    for (std::size_t b = 0; b < 2; ++b) {
        const auto idx = g.active_indices(b);
        EXPECT_EQ(std::vector<std::uint32_t>(idx.begin(), idx.end()), (std::vector<std::uint32_t>{0, 1, 2}));
        EXPECT_NEAR(g.gates(b, 0), 1.0 / 3.0, 1e-15);
        EXPECT_EQ(g.gates(b, 7), 0.0);
    }
}

TEST(Gate, TrainModeNeedsRng)
{
    Rng rng(6);
    auto layer = random_layer(rng, 3, 2, 4, 2, Mode::Train);
    auto x = random_batch(rng, 2, 3);
    EXPECT_THROW(gate(layer, x, nullptr), Error);
    EXPECT_NO_THROW(gate(layer, x, &rng));
}

TEST(Gate, KGreaterThanNAtCallTimeThrows)
{
    Rng rng(7);
    auto layer = random_layer(rng, 3, 2, 4, 2);
    layer.k = 5;
    EXPECT_THROW(gate(layer, random_batch(rng, 1, 3)), Error);
}

TEST(Gate, WrongInputDimThrows)
{
    Rng rng(7);
    auto layer = random_layer(rng, 3, 2, 4, 2);
    EXPECT_THROW(forward(layer, random_batch(rng, 1, 4)), Error);
}

TEST(Gate, TrainNoiseUsesSoftmaxOfNoiseLogits)
{
    Rng rng(8);
    auto layer = random_layer(rng, 4, 2, 5, 5, Mode::Train);
    auto x = random_batch(rng, 3, 4);
    Batch<double> eps(3, 5);
    fill_standard_normal(rng, eps.values());
    const auto g = gate_with_noise(layer, x, &eps);
    for (std::size_t b = 0; b < 3; ++b) {
        std::vector<double> xb(x.row(b).begin(), x.row(b).end());
        std::vector<double> eb(eps.row(b).begin(), eps.row(b).end());
        const auto h = oracle::dense_logits(layer, xb, &eb);
        for (std::size_t i = 0; i < 5; ++i)
            EXPECT_NEAR(g.logits(b, i), h[i], 1e-12);
    }
}

TEST(Gate, SparsityAndNormalization)
{
    Rng rng(9);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.next_u32() % 16;
        const std::size_t k = 1 + rng.next_u32() % n;
        auto layer = random_layer(rng, 1 + rng.next_u32() % 8, 2, n, k, trial % 2 ? Mode::Train : Mode::Inference);
        auto x = random_batch(rng, 1 + rng.next_u32() % 5, layer.in_dim);
        const auto g = gate(layer, x, &rng);
        for (std::size_t b = 0; b < x.batch_size(); ++b) {
            std::size_t nz = 0;
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nz += g.gates(b, i) > 0.0;
                sum += g.gates(b, i);
            }
            EXPECT_EQ(nz, k);
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(Gate, ShiftInvariance)
{
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        auto layer = random_layer(rng, 4, 2, 8, 3);
        auto x = random_batch(rng, 3, 4);
        const auto g = gate(layer, x);
        Batch<double> shifted = g.logits;
        const double c = rng.uniform(-20, 20);
        for (auto& v : shifted.values())
            v += c;
        const auto g2 = detail::gates_from_logits(shifted, layer.k);
        for (std::size_t i = 0; i < g.gates.size(); ++i)
            EXPECT_NEAR(g.gates.values()[i], g2.gates.values()[i], 1e-9);
    }
}

TEST(Forward, SingleIdentityExpertIsIdentity)
{
    Rng rng(11);
    auto layer = MoELayer<double>::create(4, 4, 1, 1, rng);
    layer.experts[0] = Matrix<double>::identity(4);
    auto x = random_batch(rng, 5, 4);
    EXPECT_EQ(forward(layer, x).y, x);
}

TEST(Forward, MatchesDenseOracle)
{
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.next_u32() % 10;
        const std::size_t k = 1 + rng.next_u32() % n;
        auto layer = random_layer(rng, 1 + rng.next_u32() % 9, 1 + rng.next_u32() % 6, n, k);
        auto x = random_batch(rng, 1 + rng.next_u32() % 4, layer.in_dim);
        const auto y = forward(layer, x).y;
        for (std::size_t b = 0; b < x.batch_size(); ++b) {
            const auto ref = oracle::dense_forward(layer, std::vector<double>(x.row(b).begin(), x.row(b).end()));
            for (std::size_t c = 0; c < layer.out_dim; ++c)
                EXPECT_NEAR(y(b, c), ref[c], 1e-10 * std::max(1.0, std::abs(ref[c])));
        }
    }
}

TEST(Forward, InferenceIsDeterministic)
{
    Rng rng(13);
    auto layer = random_layer(rng, 6, 3, 8, 2);
    auto x = random_batch(rng, 10, 6);
    Rng other(99);
    EXPECT_EQ(forward(layer, x).y, forward(layer, x, &other).y);
}

TEST(Forward, FloatPathAgreesWithDouble)
{
    Rng rng(14);
    auto layer = random_layer(rng, 32, 16, 16, 4);
    auto x = random_batch(rng, 64, 32);
    MoELayer<float> lf{layer.n, layer.k, layer.in_dim, layer.out_dim, cast<float>(layer.w_gate), cast<float>(layer.w_noise), {}, Mode::Inference};
    for (const auto& e : layer.experts)
        lf.experts.push_back(cast<float>(e));
    const auto yd = forward(layer, x).y;
    const auto yf = forward(lf, cast<float>(x)).y;
    for (std::size_t i = 0; i < yd.size(); ++i)
        EXPECT_NEAR(yf.values()[i], yd.values()[i], 1e-4 * std::max(1.0, std::abs(yd.values()[i])));
}

TEST(Importance, Examples)
{
    Batch<double> uniform(4, 4, 0.25);
    EXPECT_EQ(importance(uniform), (std::vector<double>{1, 1, 1, 1}));
    EXPECT_EQ(importance(Batch<double>(2, 2, {1, 0, 1, 0})), (std::vector<double>{2, 0}));
    const auto imp = importance(Batch<double>(2, 4, {0.7311, 0.2689, 0, 0, 0.2689, 0.7311, 0, 0}));
    EXPECT_NEAR(imp[0], 1.0, 1e-12);
    EXPECT_NEAR(imp[1], 1.0, 1e-12);
    EXPECT_EQ(imp[2], 0.0);
    EXPECT_EQ(imp[3], 0.0);
}

TEST(Importance, SumsToBatchSize)
{
    Rng rng(15);
    auto layer = random_layer(rng, 5, 2, 12, 4);
    auto x = random_batch(rng, 37, 5);
    const auto imp = importance(gate(layer, x).gates);
    double s = 0.0;
    for (double v : imp) {
        EXPECT_GE(v, 0.0);
        s += v;
    }
    EXPECT_NEAR(s, 37.0, 1e-6);
}

TEST(LoadBalance, Examples)
{
    auto r0 = load_balance_from_importance({1, 1, 1, 1}, 0.1);
    EXPECT_EQ(r0.loss, 0.0);
    auto r1 = load_balance_from_importance({2, 0, 0, 0}, 0.1);
    EXPECT_NEAR(r1.cv * r1.cv, 3.0, 1e-12);
    EXPECT_NEAR(r1.loss, 0.3, 1e-9);
    EXPECT_EQ(r1.loss, r1.w_importance * (r1.cv * r1.cv));
    auto r2 = load_balance_from_importance({1, 2}, 0.0);
    EXPECT_EQ(r2.loss, 0.0);
    EXPECT_EQ(load_balance_from_importance({5.0}, 0.1).loss, 0.0);
}

TEST(LoadBalance, ZeroMeanThrows)
{
    EXPECT_THROW(load_balance_from_importance({0, 0, 0}, 0.1), Error);
    EXPECT_THROW(load_balance_loss(Batch<double>(0, 4), 0.1), Error);
}

TEST(LoadBalance, FromGates)
{
    const auto r = load_balance_loss(Batch<double>(2, 2, {1, 0, 1, 0}), 0.1);
    // importance [2, 0]: mean 1, population std 1
    EXPECT_NEAR(r.cv, 1.0, 1e-15);
    EXPECT_NEAR(r.loss, 0.1, 1e-15);
}
