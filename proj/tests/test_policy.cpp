#include "oracles/dense_moe.hpp"

#include <smoe/policy.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace smoe;

namespace {

std::vector<std::size_t> chain(const PolicyNetwork<float>& net)
{
    std::vector<std::size_t> dims{net.spec.input_dim};
    for (const auto& l : net.layers)
        dims.push_back(std::visit([](const auto& layer) -> std::size_t {
            if constexpr (requires { layer.out_dim; })
                return layer.out_dim;
            else
                return layer.out_dim();
        }, l));
    return dims;
}

} // namespace

TEST(Observation, LayoutSumsTo591)
{
    std::size_t offset = 0;
    for (const auto& s : layout::kTopLevel) {
        EXPECT_EQ(s.offset, offset) << s.name;
        offset += s.length;
    }
    EXPECT_EQ(offset, 591u);
    EXPECT_EQ(layout::kProprio.length, 48u);
    EXPECT_EQ(layout::kHistory.length, 480u);
    EXPECT_EQ(layout::kPerception.length, 32u);
    EXPECT_EQ(layout::kHeading.length, 2u);
    EXPECT_EQ(layout::kPhysLatent.length, 20u);
    EXPECT_EQ(layout::kRobotInfo.length, 9u);
}

TEST(Observation, AllZeroPartsGiveZeroVector)
{
    const auto obs = assemble_observation(ObservationParts<double>{});
    ASSERT_EQ(obs.size(), 591u);
    EXPECT_TRUE(std::all_of(obs.begin(), obs.end(), [](double v) { return v == 0.0; }));
}

TEST(Observation, CommandIsPaddedToThree)
{
    ObservationParts<double> p;
    p.command_vx = 0.5;
    std::fill(p.robot_velocity.begin(), p.robot_velocity.end(), 7.0);
    const auto obs = assemble_observation(p);
    EXPECT_EQ(obs[5], 0.5);
    EXPECT_EQ(obs[6], 0.0);
    EXPECT_EQ(obs[7], 0.0);
    for (std::size_t i = 582; i < 585; ++i)
        EXPECT_EQ(obs[i], 7.0);
    for (std::size_t i = 585; i < 591; ++i)
        EXPECT_EQ(obs[i], 0.0);
}

TEST(Observation, HistoryOfTenFramesFills480)
{
    std::vector<std::vector<double>> frames;
    for (int f = 0; f < 10; ++f)
        frames.emplace_back(48, static_cast<double>(f + 1));
    ObservationParts<double> p;
    p.history = stack_history<double>(frames);
    EXPECT_EQ(p.history.size(), 480u);
    const auto obs = assemble_observation(p);
    for (std::size_t i = 0; i < 480; ++i)
        EXPECT_EQ(obs[48 + i], static_cast<double>(i / 48 + 1));
    frames.pop_back();
    EXPECT_THROW(stack_history<double>(frames), Error);
}

TEST(Observation, LengthMismatchNamesSpan)
{
    ObservationParts<double> p;
    p.phys_latent.resize(19);
    try {
        assemble_observation(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("phys_latent"), std::string::npos);
        EXPECT_EQ(e.kind(), ErrorKind::Dimension);
    }
}

TEST(Observation, RandomPartsLandInTheirSpans)
{
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        ObservationParts<double> p;
        for (auto* v : {&p.ang_vel, &p.roll_pitch, &p.joint_pos, &p.joint_vel, &p.last_action, &p.foot_contact, &p.history,
                        &p.perception_latent, &p.heading, &p.phys_latent, &p.robot_velocity})
            fill_standard_normal(rng, std::span<double>(*v));
        p.command_vx = rng.uniform(0.3, 0.8);
        const auto obs = assemble_observation(p);
        ASSERT_EQ(obs.size(), 591u);
        EXPECT_TRUE(std::equal(p.heading.begin(), p.heading.end(), obs.begin() + 560));
        EXPECT_TRUE(std::equal(p.phys_latent.begin(), p.phys_latent.end(), obs.begin() + 562));
        EXPECT_TRUE(std::equal(p.foot_contact.begin(), p.foot_contact.end(), obs.begin() + 44));
        EXPECT_EQ(obs[5], p.command_vx);
    }
}

TEST(BuildActor, DenseSmallChain)
{
    Rng rng(1);
    const auto net = build_actor<float>(presets::dense_small(), rng);
    EXPECT_EQ(chain(net), (std::vector<std::size_t>{591, 256, 128, 64, 12}));
}

TEST(BuildActor, MoeDefaultChain)
{
    Rng rng(1);
    const auto net = build_actor<float>(presets::moe_default(), rng);
    EXPECT_EQ(chain(net), (std::vector<std::size_t>{591, 512, 256, 256, 12}));
    const auto& moe = net.moe();
    EXPECT_EQ(moe.n, 16u);
    EXPECT_EQ(moe.k, 4u);
    EXPECT_EQ(moe.in_dim, 512u);
    EXPECT_EQ(moe.out_dim, 256u);
    EXPECT_EQ(net.spec.w_importance, 0.1);
}

TEST(BuildActor, RejectsNonPositiveDims)
{
    Rng rng(1);
    EXPECT_THROW(build_actor<float>(presets::dense("bad", {128, 0, 64}), rng), Error);
    auto s = presets::moe_default();
    s.k = 17;
    EXPECT_THROW(build_actor<float>(s, rng), Error);
}

TEST(ForwardPolicy, BatchOf6000Gives6000x12)
{
    Rng rng(2);
    const auto net = build_actor<float>(presets::moe_default(), rng);
    Batch<float> obs(6000, 591);
    fill_standard_normal(rng, obs.values());
    const auto out = forward_policy(net, obs);
    EXPECT_EQ(out.actions.batch_size(), 6000u);
    EXPECT_EQ(out.actions.dim(), 12u);
    ASSERT_TRUE(out.gate.has_value());
    EXPECT_EQ(out.gate->batch_size(), 6000u);
}

TEST(ForwardPolicy, ZeroWeightsGiveZeroActions)
{
    Rng rng(3);
    auto net = build_actor<double>(presets::moe_default(), rng);
    for (auto& l : net.layers)
        std::visit([](auto& layer) {
            if constexpr (requires { layer.experts; }) {
                for (auto& e : layer.experts)
                    e.fill(0.0);
            } else {
                layer.weight.fill(0.0);
            }
        }, l);
    Batch<double> obs(4, 591);
    fill_standard_normal(rng, obs.values());
    const auto out = forward_policy(net, obs);
    for (double v : out.actions.values())
        EXPECT_EQ(v, 0.0);
}

TEST(ForwardPolicy, DeterministicAndWrongDimRejected)
{
    Rng rng(4);
    const auto net = build_actor<float>(presets::dense_medium(), rng);
    Batch<float> obs(3, 591);
    fill_standard_normal(rng, obs.values());
    EXPECT_EQ(forward_policy(net, obs).actions, forward_policy(net, obs).actions);
    EXPECT_FALSE(forward_policy(net, obs).gate.has_value());
    EXPECT_THROW(forward_policy(net, Batch<float>(3, 590)), Error);
}

TEST(ForwardPolicy, MoeNetMatchesDenseOracleExpansion)
{
    Rng rng(5);
    auto spec = presets::moe_default();
    spec.hidden = {64, 32, 32};
    auto net = build_actor<double>(spec, rng);
    fill_standard_normal(rng, net.moe().w_gate.values());
    Batch<double> obs(100, 591);
    fill_standard_normal(rng, obs.values());
    const auto out = forward_policy(net, obs);

    // Replay the network with the MoE evaluated by the dense oracle.
    const auto& l0 = std::get<DenseLayer<double>>(net.layers[0]);
    const auto& l2 = std::get<DenseLayer<double>>(net.layers[2]);
    const auto& l3 = std::get<DenseLayer<double>>(net.layers[3]);
    auto h = elu(apply_dense(l0, obs));
    Batch<double> m(100, 32);
    for (std::size_t b = 0; b < 100; ++b) {
        const auto y = oracle::dense_forward(net.moe(), std::vector<double>(h.row(b).begin(), h.row(b).end()));
        std::copy(y.begin(), y.end(), m.row(b).begin());
    }
    const auto ref = apply_dense(l3, elu(apply_dense(l2, elu(m))));
    for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(out.actions.values()[i], ref.values()[i], 1e-5 * std::max(1.0, std::abs(ref.values()[i])));
}

TEST(ForwardPolicy, BatchOrderEquivariant)
{
    Rng rng(6);
    const auto net = build_actor<double>(presets::moe_default(), rng);
    Batch<double> obs(16, 591);
    fill_standard_normal(rng, obs.values());
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0u);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[3], perm[9]);
    Batch<double> permuted(16, 591);
    for (std::size_t b = 0; b < 16; ++b)
        std::copy_n(obs.row(perm[b]).data(), 591, permuted.row(b).data());
    const auto a = forward_policy(net, obs).actions;
    const auto p = forward_policy(net, permuted).actions;
    for (std::size_t b = 0; b < 16; ++b)
        for (std::size_t c = 0; c < 12; ++c)
            EXPECT_NEAR(p(b, c), a(perm[b], c), 1e-12);
}

TEST(CountParams, DenseWeightOnlyMatchesArithmetic)
{
    EXPECT_EQ(count_params(presets::dense_small()).weights_only, 193'024u);
    EXPECT_EQ(count_params(presets::dense_medium()).weights_only, 467'968u);
    EXPECT_EQ(count_params(presets::dense_large()).weights_only, 767'524u);
    EXPECT_EQ(count_params(presets::dense_xl()).weights_only, 1'563'648u);
}

TEST(CountParams, DensePresetsNearReportedMagnitudes)
{
    const std::pair<ActorSpec, double> rows[] = {
        {presets::dense_small(), 0.2e6}, {presets::dense_medium(), 0.5e6}, {presets::dense_large(), 0.8e6}, {presets::dense_xl(), 1.6e6}};
    for (const auto& [spec, reported] : rows) {
        const auto r = count_params(spec);
        EXPECT_EQ(r.total, r.active) << spec.name;
        EXPECT_LE(std::abs(static_cast<double>(r.weights_only) - reported), 0.1 * reported) << spec.name;
    }
}

TEST(CountParams, MoeActiveExcludesIdleExperts)
{
    const auto r = count_params(presets::moe_default());
    EXPECT_EQ(r.params_per_expert, 512u * 256u);
    EXPECT_EQ(r.active, r.total - 12 * r.params_per_expert);
    EXPECT_LT(r.active, r.total);
    // linear 591->512, MoE 16x512x256 + 2x512x16, linear 256->256, head 256->12
    EXPECT_EQ(r.total, (591u * 512 + 512) + (16u * 512 * 256 + 2 * 512 * 16) + (256u * 256 + 256) + (256u * 12 + 12));
}

TEST(CountParams, NetworkCountsAgreeWithSpec)
{
    Rng rng(7);
    for (const auto& spec : {presets::moe_default(), presets::dense_large()}) {
        const auto a = count_params(build_actor<float>(spec, rng));
        const auto b = count_params(spec);
        EXPECT_EQ(a.total, b.total);
        EXPECT_EQ(a.active, b.active);
        EXPECT_EQ(a.weights_only, b.weights_only);
        ASSERT_EQ(a.layers.size(), b.layers.size());
    }
}

TEST(Presets, ParamMatchedMoeHitsTarget)
{
    const std::size_t target = count_params(presets::dense_xl()).total;
    const auto spec = presets::moe_param_matched(target);
    const auto r = count_params(spec);
    EXPECT_LT(std::abs(static_cast<double>(r.total) - static_cast<double>(target)), 0.01 * static_cast<double>(target));
    EXPECT_EQ(spec.n, 16u);
    EXPECT_EQ(spec.k, 4u);
    EXPECT_EQ(r.active, r.total - 12 * r.params_per_expert);
}

TEST(Presets, DenseMatchedHitsTarget)
{
    const std::size_t target = count_params(presets::moe_default()).total;
    const auto r = count_params(presets::dense_matched(target));
    EXPECT_LT(std::abs(static_cast<double>(r.total) - static_cast<double>(target)), 0.01 * static_cast<double>(target));
}

TEST(Presets, LookupByName)
{
    EXPECT_EQ(presets::by_name("xl"), presets::dense_xl());
    EXPECT_EQ(presets::by_name("moe"), presets::moe_default());
    EXPECT_THROW(presets::by_name("nope"), Error);
}
