#include <smoe/domain_rand.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace smoe;

namespace {

std::vector<double> random_obs(Rng& rng)
{
    std::vector<double> obs(layout::kObservationDim);
    for (auto& v : obs)
        v = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < 4; ++i)
        obs[layout::kFootContact.offset + i] = (i % 2) ? 1.0 : 0.0;
    for (const auto& pad : layout::kPadding)
        for (std::size_t i = 0; i < pad.length; ++i)
            obs[pad.offset + i] = 0.0;
    return obs;
}

bool inside(std::size_t i, const Span& s) { return i >= s.offset && i < s.offset + s.length; }

} // namespace

TEST(RandSpec, ValidationRejectsBadParameters)
{
    EXPECT_THROW((RandSpec{"x", Uniform{2.0, 1.0}}.validate()), Error);
    EXPECT_THROW((RandSpec{"x", Gaussian{0.0, -1.0}}.validate()), Error);
    EXPECT_THROW((RandSpec{"x", Binomial{1.5}}.validate()), Error);
    EXPECT_THROW((RandSpec{"x", Binomial{-0.1}}.validate()), Error);
    Rng rng(1);
    EXPECT_THROW(sample(RandSpec{"x", Uniform{1.0, 0.0}}, rng), Error);
    EXPECT_NO_THROW((RandSpec{"x", Uniform{1.0, 1.0}}.validate()));
}

TEST(Sample, Examples)
{
    Rng rng(2);
    for (int i = 0; i < 10000; ++i) {
        const double f = sample(RandSpec{"friction", Uniform{0.6, 2.0}}, rng);
        ASSERT_GE(f, 0.6);
        ASSERT_LE(f, 2.0);
    }
    EXPECT_EQ(sample(RandSpec{"g", Gaussian{0.0, 0.0}}, rng), 0.0);
    EXPECT_TRUE(sample_bool(RandSpec{"b", Binomial{1.0}}, rng));
    EXPECT_FALSE(sample_bool(RandSpec{"b", Binomial{0.0}}, rng));
}

TEST(Sample, MomentsConverge)
{
    // N = 1e6; means within 3 sigma / sqrt(N).
    constexpr int N = 1'000'000;
    const RandTable table;
    for (const char* name : {"joint_vel", "cam_y_pos", "depth_artifact_width", "cam_y_rot", "mass", "foot_contact", "contour_artifact"}) {
        const auto& spec = table.at(name);
        Rng rng(Rng(3).split(std::hash<std::string>{}(name)));
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < N; ++i) {
            const double v = sample(spec, rng);
            sum += v;
            sq += v * v;
        }
        const double mean = sum / N, var = sq / N - mean * mean;
        double mu = 0.0, sd = 0.0;
        std::visit(
            [&](const auto& d) {
                using D = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<D, Uniform>) {
                    mu = 0.5 * (d.low + d.high);
                    sd = (d.high - d.low) / std::sqrt(12.0);
                } else if constexpr (std::is_same_v<D, Gaussian>) {
                    mu = d.mean;
                    sd = d.sigma;
                } else {
                    mu = d.p;
                    sd = std::sqrt(d.p * (1 - d.p));
                }
            },
            spec.dist);
        EXPECT_NEAR(mean, mu, 3 * sd / std::sqrt(double(N))) << name;
        EXPECT_NEAR(std::sqrt(var), sd, 0.01 * sd) << name;
    }
}

TEST(RandTable, DefaultRowsMatchPublishedValues)
{
    const RandTable t;
    EXPECT_EQ(t.rows().size(), 22u);
    EXPECT_EQ(t.at("rotation").dist, Distribution(Gaussian{0.0, 0.025}));
    EXPECT_EQ(t.at("joint_pos").dist, Distribution(Gaussian{0.0, 0.01}));
    EXPECT_EQ(t.at("joint_vel").dist, Distribution(Gaussian{0.0, 1.5}));
    EXPECT_EQ(t.at("ang_vel").dist, Distribution(Gaussian{0.0, 0.2}));
    EXPECT_EQ(t.at("foot_contact").dist, Distribution(Binomial{0.05}));
    EXPECT_EQ(t.at("horizontal_fov").dist, Distribution(Uniform{85.0, 89.0}));
    EXPECT_EQ(t.at("cam_y_pos").dist, Distribution(Gaussian{-0.0175, 0.0025}));
    EXPECT_EQ(t.at("motor").dist, Distribution(Uniform{0.8, 1.2}));
    EXPECT_THROW(t.at("nope"), Error);

    const auto p = NoiseProfile::from_table(t);
    const NoiseProfile d;
    EXPECT_EQ(p.rotation, d.rotation);
    EXPECT_EQ(p.joint_vel, d.joint_vel);
    EXPECT_EQ(p.contact_flip, d.contact_flip);
}

TEST(RandTable, ParsesPlainTextRows)
{
    std::istringstream in("term type l h mu sigma p\n"
                          "friction u 0.5 1.5 - - -   # tighter\n"
                          "\n"
                          "ang_vel g - - 0 0.1 -\n"
                          "foot_contact b - - - - 0.2\n"
                          "wind u 0 1 - - -\n");
    const auto t = RandTable::parse(in);
    EXPECT_EQ(t.at("friction").dist, Distribution(Uniform{0.5, 1.5}));
    EXPECT_EQ(t.at("ang_vel").dist, Distribution(Gaussian{0.0, 0.1}));
    EXPECT_EQ(t.at("foot_contact").dist, Distribution(Binomial{0.2}));
    EXPECT_TRUE(t.contains("wind"));
    EXPECT_EQ(t.at("mass").dist, Distribution(Uniform{0.0, 3.0}));
}

TEST(RandTable, ParseErrorsNameTheLine)
{
    auto expect_fail = [](const std::string& text, const std::string& needle) {
        std::istringstream in(text);
        try {
            RandTable::parse(in, "t.txt");
            ADD_FAILURE() << "no error for: " << text;
        } catch (const Error& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    expect_fail("\nfriction u 0.5 - - - -\n", "t.txt:2");
    expect_fail("friction x 0 1 - - -\n", "unknown distribution");
    expect_fail("friction u 0 1\n", "7 columns");
    expect_fail("friction u 2 1 - - -\n", "l <= h");
    expect_fail("p b - - - - abc\n", "bad number");
}

TEST(NoiseObservation, ZeroProfileIsIdentity)
{
    Rng rng(4);
    const auto obs = random_obs(rng);
    EXPECT_EQ(noise_observation(obs, NoiseProfile::zero(), rng), obs);
}

TEST(NoiseObservation, FlipAllContacts)
{
    Rng rng(5);
    const auto obs = random_obs(rng);
    auto p = NoiseProfile::zero();
    p.contact_flip = 1.0;
    const auto out = noise_observation(obs, p, rng);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_EQ(out[layout::kFootContact.offset + i], 1.0 - obs[layout::kFootContact.offset + i]);
}

TEST(NoiseObservation, OnlyNoisedSpansChange)
{
    Rng rng(6);
    const NoiseProfile p;
    for (int trial = 0; trial < 200; ++trial) {
        const auto obs = random_obs(rng);
        const auto out = noise_observation(obs, p, rng);
        for (std::size_t i = 0; i < obs.size(); ++i) {
            const bool noised = inside(i, layout::kAngVel) || inside(i, layout::kRollPitch) || inside(i, layout::kJointPos) ||
                                inside(i, layout::kJointVel) || inside(i, layout::kFootContact);
            if (!noised)
                ASSERT_EQ(out[i], obs[i]) << "index " << i;
            else if (!inside(i, layout::kFootContact))
                ASSERT_NE(out[i], obs[i]) << "index " << i;
        }
    }
}

TEST(NoiseObservation, FlipRatePerContact)
{
    constexpr int N = 100'000;
    Rng rng(7);
    std::vector<float> obs(layout::kObservationDim, 0.0f);
    std::array<int, 4> flips{};
    const NoiseProfile p;
    for (int n = 0; n < N; ++n) {
        const auto out = noise_observation(obs, p, rng);
        for (std::size_t i = 0; i < 4; ++i)
            flips[i] += out[layout::kFootContact.offset + i] == 1.0f;
    }
    for (int f : flips)
        EXPECT_NEAR(double(f) / N, 0.05, 0.005);
}

TEST(NoiseObservation, NoiseScaleMatchesProfile)
{
    constexpr int N = 20000;
    Rng rng(8);
    const std::vector<double> obs(layout::kObservationDim, 0.0);
    const NoiseProfile p;
    double s_ang = 0, s_rot = 0, s_q = 0, s_qd = 0;
    for (int n = 0; n < N; ++n) {
        const auto out = noise_observation(obs, p, rng);
        s_ang += out[layout::kAngVel.offset] * out[layout::kAngVel.offset];
        s_rot += out[layout::kRollPitch.offset] * out[layout::kRollPitch.offset];
        s_q += out[layout::kJointPos.offset + 3] * out[layout::kJointPos.offset + 3];
        s_qd += out[layout::kJointVel.offset + 11] * out[layout::kJointVel.offset + 11];
    }
    EXPECT_NEAR(std::sqrt(s_ang / N), 0.2, 0.2 * 0.03);
    EXPECT_NEAR(std::sqrt(s_rot / N), 0.025, 0.025 * 0.03);
    EXPECT_NEAR(std::sqrt(s_q / N), 0.01, 0.01 * 0.03);
    EXPECT_NEAR(std::sqrt(s_qd / N), 1.5, 1.5 * 0.03);
}

TEST(NoiseObservation, WrongLengthThrows)
{
    Rng rng(9);
    EXPECT_THROW(noise_observation(std::vector<double>(590), NoiseProfile{}, rng), Error);
}

TEST(SamplePhysics, BoundsOver10kTrials)
{
    Rng rng(10);
    for (int n = 0; n < 10000; ++n) {
        const auto s = sample_physics(rng);
        for (double c : s.com_offset) {
            ASSERT_GE(c, -0.2);
            ASSERT_LE(c, 0.2);
        }
        ASSERT_GE(s.mass_offset, 0.0);
        ASSERT_LE(s.mass_offset, 3.0);
        ASSERT_GE(s.friction, 0.6);
        ASSERT_LE(s.friction, 2.0);
        ASSERT_EQ(s.motor_strength.size(), 24u);
        for (double m : s.motor_strength) {
            ASSERT_GE(m, 0.8);
            ASSERT_LE(m, 1.2);
        }
        ASSERT_GE(s.command, 0.3);
        ASSERT_LE(s.command, 0.8);
    }
}

TEST(SamplePhysics, SeedReproducible)
{
    Rng a(11), b(11), c(12);
    const auto x = sample_physics(a);
    EXPECT_EQ(x, sample_physics(b));
    EXPECT_NE(x, sample_physics(c));
}
