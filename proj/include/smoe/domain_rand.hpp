#pragma once

#include <smoe/error.hpp>
#include <smoe/observation.hpp>
#include <smoe/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace smoe {

struct Uniform {
    double low = 0.0, high = 0.0;
    bool operator==(const Uniform&) const = default;
};

struct Gaussian {
    double mean = 0.0, sigma = 0.0;
    bool operator==(const Gaussian&) const = default;
};

struct Binomial {
    double p = 0.0;
    bool operator==(const Binomial&) const = default;
};

using Distribution = std::variant<Uniform, Gaussian, Binomial>;

struct RandSpec {
    std::string name;
    Distribution dist;

    void validate() const
    {
        std::visit(
            [&](const auto& d) {
                using D = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<D, Uniform>) {
                    require(std::isfinite(d.low) && std::isfinite(d.high) && d.low <= d.high, ErrorKind::InvalidArgument,
                            name + ": uniform requires finite l <= h");
                } else if constexpr (std::is_same_v<D, Gaussian>) {
                    require(std::isfinite(d.mean) && std::isfinite(d.sigma) && d.sigma >= 0.0, ErrorKind::InvalidArgument,
                            name + ": gaussian requires sigma >= 0");
                } else {
                    require(d.p >= 0.0 && d.p <= 1.0, ErrorKind::InvalidArgument, name + ": binomial requires 0 <= p <= 1");
                }
            },
            dist);
    }

    bool operator==(const RandSpec&) const = default;
};

/// Draw once. Binomial rows come back as 0.0 / 1.0.
inline double sample(const RandSpec& spec, Rng& rng)
{
    spec.validate();
    return std::visit(
        [&](const auto& d) -> double {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, Uniform>) {
                return d.low == d.high ? d.low : std::min(rng.uniform(d.low, d.high), d.high);
            } else if constexpr (std::is_same_v<D, Gaussian>) {
                return d.sigma == 0.0 ? d.mean : rng.normal(d.mean, d.sigma);
            } else {
                return rng.bernoulli(d.p) ? 1.0 : 0.0;
            }
        },
        spec.dist);
}

inline bool sample_bool(const RandSpec& spec, Rng& rng)
{
    require(std::holds_alternative<Binomial>(spec.dist), ErrorKind::InvalidArgument, spec.name + ": not a binomial row");
    return sample(spec, rng) != 0.0;
}

namespace randomization {

inline std::vector<RandSpec> default_table()
{
    return {
        {"rotation", Gaussian{0.0, 0.025}},
        {"joint_pos", Gaussian{0.0, 0.01}},
        {"joint_vel", Gaussian{0.0, 1.5}},
        {"ang_vel", Gaussian{0.0, 0.2}},
        {"foot_contact", Binomial{0.05}},
        {"cam_x_pos", Gaussian{0.32, 0.01}},
        {"cam_y_pos", Gaussian{-0.0175, 0.0025}},
        {"cam_z_pos", Gaussian{0.15, 0.02}},
        {"cam_x_rot", Uniform{-1.0, 1.0}},
        {"cam_y_rot", Uniform{21.2, 24.6}},
        {"cam_z_rot", Uniform{-1.0, 1.0}},
        {"horizontal_fov", Uniform{85.0, 89.0}},
        {"depth_artifact", Binomial{0.001}},
        {"depth_artifact_height", Gaussian{3.0, 3.0}},
        {"depth_artifact_width", Gaussian{3.0, 3.0}},
        {"contour_artifact", Binomial{0.1}},
        {"gaussian_blur_sigma", Uniform{0.1, 2.0}},
        {"command", Uniform{0.3, 0.8}},
        {"friction", Uniform{0.6, 2.0}},
        {"com", Uniform{-0.2, 0.2}},
        {"mass", Uniform{0.0, 3.0}},
        {"motor", Uniform{0.8, 1.2}},
    };
}

} // namespace randomization

class RandTable {
public:
    RandTable() : rows_(randomization::default_table()) {}
    explicit RandTable(std::vector<RandSpec> rows) : rows_(std::move(rows))
    {
        for (const auto& r : rows_)
            r.validate();
    }

    const RandSpec& at(const std::string& name) const
    {
        for (const auto& r : rows_)
            if (r.name == name)
                return r;
        fail(ErrorKind::InvalidArgument, "unknown randomization row '" + name + "'");
    }

    bool contains(const std::string& name) const
    {
        for (const auto& r : rows_)
            if (r.name == name)
                return true;
        return false;
    }

    /// Replace an existing row or append a new one.
    void set(RandSpec spec)
    {
        spec.validate();
        for (auto& r : rows_)
            if (r.name == spec.name) {
                r = std::move(spec);
                return;
            }
        rows_.push_back(std::move(spec));
    }

    const std::vector<RandSpec>& rows() const noexcept { return rows_; }

    // Format, one row per line:  name type l h mu sigma p   ('-' marks an unused column)
    static RandTable parse(std::istream& in, const std::string& source = "<stream>")
    {
        RandTable table;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            std::istringstream ss(line);
            std::vector<std::string> cols;
            for (std::string tok; ss >> tok;)
                cols.push_back(tok);
            if (cols.empty())
                continue;
            const auto where = source + ":" + std::to_string(lineno);
            if (cols[0] == "term" || cols[0] == "name")
                continue;
            require(cols.size() == 7, ErrorKind::Format, where + ": expected 7 columns, got " + std::to_string(cols.size()));
            auto num = [&](std::size_t i, const char* col) {
                require(cols[i] != "-", ErrorKind::Format, where + ": column " + col + " required for type " + cols[1]);
                try {
                    std::size_t used = 0;
                    const double v = std::stod(cols[i], &used);
                    require(used == cols[i].size(), ErrorKind::Format, where + ": bad number '" + cols[i] + "'");
                    return v;
                } catch (const std::logic_error&) {
                    fail(ErrorKind::Format, where + ": bad number '" + cols[i] + "'");
                }
            };
            RandSpec spec{cols[0], Uniform{}};
            if (cols[1] == "u")
                spec.dist = Uniform{num(2, "l"), num(3, "h")};
            else if (cols[1] == "g")
                spec.dist = Gaussian{num(4, "mu"), num(5, "sigma")};
            else if (cols[1] == "b")
                spec.dist = Binomial{num(6, "p")};
            else
                fail(ErrorKind::Format, where + ": unknown distribution type '" + cols[1] + "'");
            try {
                table.set(std::move(spec));
            } catch (const Error& e) {
                fail(ErrorKind::InvalidArgument, where + ": " + e.what());
            }
        }
        return table;
    }

    static RandTable load(const std::string& path)
    {
        std::ifstream in(path);
        require(static_cast<bool>(in), ErrorKind::Io, "cannot open randomization table '" + path + "'");
        return parse(in, path);
    }

private:
    std::vector<RandSpec> rows_;
};

struct NoiseProfile {
    Gaussian rotation{0.0, 0.025};
    Gaussian joint_pos{0.0, 0.01};
    Gaussian joint_vel{0.0, 1.5};
    Gaussian ang_vel{0.0, 0.2};
    double contact_flip = 0.05;

    static NoiseProfile from_table(const RandTable& t)
    {
        auto g = [&](const char* n) {
            const auto& d = t.at(n).dist;
            require(std::holds_alternative<Gaussian>(d), ErrorKind::InvalidArgument, std::string(n) + " must be gaussian");
            return std::get<Gaussian>(d);
        };
        const auto& fc = t.at("foot_contact").dist;
        require(std::holds_alternative<Binomial>(fc), ErrorKind::InvalidArgument, "foot_contact must be binomial");
        return {g("rotation"), g("joint_pos"), g("joint_vel"), g("ang_vel"), std::get<Binomial>(fc).p};
    }

    static NoiseProfile zero() { return {{0, 0}, {0, 0}, {0, 0}, {0, 0}, 0.0}; }
};

/// Noise the current proprio frame in place. Contacts are read as booleans (> 0.5) and written back as 0/1.
template <typename T>
void noise_observation_inplace(std::span<T> obs, const NoiseProfile& profile, Rng& rng)
{
    require(obs.size() == layout::kObservationDim, ErrorKind::Dimension,
            "observation has " + std::to_string(obs.size()) + " entries, expected " + std::to_string(layout::kObservationDim));
    auto perturb = [&](const Span& s, const Gaussian& g) {
        if (g.sigma == 0.0 && g.mean == 0.0)
            return;
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i)
            obs[i] += static_cast<T>(g.sigma == 0.0 ? g.mean : rng.normal(g.mean, g.sigma));
    };
    perturb(layout::kAngVel, profile.ang_vel);
    perturb(layout::kRollPitch, profile.rotation);
    perturb(layout::kJointPos, profile.joint_pos);
    perturb(layout::kJointVel, profile.joint_vel);
    for (std::size_t i = layout::kFootContact.offset; i < layout::kFootContact.offset + layout::kFootContact.length; ++i) {
        bool c = obs[i] > T(0.5);
        if (rng.bernoulli(profile.contact_flip))
            c = !c;
        obs[i] = c ? T(1) : T(0);
    }
}

template <typename T>
std::vector<T> noise_observation(std::span<const T> obs, const NoiseProfile& profile, Rng& rng)
{
    std::vector<T> out(obs.begin(), obs.end());
    noise_observation_inplace(std::span<T>(out), profile, rng);
    return out;
}

template <typename T>
std::vector<T> noise_observation(const std::vector<T>& obs, const NoiseProfile& profile, Rng& rng)
{
    return noise_observation(std::span<const T>(obs), profile, rng);
}

struct PhysicsSample {
    std::array<double, 3> com_offset{};
    double mass_offset = 0.0;
    double friction = 0.0;
    std::array<double, 24> motor_strength{};
    double command = 0.0;

    bool operator==(const PhysicsSample&) const = default;
};

inline PhysicsSample sample_physics(Rng& rng, const RandTable& table = RandTable{})
{
    PhysicsSample s;
    const auto& com = table.at("com");
    for (double& v : s.com_offset)
        v = sample(com, rng);
    s.mass_offset = sample(table.at("mass"), rng);
    s.friction = sample(table.at("friction"), rng);
    const auto& motor = table.at("motor");
    for (double& v : s.motor_strength)
        v = sample(motor, rng);
    s.command = sample(table.at("command"), rng);
    return s;
}

} // namespace smoe
