#pragma once

#include <smoe/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace smoe {

using Vec3 = std::array<double, 3>;
using Joint12 = std::array<double, 12>;

/// Boolean grid over the horizontal plane. Cell (r, c) covers
/// [origin_x + c*resolution, origin_x + (c+1)*resolution) x [origin_y + r*resolution, ...).
struct EdgeMap {
    double origin_x = 0.0, origin_y = 0.0, resolution = 0.1;
    std::size_t rows = 0, cols = 0;
    std::vector<bool> cells;

    void validate() const
    {
        require(resolution > 0.0 && std::isfinite(resolution), ErrorKind::InvalidArgument, "edge_map: resolution must be positive");
        require(cells.size() == rows * cols, ErrorKind::Dimension,
                "edge_map: expected " + std::to_string(rows * cols) + " cells, got " + std::to_string(cells.size()));
    }

    /// Outside the grid counts as not-an-edge.
    bool operator()(const Vec3& p) const
    {
        const double cx = std::floor((p[0] - origin_x) / resolution), cy = std::floor((p[1] - origin_y) / resolution);
        if (!(cx >= 0 && cy >= 0 && cx < double(cols) && cy < double(rows)))
            return false;
        return cells[static_cast<std::size_t>(cy) * cols + static_cast<std::size_t>(cx)];
    }

    bool operator==(const EdgeMap&) const = default;
};

struct RewardState {
    std::optional<double> yaw, yaw_goal;
    std::optional<Vec3> lin_vel, ang_vel, projected_gravity;
    std::optional<Joint12> dof_pos, dof_vel, dof_vel_prev, action, action_prev, torque, torque_prev, default_dof_pos;
    std::optional<std::vector<Vec3>> contact_forces;
    std::optional<std::vector<std::size_t>> collision_bodies, feet_bodies;
    std::optional<std::array<Vec3, 4>> foot_positions;
    std::optional<std::array<bool, 4>> foot_contact;
    std::optional<EdgeMap> edge_map;
    std::optional<Vec3> robot_pos, goal_pos;
    std::optional<double> command;
    std::optional<bool> walking_env;
    std::vector<std::size_t> hip_indices{0, 3, 6, 9};
    double dt = 0.02;

    bool operator==(const RewardState&) const = default;
};

namespace rewards {

inline constexpr double kDt = 0.02;
inline constexpr double kCollisionThreshold = 0.1;
inline constexpr double kStumbleRatio = 4.0;

inline constexpr std::array<std::string_view, 14> kTermNames{
    "tracking_yaw", "lin_vel_z",  "ang_vel_xy", "orientation", "dof_acc",      "collision", "action_rate",
    "delta_torques", "torques",   "hip_pos",    "dof_error",   "feet_stumble", "feet_edge", "tracking_goal_vel"};

inline constexpr std::array<double, 14> kCoefficients{0.5, -1.5, -0.05, -1.0, -2.5e-7, -10.0, -0.1, -1e-7, -1e-5, -0.5, -0.04, -1.0, -1.0, 1.5};

inline double coefficient(std::string_view term)
{
    for (std::size_t i = 0; i < kTermNames.size(); ++i)
        if (kTermNames[i] == term)
            return kCoefficients[i];
    fail(ErrorKind::InvalidArgument, "unknown reward term '" + std::string(term) + "'");
}

namespace detail {

template <typename V>
const V& need(const std::optional<V>& field, std::string_view term, std::string_view name)
{
    if (!field)
        fail(ErrorKind::InvalidArgument, "reward term '" + std::string(term) + "' requires field '" + std::string(name) + "'");
    return *field;
}

inline const Vec3& force_of(const std::vector<Vec3>& forces, std::size_t body, std::string_view term)
{
    require(body < forces.size(), ErrorKind::Dimension,
            "reward term '" + std::string(term) + "': body index " + std::to_string(body) + " outside contact_forces (" +
                std::to_string(forces.size()) + " bodies)");
    return forces[body];
}

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

} // namespace detail

#define SMOE_NEED(term, field) detail::need(s.field, term, #field)

inline double tracking_yaw(const RewardState& s)
{
    return std::exp(-std::abs(SMOE_NEED("tracking_yaw", yaw_goal) - SMOE_NEED("tracking_yaw", yaw)));
}

inline double lin_vel_z(const RewardState& s)
{
    const double vz = SMOE_NEED("lin_vel_z", lin_vel)[2];
    return SMOE_NEED("lin_vel_z", walking_env) ? vz : 0.5 * vz;
}

inline double ang_vel_xy(const RewardState& s)
{
    const auto& w = SMOE_NEED("ang_vel_xy", ang_vel);
    return w[0] * w[0] + w[1] * w[1];
}

inline double orientation(const RewardState& s)
{
    if (!SMOE_NEED("orientation", walking_env))
        return 0.0;
    const auto& g = SMOE_NEED("orientation", projected_gravity);
    return g[0] * g[0] + g[1] * g[1];
}

inline double dof_acc(const RewardState& s)
{
    const auto& v = SMOE_NEED("dof_acc", dof_vel);
    const auto& vp = SMOE_NEED("dof_acc", dof_vel_prev);
    double sum = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
        const double a = (v[i] - vp[i]) / s.dt;
        sum += a * a;
    }
    return sum;
}

inline double collision(const RewardState& s)
{
    const auto& forces = SMOE_NEED("collision", contact_forces);
    double hits = 0.0;
    for (std::size_t b : SMOE_NEED("collision", collision_bodies))
        hits += detail::norm(detail::force_of(forces, b, "collision")) > kCollisionThreshold ? 1.0 : 0.0;
    return hits;
}

inline double action_rate(const RewardState& s)
{
    const auto& a = SMOE_NEED("action_rate", action);
    const auto& ap = SMOE_NEED("action_rate", action_prev);
    double sum = 0.0;
    for (std::size_t i = 0; i < 12; ++i)
        sum += (a[i] - ap[i]) * (a[i] - ap[i]);
    return std::sqrt(sum);
}

inline double delta_torques(const RewardState& s)
{
    const auto& t = SMOE_NEED("delta_torques", torque);
    const auto& tp = SMOE_NEED("delta_torques", torque_prev);
    double sum = 0.0;
    for (std::size_t i = 0; i < 12; ++i)
        sum += (t[i] - tp[i]) * (t[i] - tp[i]);
    return sum;
}

inline double torques(const RewardState& s)
{
    double sum = 0.0;
    for (double t : SMOE_NEED("torques", torque))
        sum += t * t;
    return sum;
}

inline double hip_pos(const RewardState& s)
{
    const auto& q = SMOE_NEED("hip_pos", dof_pos);
    const auto& w = SMOE_NEED("hip_pos", default_dof_pos);
    double sum = 0.0;
    for (std::size_t i : s.hip_indices) {
        require(i < 12, ErrorKind::Dimension, "reward term 'hip_pos': hip index " + std::to_string(i) + " out of range");
        sum += (q[i] - w[i]) * (q[i] - w[i]);
    }
    return sum;
}

inline double dof_error(const RewardState& s)
{
    const auto& q = SMOE_NEED("dof_error", dof_pos);
    const auto& w = SMOE_NEED("dof_error", default_dof_pos);
    double sum = 0.0;
    for (std::size_t i = 0; i < 12; ++i)
        sum += (q[i] - w[i]) * (q[i] - w[i]);
    return sum;
}

inline double feet_stumble(const RewardState& s)
{
    const auto& forces = SMOE_NEED("feet_stumble", contact_forces);
    for (std::size_t b : SMOE_NEED("feet_stumble", feet_bodies)) {
        const auto& f = detail::force_of(forces, b, "feet_stumble");
        if (std::hypot(f[0], f[1]) > kStumbleRatio * std::abs(f[2]))
            return 1.0;
    }
    return 0.0;
}

inline double feet_edge(const RewardState& s)
{
    const auto& contact = SMOE_NEED("feet_edge", foot_contact);
    if (std::none_of(contact.begin(), contact.end(), [](bool c) { return c; }))
        return 0.0;
    const auto& pos = SMOE_NEED("feet_edge", foot_positions);
    const auto& map = SMOE_NEED("feet_edge", edge_map);
    double sum = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        sum += (contact[i] && map(pos[i])) ? 1.0 : 0.0;
    return sum;
}

inline double tracking_goal_vel(const RewardState& s)
{
    const auto& p = SMOE_NEED("tracking_goal_vel", robot_pos);
    const auto& g = SMOE_NEED("tracking_goal_vel", goal_pos);
    const auto& v = SMOE_NEED("tracking_goal_vel", lin_vel);
    const double target = SMOE_NEED("tracking_goal_vel", command);
    const Vec3 d{g[0] - p[0], g[1] - p[1], g[2] - p[2]};
    const double dist = detail::norm(d);
    require(dist > 0.0, ErrorKind::InvalidArgument, "reward term 'tracking_goal_vel': robot is at the goal (zero distance)");
    const double along = (v[0] * d[0] + v[1] * d[1] + v[2] * d[2]) / dist;
    return std::min(along, target);
}

#undef SMOE_NEED

inline double term(std::string_view name, const RewardState& s)
{
    using Fn = double (*)(const RewardState&);
    static constexpr std::array<Fn, 14> fns{tracking_yaw, lin_vel_z,   ang_vel_xy, orientation,  dof_acc,   collision, action_rate,
                                            delta_torques, torques,    hip_pos,    dof_error,    feet_stumble, feet_edge, tracking_goal_vel};
    for (std::size_t i = 0; i < kTermNames.size(); ++i)
        if (kTermNames[i] == name)
            return fns[i](s);
    fail(ErrorKind::InvalidArgument, "unknown reward term '" + std::string(name) + "'");
}

} // namespace rewards

struct TermValue {
    std::string name;
    double raw = 0.0;
    double coefficient = 0.0;
    double weighted = 0.0;
};

struct RewardBreakdown {
    std::vector<TermValue> terms;
    double total = 0.0;
    double floored_total = 0.0;

    const TermValue& at(std::string_view name) const
    {
        for (const auto& t : terms)
            if (t.name == name)
                return t;
        fail(ErrorKind::InvalidArgument, "no term '" + std::string(name) + "' in breakdown");
    }
};

inline RewardBreakdown step_reward(const RewardState& s)
{
    require(std::abs(s.dt - rewards::kDt) < 1e-12, ErrorKind::InvalidArgument,
            "reward state dt must be 0.02 s, got " + std::to_string(s.dt));
    RewardBreakdown out;
    out.terms.reserve(rewards::kTermNames.size());
    for (std::size_t i = 0; i < rewards::kTermNames.size(); ++i) {
        TermValue t{std::string(rewards::kTermNames[i]), 0.0, rewards::kCoefficients[i], 0.0};
        t.raw = rewards::term(t.name, s);
        t.weighted = t.coefficient * t.raw;
        out.total += t.weighted;
        out.terms.push_back(std::move(t));
    }
    out.floored_total = std::max(0.0, out.total);
    return out;
}

enum class Flooring { PerStep, Trajectory };

inline Flooring parse_flooring(std::string_view s)
{
    if (s == "step")
        return Flooring::PerStep;
    if (s == "trajectory")
        return Flooring::Trajectory;
    fail(ErrorKind::InvalidArgument, "flooring must be 'step' or 'trajectory', got '" + std::string(s) + "'");
}

struct TrajectoryReward {
    std::vector<RewardBreakdown> steps;
    double raw_return = 0.0;
    double floored_return = 0.0;
};

inline TrajectoryReward trajectory_reward(const std::vector<RewardState>& states, Flooring mode = Flooring::PerStep)
{
    TrajectoryReward out;
    out.steps.reserve(states.size());
    for (const auto& s : states) {
        out.steps.push_back(step_reward(s));
        out.raw_return += out.steps.back().total;
        if (mode == Flooring::PerStep)
            out.floored_return += out.steps.back().floored_total;
    }
    if (mode == Flooring::Trajectory)
        out.floored_return = std::max(0.0, out.raw_return);
    return out;
}

} // namespace smoe
