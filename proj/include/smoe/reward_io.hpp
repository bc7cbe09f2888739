#pragma once

// Trajectory text format, one trajectory per file:
//
//   # comment
//   walking_env 1            <- keys before the first "step" are defaults for every step
//   collision_bodies 0 1 2
//   step
//   yaw 0.1
//   lin_vel 0.4 0 0
//   ...
//   step
//   ...
//
// Each line is a key followed by whitespace separated values. A step may also
// carry an "obs" line of 591 numbers for policy replay.

#include <smoe/config.hpp>
#include <smoe/error.hpp>
#include <smoe/rewards.hpp>

#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace smoe {

struct TrajectoryStep {
    RewardState state;
    std::vector<double> obs;
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;

    std::vector<RewardState> states() const
    {
        std::vector<RewardState> out;
        out.reserve(steps.size());
        for (const auto& s : steps)
            out.push_back(s.state);
        return out;
    }
};

namespace detail {

class LineValues {
public:
    LineValues(std::string key, std::vector<std::string> tokens, std::string where)
        : key_(std::move(key)), tok_(std::move(tokens)), where_(std::move(where))
    {
    }

    std::vector<double> numbers(std::size_t expected) const
    {
        require(expected == 0 || tok_.size() == expected, ErrorKind::Format,
                where_ + ": '" + key_ + "' expects " + std::to_string(expected) + " values, got " + std::to_string(tok_.size()));
        std::vector<double> out;
        out.reserve(tok_.size());
        for (const auto& t : tok_)
            out.push_back(parse_double(t, where_ + ": " + key_));
        return out;
    }

    std::vector<std::size_t> indices() const
    {
        std::vector<std::size_t> out;
        for (const auto& t : tok_)
            out.push_back(parse_size(t, where_ + ": " + key_));
        return out;
    }

    double scalar() const { return numbers(1)[0]; }

    bool flag() const
    {
        require(tok_.size() == 1 && (tok_[0] == "0" || tok_[0] == "1"), ErrorKind::Format, where_ + ": '" + key_ + "' expects 0 or 1");
        return tok_[0] == "1";
    }

    template <std::size_t N>
    std::array<double, N> array() const
    {
        const auto v = numbers(N);
        std::array<double, N> out{};
        std::copy(v.begin(), v.end(), out.begin());
        return out;
    }

    const std::vector<std::string>& tokens() const { return tok_; }
    const std::string& where() const { return where_; }

private:
    std::string key_;
    std::vector<std::string> tok_;
    std::string where_;
};

inline void apply_key(TrajectoryStep& step, const std::string& key, const LineValues& v)
{
    auto& s = step.state;
    if (key == "yaw")
        s.yaw = v.scalar();
    else if (key == "yaw_goal")
        s.yaw_goal = v.scalar();
    else if (key == "lin_vel")
        s.lin_vel = v.array<3>();
    else if (key == "ang_vel")
        s.ang_vel = v.array<3>();
    else if (key == "projected_gravity")
        s.projected_gravity = v.array<3>();
    else if (key == "dof_pos")
        s.dof_pos = v.array<12>();
    else if (key == "dof_vel")
        s.dof_vel = v.array<12>();
    else if (key == "dof_vel_prev")
        s.dof_vel_prev = v.array<12>();
    else if (key == "action")
        s.action = v.array<12>();
    else if (key == "action_prev")
        s.action_prev = v.array<12>();
    else if (key == "torque")
        s.torque = v.array<12>();
    else if (key == "torque_prev")
        s.torque_prev = v.array<12>();
    else if (key == "default_dof_pos")
        s.default_dof_pos = v.array<12>();
    else if (key == "contact_forces") {
        const auto n = v.numbers(0);
        require(n.size() % 3 == 0, ErrorKind::Format, v.where() + ": contact_forces needs a multiple of 3 values");
        std::vector<Vec3> f(n.size() / 3);
        for (std::size_t i = 0; i < f.size(); ++i)
            f[i] = {n[3 * i], n[3 * i + 1], n[3 * i + 2]};
        s.contact_forces = std::move(f);
    } else if (key == "collision_bodies")
        s.collision_bodies = v.indices();
    else if (key == "feet_bodies")
        s.feet_bodies = v.indices();
    else if (key == "hip_indices")
        s.hip_indices = v.indices();
    else if (key == "foot_positions") {
        const auto n = v.array<12>();
        std::array<Vec3, 4> p{};
        for (std::size_t i = 0; i < 4; ++i)
            p[i] = {n[3 * i], n[3 * i + 1], n[3 * i + 2]};
        s.foot_positions = p;
    } else if (key == "foot_contact") {
        const auto n = v.array<4>();
        std::array<bool, 4> c{};
        for (std::size_t i = 0; i < 4; ++i) {
            require(n[i] == 0.0 || n[i] == 1.0, ErrorKind::Format, v.where() + ": foot_contact values must be 0 or 1");
            c[i] = n[i] == 1.0;
        }
        s.foot_contact = c;
    } else if (key == "edge_map") {
        // origin_x origin_y resolution rows cols bits
        const auto& t = v.tokens();
        require(t.size() == 6, ErrorKind::Format, v.where() + ": edge_map expects origin_x origin_y resolution rows cols bits");
        EdgeMap m;
        m.origin_x = parse_double(t[0], v.where() + ": edge_map");
        m.origin_y = parse_double(t[1], v.where() + ": edge_map");
        m.resolution = parse_double(t[2], v.where() + ": edge_map");
        m.rows = parse_size(t[3], v.where() + ": edge_map");
        m.cols = parse_size(t[4], v.where() + ": edge_map");
        for (char c : t[5]) {
            require(c == '0' || c == '1', ErrorKind::Format, v.where() + ": edge_map bits must be 0/1");
            m.cells.push_back(c == '1');
        }
        try {
            m.validate();
        } catch (const Error& e) {
            fail(ErrorKind::Format, v.where() + ": " + e.what());
        }
        s.edge_map = std::move(m);
    } else if (key == "robot_pos")
        s.robot_pos = v.array<3>();
    else if (key == "goal_pos")
        s.goal_pos = v.array<3>();
    else if (key == "command")
        s.command = v.scalar();
    else if (key == "walking_env")
        s.walking_env = v.flag();
    else if (key == "dt")
        s.dt = v.scalar();
    else if (key == "obs")
        step.obs = v.numbers(591);
    else
        fail(ErrorKind::Format, v.where() + ": unknown key '" + key + "'");
}

} // namespace detail

inline Trajectory parse_trajectory(std::istream& in, const std::string& source = "<trajectory>")
{
    Trajectory traj;
    TrajectoryStep defaults;
    TrajectoryStep* current = &defaults;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key))
            continue;
        std::vector<std::string> tokens;
        for (std::string t; ss >> t;)
            tokens.push_back(t);
        const auto where = source + ":" + std::to_string(lineno);
        if (key == "step") {
            require(tokens.empty(), ErrorKind::Format, where + ": 'step' takes no values");
            traj.steps.push_back(defaults);
            current = &traj.steps.back();
            continue;
        }
        detail::apply_key(*current, key, detail::LineValues(key, std::move(tokens), where));
    }
    require(!traj.steps.empty(), ErrorKind::Format, source + ": no 'step' entries");
    return traj;
}

inline Trajectory load_trajectory(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open trajectory '" + path + "'");
    return parse_trajectory(in, path);
}

namespace detail {

template <typename Range>
void put_values(std::ostream& out, const char* key, const Range& r)
{
    out << key;
    for (const auto& v : r)
        out << ' ' << v;
    out << '\n';
}

} // namespace detail

inline void write_trajectory(std::ostream& out, const Trajectory& traj)
{
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& step : traj.steps) {
        const auto& s = step.state;
        out << "step\n";
        auto opt_scalar = [&](const char* k, const std::optional<double>& v) {
            if (v)
                out << k << ' ' << *v << '\n';
        };
        auto opt_range = [&](const char* k, const auto& v) {
            if (v)
                detail::put_values(out, k, *v);
        };
        opt_scalar("yaw", s.yaw);
        opt_scalar("yaw_goal", s.yaw_goal);
        opt_range("lin_vel", s.lin_vel);
        opt_range("ang_vel", s.ang_vel);
        opt_range("projected_gravity", s.projected_gravity);
        opt_range("dof_pos", s.dof_pos);
        opt_range("dof_vel", s.dof_vel);
        opt_range("dof_vel_prev", s.dof_vel_prev);
        opt_range("action", s.action);
        opt_range("action_prev", s.action_prev);
        opt_range("torque", s.torque);
        opt_range("torque_prev", s.torque_prev);
        opt_range("default_dof_pos", s.default_dof_pos);
        if (s.contact_forces) {
            out << "contact_forces";
            for (const auto& f : *s.contact_forces)
                out << ' ' << f[0] << ' ' << f[1] << ' ' << f[2];
            out << '\n';
        }
        opt_range("collision_bodies", s.collision_bodies);
        opt_range("feet_bodies", s.feet_bodies);
        detail::put_values(out, "hip_indices", s.hip_indices);
        if (s.foot_positions) {
            out << "foot_positions";
            for (const auto& p : *s.foot_positions)
                out << ' ' << p[0] << ' ' << p[1] << ' ' << p[2];
            out << '\n';
        }
        if (s.foot_contact) {
            out << "foot_contact";
            for (bool c : *s.foot_contact)
                out << ' ' << (c ? 1 : 0);
            out << '\n';
        }
        if (s.edge_map) {
            const auto& m = *s.edge_map;
            out << "edge_map " << m.origin_x << ' ' << m.origin_y << ' ' << m.resolution << ' ' << m.rows << ' ' << m.cols << ' ';
            for (bool b : m.cells)
                out << (b ? '1' : '0');
            out << '\n';
        }
        opt_range("robot_pos", s.robot_pos);
        opt_range("goal_pos", s.goal_pos);
        opt_scalar("command", s.command);
        if (s.walking_env)
            out << "walking_env " << (*s.walking_env ? 1 : 0) << '\n';
        out << "dt " << s.dt << '\n';
        if (!step.obs.empty())
            detail::put_values(out, "obs", step.obs);
    }
}

/// One row per step: step, then raw/weighted per term, then total and floored_total.
inline void write_breakdown_csv(std::ostream& out, const TrajectoryReward& r)
{
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "step";
    for (auto name : rewards::kTermNames)
        out << ',' << name << "_raw," << name << "_weighted";
    out << ",total,floored_total\n";
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        out << i;
        for (const auto& t : r.steps[i].terms)
            out << ',' << t.raw << ',' << t.weighted;
        out << ',' << r.steps[i].total << ',' << r.steps[i].floored_total << '\n';
    }
}

} // namespace smoe
