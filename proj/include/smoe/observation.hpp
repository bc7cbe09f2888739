#pragma once

// The 591-wide actor observation:
//
//   proprio            48   ang_vel 3 | roll_pitch 2 | command 3 (v_x, 0, 0) | q 12 | dq 12 | last_action 12 | contacts 4
//   proprio_history   480   ten past proprio frames, newest first
//   perception_latent  32
//   heading             2
//   phys_latent        20
//   robot_info          9   velocity 3 | zero padding 6

#include <smoe/error.hpp>

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace smoe {

struct Span {
    std::string_view name;
    std::size_t offset = 0;
    std::size_t length = 0;

    std::size_t end() const noexcept { return offset + length; }
    bool contains(std::size_t i) const noexcept { return i >= offset && i < end(); }
};

namespace layout {

inline constexpr std::size_t kProprioDim = 48;
inline constexpr std::size_t kHistoryFrames = 10;
inline constexpr std::size_t kObservationDim = 591;
inline constexpr std::size_t kActionDim = 12;

// Top-level spans, contiguous and in order.
inline constexpr Span kProprio{"proprio", 0, 48};
inline constexpr Span kHistory{"proprio_history", 48, 480};
inline constexpr Span kPerception{"perception_latent", 528, 32};
inline constexpr Span kHeading{"heading", 560, 2};
inline constexpr Span kPhysLatent{"phys_latent", 562, 20};
inline constexpr Span kRobotInfo{"robot_info", 582, 9};

inline constexpr std::array<Span, 6> kTopLevel{kProprio, kHistory, kPerception, kHeading, kPhysLatent, kRobotInfo};

// Pieces of the current proprio frame (absolute offsets).
inline constexpr Span kAngVel{"ang_vel", 0, 3};
inline constexpr Span kRollPitch{"roll_pitch", 3, 2};
inline constexpr Span kCommand{"command", 5, 1};
inline constexpr Span kCommandPad{"command_pad", 6, 2};
inline constexpr Span kJointPos{"joint_pos", 8, 12};
inline constexpr Span kJointVel{"joint_vel", 20, 12};
inline constexpr Span kLastAction{"last_action", 32, 12};
inline constexpr Span kFootContact{"foot_contact", 44, 4};

inline constexpr Span kRobotVelocity{"robot_velocity", 582, 3};
inline constexpr Span kRobotPad{"robot_pad", 585, 6};

/// Entries that are structural zeros rather than measurements.
inline constexpr std::array<Span, 2> kPadding{kCommandPad, kRobotPad};

constexpr std::size_t total_length() noexcept
{
    std::size_t sum = 0;
    for (const auto& s : kTopLevel)
        sum += s.length;
    return sum;
}

static_assert(total_length() == kObservationDim);
static_assert(kAngVel.length + kRollPitch.length + kCommand.length + kCommandPad.length + kJointPos.length +
                  kJointVel.length + kLastAction.length + kFootContact.length ==
              kProprioDim);
static_assert(kHistory.length == kHistoryFrames * kProprioDim);

inline bool is_padding(std::size_t index) noexcept
{
    for (const auto& s : kPadding)
        if (s.contains(index))
            return true;
    return false;
}

} // namespace layout

/// Raw pieces of one observation, before padding and concatenation.
template <typename T>
struct ObservationParts {
    std::vector<T> ang_vel = std::vector<T>(3);
    std::vector<T> roll_pitch = std::vector<T>(2);
    T command_vx = T(0);
    std::vector<T> joint_pos = std::vector<T>(12);
    std::vector<T> joint_vel = std::vector<T>(12);
    std::vector<T> last_action = std::vector<T>(12);
    std::vector<T> foot_contact = std::vector<T>(4);
    std::vector<T> history = std::vector<T>(480);
    std::vector<T> perception_latent = std::vector<T>(32);
    std::vector<T> heading = std::vector<T>(2);
    std::vector<T> phys_latent = std::vector<T>(20);
    std::vector<T> robot_velocity = std::vector<T>(3);
};

namespace detail {

template <typename T>
void place(std::vector<T>& obs, const Span& span, std::span<const T> values)
{
    require(values.size() == span.length, ErrorKind::Dimension,
            "observation span '" + std::string(span.name) + "' expects " + std::to_string(span.length) + " values, got " +
                std::to_string(values.size()));
    std::copy(values.begin(), values.end(), obs.begin() + static_cast<std::ptrdiff_t>(span.offset));
}

} // namespace detail

template <typename T>
std::vector<T> assemble_observation(const ObservationParts<T>& p)
{
    std::vector<T> obs(layout::kObservationDim, T(0));
    detail::place<T>(obs, layout::kAngVel, p.ang_vel);
    detail::place<T>(obs, layout::kRollPitch, p.roll_pitch);
    obs[layout::kCommand.offset] = p.command_vx;
    detail::place<T>(obs, layout::kJointPos, p.joint_pos);
    detail::place<T>(obs, layout::kJointVel, p.joint_vel);
    detail::place<T>(obs, layout::kLastAction, p.last_action);
    detail::place<T>(obs, layout::kFootContact, p.foot_contact);
    detail::place<T>(obs, layout::kHistory, p.history);
    detail::place<T>(obs, layout::kPerception, p.perception_latent);
    detail::place<T>(obs, layout::kHeading, p.heading);
    detail::place<T>(obs, layout::kPhysLatent, p.phys_latent);
    detail::place<T>(obs, layout::kRobotVelocity, p.robot_velocity);
    return obs;
}

/// Current proprio frame (first 48 entries) of an assembled observation.
template <typename T>
std::span<const T> proprio_frame(std::span<const T> obs)
{
    require(obs.size() == layout::kObservationDim, ErrorKind::Dimension, "observation must have 591 entries");
    return obs.subspan(0, layout::kProprioDim);
}

/// Flattens up to ten 48-wide frames (newest first) into the history span.
template <typename T>
std::vector<T> stack_history(std::span<const std::vector<T>> frames)
{
    require(frames.size() == layout::kHistoryFrames, ErrorKind::Dimension,
            "proprio_history expects 10 frames, got " + std::to_string(frames.size()));
    std::vector<T> out;
    out.reserve(layout::kHistory.length);
    for (const auto& f : frames) {
        require(f.size() == layout::kProprioDim, ErrorKind::Dimension, "proprio_history frame must have 48 entries");
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

} // namespace smoe
