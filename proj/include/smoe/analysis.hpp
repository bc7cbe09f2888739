#pragma once

// Expert utilization and gate sensitivity for a trained MoE actor.

#include <smoe/error.hpp>
#include <smoe/moe.hpp>
#include <smoe/observation.hpp>
#include <smoe/policy.hpp>
#include <smoe/reward_io.hpp>
#include <smoe/tensor.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace smoe {

struct GateTrace {
    std::size_t n = 0;
    std::size_t k = 0;
    Array2D<double> weights;          // timesteps x n
    std::vector<std::uint8_t> active; // timesteps x n, 1 where the expert is in the top-k

    std::size_t timesteps() const noexcept { return weights.rows(); }
    bool is_active(std::size_t t, std::size_t e) const { return active[t * n + e] != 0; }
};

namespace detail {

/// Dense layers ahead of the MoE layer, with the activations the backward pass needs.
template <typename T>
struct GateInput {
    std::vector<Batch<T>> pre; // pre-activation of each leading dense layer
    Batch<T> z;                // MoE input
};

template <typename T>
GateInput<T> gate_input(const PolicyNetwork<T>& net, const Batch<T>& obs)
{
    require(net.is_moe(), ErrorKind::SpecMismatch, "analysis requires an MoE actor, got dense network '" + net.spec.name + "'");
    require(obs.dim() == net.spec.input_dim, ErrorKind::Dimension,
            "observation dim " + std::to_string(obs.dim()) + " != " + std::to_string(net.spec.input_dim));
    GateInput<T> g;
    Batch<T> h = obs;
    for (std::size_t i = 0; i < net.spec.moe_index; ++i) {
        g.pre.push_back(apply_dense(std::get<DenseLayer<T>>(net.layers[i]), h));
        h = elu(g.pre.back());
    }
    g.z = std::move(h);
    return g;
}

} // namespace detail

/// Deterministic gate weights (no noise) for each row of `obs`.
template <typename T>
GateResult<T> gate_weights(const PolicyNetwork<T>& net, const Batch<T>& obs)
{
    const auto in = detail::gate_input(net, obs);
    return gate_with_noise(net.moe(), in.z, static_cast<const Batch<T>*>(nullptr));
}

template <typename T>
GateTrace record_trace(const PolicyNetwork<T>& net, const Batch<T>& obs_sequence)
{
    require(net.is_moe(), ErrorKind::SpecMismatch, "record_trace requires an MoE actor, got dense network '" + net.spec.name + "'");
    const auto& m = net.moe();
    GateTrace trace;
    trace.n = m.n;
    trace.k = m.k;
    trace.weights = Array2D<double>(obs_sequence.batch_size(), m.n);
    trace.active.assign(obs_sequence.batch_size() * m.n, 0);
    // One step at a time: a batched GEMM may round identical rows differently.
    Batch<T> x(1, obs_sequence.dim());
    for (std::size_t t = 0; t < obs_sequence.batch_size(); ++t) {
        std::copy(obs_sequence.row(t).begin(), obs_sequence.row(t).end(), x.values().begin());
        const auto g = gate_weights(net, x);
        for (std::size_t e = 0; e < m.n; ++e)
            trace.weights(t, e) = static_cast<double>(g.gates(0, e));
        for (auto e : g.active_indices(0))
            trace.active[t * m.n + e] = 1;
    }
    return trace;
}

/// Fraction of timesteps in which each expert is selected.
inline std::vector<double> utilization(const GateTrace& trace)
{
    require(trace.timesteps() > 0, ErrorKind::InvalidArgument, "utilization: empty trace");
    std::vector<double> u(trace.n, 0.0);
    for (std::size_t t = 0; t < trace.timesteps(); ++t)
        for (std::size_t e = 0; e < trace.n; ++e)
            u[e] += trace.is_active(t, e) ? 1.0 : 0.0;
    for (double& v : u)
        v /= static_cast<double>(trace.timesteps());
    return u;
}

struct SensitivityReport {
    std::vector<Span> spans;
    Array2D<double> values;          // n x spans
    std::vector<std::size_t> steps;  // timesteps with a nonzero gradient, per expert
    std::vector<bool> present;       // false when an expert never had one

    std::size_t experts() const noexcept { return values.rows(); }

    double at(std::size_t expert, std::string_view span) const
    {
        for (std::size_t s = 0; s < spans.size(); ++s)
            if (spans[s].name == span)
                return values(expert, s);
        fail(ErrorKind::InvalidArgument, "no span '" + std::string(span) + "' in report");
    }
};

inline std::vector<Span> sensitivity_spans()
{
    std::vector<Span> s(layout::kTopLevel.begin(), layout::kTopLevel.end());
    s.insert(s.end(), layout::kPadding.begin(), layout::kPadding.end());
    return s;
}

/// d G_i / d obs for one observation row: n x obs_dim. The top-k set is held fixed
/// and padding entries are constants, so their columns are zero.
template <typename T>
Batch<T> gate_jacobian(const PolicyNetwork<T>& net, std::span<const T> obs)
{
    Batch<T> x(1, obs.size());
    std::copy(obs.begin(), obs.end(), x.values().begin());
    const auto in = detail::gate_input(net, x);
    const auto& m = net.moe();
    const auto g = gate_with_noise(m, in.z, static_cast<const Batch<T>*>(nullptr));

    // dG_i/dH_j = G_i (delta_ij - G_j) over kept i, j
    Batch<T> dh(m.n, m.n);
    const auto kept = g.active_indices(0);
    for (auto i : kept)
        for (auto j : kept)
            dh(i, j) = g.gates(0, i) * ((i == j ? T(1) : T(0)) - g.gates(0, j));

    Batch<T> d = matmul_transposed(dh, m.w_gate); // n x z_dim
    for (std::size_t l = net.spec.moe_index; l-- > 0;) {
        const auto& pre = in.pre[l];
        for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c)
                d(r, c) *= static_cast<T>(elu_derivative(static_cast<double>(pre(0, c))));
        d = matmul_transposed(d, std::get<DenseLayer<T>>(net.layers[l]).weight);
    }
    if (obs.size() == layout::kObservationDim)
        for (std::size_t c = 0; c < obs.size(); ++c)
            if (layout::is_padding(c))
                for (std::size_t r = 0; r < d.rows(); ++r)
                    d(r, c) = T(0);
    return d;
}

template <typename T>
SensitivityReport sensitivity(const PolicyNetwork<T>& net, const Batch<T>& obs_sequence)
{
    require(net.is_moe(), ErrorKind::SpecMismatch, "sensitivity requires an MoE actor, got dense network '" + net.spec.name + "'");
    require(obs_sequence.dim() == layout::kObservationDim, ErrorKind::Dimension,
            "sensitivity: observations must have " + std::to_string(layout::kObservationDim) + " entries");
    const std::size_t n = net.moe().n;
    SensitivityReport rep;
    rep.spans = sensitivity_spans();
    rep.values = Array2D<double>(n, rep.spans.size());
    rep.steps.assign(n, 0);
    rep.present.assign(n, false);
    for (std::size_t t = 0; t < obs_sequence.batch_size(); ++t) {
        const auto jac = gate_jacobian(net, obs_sequence.row(t));
        for (std::size_t e = 0; e < n; ++e) {
            const auto row = jac.row(e);
            if (std::all_of(row.begin(), row.end(), [](T v) { return v == T(0); }))
                continue;
            ++rep.steps[e];
            for (std::size_t s = 0; s < rep.spans.size(); ++s) {
                double acc = 0.0;
                for (std::size_t c = rep.spans[s].offset; c < rep.spans[s].offset + rep.spans[s].length; ++c)
                    acc += std::abs(static_cast<double>(row[c]));
                rep.values(e, s) += acc / static_cast<double>(rep.spans[s].length);
            }
        }
    }
    for (std::size_t e = 0; e < n; ++e) {
        rep.present[e] = rep.steps[e] > 0;
        if (rep.present[e])
            for (std::size_t s = 0; s < rep.spans.size(); ++s)
                rep.values(e, s) /= static_cast<double>(rep.steps[e]);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_trace_csv(std::ostream& out, const GateTrace& trace)
{
    out << std::setprecision(std::numeric_limits<double>::max_digits10) << "timestep";
    for (std::size_t e = 0; e < trace.n; ++e)
        out << ",expert_" << e;
    out << '\n';
    for (std::size_t t = 0; t < trace.timesteps(); ++t) {
        out << t;
        for (std::size_t e = 0; e < trace.n; ++e)
            out << ',' << trace.weights(t, e);
        out << '\n';
    }
}

inline void write_report_csv(std::ostream& out, const SensitivityReport& rep)
{
    out << std::setprecision(std::numeric_limits<double>::max_digits10) << "expert,present,steps";
    for (const auto& s : rep.spans)
        out << ',' << s.name;
    out << '\n';
    for (std::size_t e = 0; e < rep.experts(); ++e) {
        out << e << ',' << (rep.present[e] ? 1 : 0) << ',' << rep.steps[e];
        for (std::size_t s = 0; s < rep.spans.size(); ++s)
            out << ',' << rep.values(e, s);
        out << '\n';
    }
}

namespace detail {

template <typename Writer, typename V>
void export_to(const std::string& path, Writer w, const V& v)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path + "' for writing");
    w(out, v);
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write to '" + path + "' failed");
}

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(std::istream& in, const std::string& source)
{
    CsvTable t;
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, source + ": missing header");
    t.header = split_csv(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty())
            continue;
        const auto cells = split_csv(line);
        const auto where = source + ":" + std::to_string(lineno);
        require(cells.size() == t.header.size(), ErrorKind::Format,
                where + ": expected " + std::to_string(t.header.size()) + " columns, got " + std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto& c : cells)
            row.push_back(parse_double(c, where));
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace detail

inline void export_csv(const GateTrace& trace, const std::string& path) { detail::export_to(path, write_trace_csv, trace); }
inline void export_csv(const SensitivityReport& rep, const std::string& path) { detail::export_to(path, write_report_csv, rep); }

/// Reads weights back; active sets are rebuilt from nonzero weights.
inline GateTrace read_trace_csv(std::istream& in, std::size_t k, const std::string& source = "<trace>")
{
    const auto t = detail::read_csv(in, source);
    require(!t.header.empty() && t.header[0] == "timestep", ErrorKind::Format, source + ": first column must be 'timestep'");
    GateTrace trace;
    trace.n = t.header.size() - 1;
    trace.k = k;
    trace.weights = Array2D<double>(t.rows.size(), trace.n);
    trace.active.assign(t.rows.size() * trace.n, 0);
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t e = 0; e < trace.n; ++e) {
            trace.weights(r, e) = t.rows[r][e + 1];
            trace.active[r * trace.n + e] = t.rows[r][e + 1] != 0.0;
        }
    return trace;
}

inline SensitivityReport read_report_csv(std::istream& in, const std::string& source = "<report>")
{
    const auto t = detail::read_csv(in, source);
    require(t.header.size() >= 3 && t.header[0] == "expert" && t.header[1] == "present" && t.header[2] == "steps", ErrorKind::Format,
            source + ": header must start with expert,present,steps");
    SensitivityReport rep;
    const auto known = sensitivity_spans();
    for (std::size_t c = 3; c < t.header.size(); ++c) {
        auto it = std::find_if(known.begin(), known.end(), [&](const Span& s) { return s.name == t.header[c]; });
        require(it != known.end(), ErrorKind::Format, source + ": unknown span column '" + t.header[c] + "'");
        rep.spans.push_back(*it);
    }
    rep.values = Array2D<double>(t.rows.size(), rep.spans.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        rep.present.push_back(t.rows[r][1] != 0.0);
        rep.steps.push_back(static_cast<std::size_t>(t.rows[r][2]));
        for (std::size_t s = 0; s < rep.spans.size(); ++s)
            rep.values(r, s) = t.rows[r][s + 3];
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Observation sequences: 16-byte header ("SOBS", u32 version, u32 timesteps, u32 dim),
// then timesteps*dim float32, all little-endian.

namespace obs_file {
inline constexpr std::array<char, 4> kMagic{'S', 'O', 'B', 'S'};
inline constexpr std::uint32_t kVersion = 1;
} // namespace obs_file

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

} // namespace detail

template <typename T>
std::string encode_obs_sequence(const Batch<T>& seq)
{
    std::string out(obs_file::kMagic.begin(), obs_file::kMagic.end());
    detail::put_u32(out, obs_file::kVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(seq.batch_size()));
    detail::put_u32(out, static_cast<std::uint32_t>(seq.dim()));
    out.reserve(16 + 4 * seq.size());
    for (T v : seq.values())
        detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

template <typename T>
void write_obs_sequence(const std::string& path, const Batch<T>& seq)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path + "' for writing");
    const auto bytes = encode_obs_sequence(seq);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "write to '" + path + "' failed");
}

template <typename T>
Batch<T> decode_obs_sequence(const std::vector<unsigned char>& bytes, const std::string& source = "<obs>")
{
    require(bytes.size() >= 16, ErrorKind::Format, source + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    require(std::equal(obs_file::kMagic.begin(), obs_file::kMagic.end(), bytes.begin()), ErrorKind::Format,
            source + ": bad magic, not an observation sequence");
    const auto version = detail::get_u32(bytes.data() + 4);
    require(version == obs_file::kVersion, ErrorKind::Version, source + ": unsupported version " + std::to_string(version));
    const std::size_t steps = detail::get_u32(bytes.data() + 8), dim = detail::get_u32(bytes.data() + 12);
    const std::size_t expected = 16 + 4 * steps * dim;
    require(bytes.size() == expected, ErrorKind::Format,
            source + ": expected " + std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
    Batch<T> seq(steps, dim);
    for (std::size_t i = 0; i < steps * dim; ++i)
        seq.values()[i] = static_cast<T>(std::bit_cast<float>(detail::get_u32(bytes.data() + 16 + 4 * i)));
    return seq;
}

/// Binary container or trajectory text file (every step needs an "obs" line).
template <typename T>
Batch<T> load_obs_sequence(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open observation file '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 4 && std::equal(obs_file::kMagic.begin(), obs_file::kMagic.end(), bytes.begin()))
        return decode_obs_sequence<T>(bytes, path);
    std::istringstream text(std::string(bytes.begin(), bytes.end()));
    const auto traj = parse_trajectory(text, path);
    Batch<T> seq(traj.steps.size(), layout::kObservationDim);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        require(!traj.steps[t].obs.empty(), ErrorKind::Format, path + ": step " + std::to_string(t) + " has no 'obs' line");
        for (std::size_t c = 0; c < layout::kObservationDim; ++c)
            seq(t, c) = static_cast<T>(traj.steps[t].obs[c]);
    }
    return seq;
}

} // namespace smoe
