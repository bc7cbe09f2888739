#pragma once

// Actor networks: the MoE actor (linear -> MoE -> linear -> head) and the
// dense MLP baselines, with parameter accounting.

#include <smoe/config.hpp>
#include <smoe/error.hpp>
#include <smoe/moe.hpp>
#include <smoe/observation.hpp>
#include <smoe/rng.hpp>
#include <smoe/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace smoe {

enum class ActorKind { Moe, Dense };

inline const char* to_string(ActorKind k) noexcept { return k == ActorKind::Moe ? "moe" : "dense"; }

struct ActorSpec {
    std::string name = "custom";
    ActorKind kind = ActorKind::Dense;
    std::vector<std::size_t> hidden;
    std::size_t moe_index = 1; // which hidden layer is the MoE (MoE kind only)
    std::size_t n = 16;
    std::size_t k = 4;
    double w_importance = 0.1;
    std::size_t input_dim = layout::kObservationDim;
    std::size_t output_dim = layout::kActionDim;

    void validate() const
    {
        require(!hidden.empty(), ErrorKind::InvalidArgument, "actor spec '" + name + "': no hidden layers");
        require(input_dim > 0 && output_dim > 0, ErrorKind::InvalidArgument,
                "actor spec '" + name + "': input/output dims must be positive");
        for (auto h : hidden)
            require(h > 0, ErrorKind::InvalidArgument, "actor spec '" + name + "': hidden sizes must be positive");
        if (kind == ActorKind::Moe) {
            require(moe_index < hidden.size(), ErrorKind::InvalidArgument, "actor spec '" + name + "': moe_index out of range");
            require(k >= 1 && k <= n, ErrorKind::InvalidArgument, "actor spec '" + name + "': need 1 <= k <= n");
        }
    }

    bool operator==(const ActorSpec&) const = default;
};

namespace presets {

inline ActorSpec moe_default()
{
    return {"moe_top4of16", ActorKind::Moe, {512, 256, 256}, 1, 16, 4, 0.1};
}

inline ActorSpec dense(std::string name, std::vector<std::size_t> hidden)
{
    ActorSpec s;
    s.name = std::move(name);
    s.kind = ActorKind::Dense;
    s.hidden = std::move(hidden);
    return s;
}

inline ActorSpec dense_small() { return dense("dense_small", {256, 128, 64}); }
inline ActorSpec dense_medium() { return dense("dense_medium", {512, 256, 128}); }
inline ActorSpec dense_large() { return dense("dense_large", {512, 512, 387}); }
inline ActorSpec dense_xl() { return dense("dense_xl", {1024, 620, 512}); }

inline std::vector<ActorSpec> dense_baselines() { return {dense_small(), dense_medium(), dense_large(), dense_xl()}; }

} // namespace presets

// ---------------------------------------------------------------------------
// Parameter accounting

struct LayerParams {
    std::string name;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::size_t weights = 0;
    std::size_t biases = 0;
    std::size_t total = 0;
    std::size_t active = 0;
};

struct ParamReport {
    std::vector<LayerParams> layers;
    std::size_t total = 0;
    std::size_t active = 0;
    std::size_t weights_only = 0;
    std::size_t params_per_expert = 0; // 0 for dense networks

    double active_ratio() const noexcept { return total ? static_cast<double>(active) / static_cast<double>(total) : 0.0; }
};

/// Dense layers carry biases, experts do not.
inline ParamReport count_params(const ActorSpec& spec)
{
    spec.validate();
    ParamReport r;
    std::size_t in = spec.input_dim;
    auto add = [&](LayerParams lp) {
        r.total += lp.total;
        r.active += lp.active;
        r.weights_only += lp.weights;
        r.layers.push_back(std::move(lp));
    };
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::size_t out = spec.hidden[i];
        LayerParams lp;
        lp.in_dim = in;
        lp.out_dim = out;
        if (spec.kind == ActorKind::Moe && i == spec.moe_index) {
            lp.name = "moe" + std::to_string(i);
            const std::size_t per_expert = in * out;
            lp.weights = spec.n * per_expert + 2 * in * spec.n;
            lp.total = lp.weights;
            lp.active = lp.total - (spec.n - spec.k) * per_expert;
            r.params_per_expert = per_expert;
        } else {
            lp.name = "linear" + std::to_string(i);
            lp.weights = in * out;
            lp.biases = out;
            lp.total = lp.active = lp.weights + lp.biases;
        }
        add(std::move(lp));
        in = out;
    }
    LayerParams head;
    head.name = "head";
    head.in_dim = in;
    head.out_dim = spec.output_dim;
    head.weights = in * spec.output_dim;
    head.biases = spec.output_dim;
    head.total = head.active = head.weights + head.biases;
    add(std::move(head));
    return r;
}

namespace presets {

/// MoE with the middle (expert output) width chosen so that the total
/// parameter count lands as close as possible to `target_total`.
inline ActorSpec moe_param_matched(std::size_t target_total, ActorSpec base = moe_default())
{
    require(base.kind == ActorKind::Moe, ErrorKind::InvalidArgument, "moe_param_matched: base must be an MoE spec");
    std::size_t best_width = 1;
    std::size_t best_err = static_cast<std::size_t>(-1);
    const std::size_t upper = 1 + base.hidden[base.moe_index] * 8;
    for (std::size_t w = 1; w <= upper; ++w) {
        base.hidden[base.moe_index] = w;
        const std::size_t total = count_params(base).total;
        const std::size_t err = total > target_total ? total - target_total : target_total - total;
        if (err < best_err) {
            best_err = err;
            best_width = w;
        }
        if (total > target_total)
            break;
    }
    base.hidden[base.moe_index] = best_width;
    base.name = "moe_top" + std::to_string(base.k) + "of" + std::to_string(base.n) + "_w" + std::to_string(best_width);
    return base;
}

/// Dense network with the Extra-Large proportions scaled to `target_total`.
inline ActorSpec dense_matched(std::size_t target_total)
{
    const ActorSpec xl = dense_xl();
    ActorSpec best = xl;
    std::size_t best_err = static_cast<std::size_t>(-1);
    for (double scale = 0.05; scale <= 4.0; scale += 0.0005) {
        ActorSpec s = xl;
        for (auto& h : s.hidden)
            h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) * scale)));
        const std::size_t total = count_params(s).total;
        const std::size_t err = total > target_total ? total - target_total : target_total - total;
        if (err < best_err) {
            best_err = err;
            best = s;
        }
    }
    best.name = "dense_matched_" + std::to_string(best.hidden[0]) + "_" + std::to_string(best.hidden[1]) + "_" +
                std::to_string(best.hidden[2]);
    return best;
}

/// Latency comparison set: four dense baselines plus an MoE whose
/// total parameter count matches the Extra-Large baseline.
inline std::vector<ActorSpec> latency_set()
{
    auto set = dense_baselines();
    set.push_back(moe_param_matched(count_params(dense_xl()).total));
    return set;
}

inline ActorSpec by_name(std::string_view name)
{
    if (name == "small" || name == "dense_small")
        return dense_small();
    if (name == "medium" || name == "dense_medium")
        return dense_medium();
    if (name == "large" || name == "dense_large")
        return dense_large();
    if (name == "xl" || name == "extra_large" || name == "dense_xl")
        return dense_xl();
    if (name == "moe" || name == "moe_default" || name == "moe_top4of16")
        return moe_default();
    if (name == "moe_matched")
        return moe_param_matched(count_params(dense_xl()).total);
    fail(ErrorKind::InvalidArgument, "unknown actor preset '" + std::string(name) + "'");
}

} // namespace presets

/// Keys: preset, name, kind (moe|dense), hidden (comma separated), moe_index, n, k, w_importance.
inline ActorSpec actor_from_config(const KeyValueConfig& kv, ActorSpec base = presets::moe_default())
{
    if (const auto preset = kv.get("preset"))
        base = presets::by_name(*preset);
    base.name = kv.get_string("name", base.name);
    if (const auto kind = kv.get("kind")) {
        require(*kind == "moe" || *kind == "dense", ErrorKind::InvalidArgument, "kind must be 'moe' or 'dense'");
        base.kind = *kind == "moe" ? ActorKind::Moe : ActorKind::Dense;
    }
    if (const auto hidden = kv.get("hidden")) {
        base.hidden.clear();
        std::string_view rest = *hidden;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            base.hidden.push_back(parse_size(rest.substr(0, comma), "hidden"));
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
    }
    base.moe_index = kv.get_size("moe_index", base.moe_index);
    base.n = kv.get_size("n", base.n);
    base.k = kv.get_size("k", base.k);
    base.w_importance = kv.get_double("w_importance", base.w_importance);
    base.validate();
    return base;
}

// ---------------------------------------------------------------------------
// Networks

template <typename T>
struct DenseLayer {
    Matrix<T> weight; // in x out
    std::vector<T> bias;

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }
};

template <typename T>
using Layer = std::variant<DenseLayer<T>, MoELayer<T>>;

template <typename T>
struct PolicyNetwork {
    ActorSpec spec;
    std::vector<Layer<T>> layers; // ELU after every layer except the last

    bool is_moe() const noexcept { return spec.kind == ActorKind::Moe; }

    const MoELayer<T>& moe() const
    {
        require(is_moe(), ErrorKind::SpecMismatch, "network '" + spec.name + "' has no MoE layer");
        return std::get<MoELayer<T>>(layers[spec.moe_index]);
    }

    MoELayer<T>& moe()
    {
        require(is_moe(), ErrorKind::SpecMismatch, "network '" + spec.name + "' has no MoE layer");
        return std::get<MoELayer<T>>(layers[spec.moe_index]);
    }
};

template <typename T>
PolicyNetwork<T> build_actor(const ActorSpec& spec, Rng& rng, Mode mode = Mode::Inference)
{
    spec.validate();
    PolicyNetwork<T> net;
    net.spec = spec;
    std::size_t in = spec.input_dim;
    auto dense = [&](std::size_t a, std::size_t b) {
        DenseLayer<T> l{Matrix<T>(a, b), std::vector<T>(b, T(0))};
        const double bound = std::sqrt(1.0 / static_cast<double>(a));
        fill_uniform(rng, l.weight.values(), -bound, bound);
        return l;
    };
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
        const std::size_t out = spec.hidden[i];
        if (spec.kind == ActorKind::Moe && i == spec.moe_index)
            net.layers.emplace_back(MoELayer<T>::create(in, out, spec.n, spec.k, rng, mode));
        else
            net.layers.emplace_back(dense(in, out));
        in = out;
    }
    net.layers.emplace_back(dense(in, spec.output_dim));
    return net;
}

/// Counts taken from the allocated tensors.
template <typename T>
ParamReport count_params(const PolicyNetwork<T>& net)
{
    ParamReport r;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        LayerParams lp;
        if (const auto* d = std::get_if<DenseLayer<T>>(&net.layers[i])) {
            lp.name = i + 1 == net.layers.size() ? "head" : "linear" + std::to_string(i);
            lp.in_dim = d->in_dim();
            lp.out_dim = d->out_dim();
            lp.weights = d->weight.size();
            lp.biases = d->bias.size();
            lp.total = lp.active = lp.weights + lp.biases;
        } else {
            const auto& m = std::get<MoELayer<T>>(net.layers[i]);
            lp.name = "moe" + std::to_string(i);
            lp.in_dim = m.in_dim;
            lp.out_dim = m.out_dim;
            lp.weights = m.w_gate.size() + m.w_noise.size();
            for (const auto& e : m.experts)
                lp.weights += e.size();
            lp.total = lp.weights;
            lp.active = lp.total - (m.n - m.k) * m.params_per_expert();
            r.params_per_expert = m.params_per_expert();
        }
        r.total += lp.total;
        r.active += lp.active;
        r.weights_only += lp.weights;
        r.layers.push_back(std::move(lp));
    }
    return r;
}

template <typename T>
Batch<T> apply_dense(const DenseLayer<T>& l, const Batch<T>& x)
{
    Batch<T> y = matmul(x, l.weight);
    add_row_vector(y, std::span<const T>(l.bias));
    return y;
}

template <typename T>
struct PolicyOutput {
    Batch<T> actions;
    std::optional<GateResult<T>> gate;
};

/// Deterministic mean action. `rng` is only consulted by an MoE layer in train mode.
template <typename T>
PolicyOutput<T> forward_policy(const PolicyNetwork<T>& net, const Batch<T>& obs, Rng* rng = nullptr)
{
    require(obs.dim() == net.spec.input_dim, ErrorKind::Dimension,
            "forward_policy: observation dim " + std::to_string(obs.dim()) + " != " + std::to_string(net.spec.input_dim));
    PolicyOutput<T> out;
    Batch<T> h;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Batch<T>& in = i == 0 ? obs : h;
        if (const auto* d = std::get_if<DenseLayer<T>>(&net.layers[i])) {
            h = apply_dense(*d, in);
        } else {
            auto r = forward(std::get<MoELayer<T>>(net.layers[i]), in, rng);
            h = std::move(r.y);
            out.gate = std::move(r.gate);
        }
        if (i + 1 < net.layers.size())
            elu_inplace(h);
    }
    out.actions = std::move(h);
    return out;
}

} // namespace smoe
