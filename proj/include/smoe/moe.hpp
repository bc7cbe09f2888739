#pragma once

// Sparsely-gated mixture-of-experts layer.
//
//   H(x)   = x*W_g + eps * softmax(x*W_noise)      eps ~ N(0,1), train mode only
//   G(x)   = softmax(KeepTopK(H(x), k))             non-top-k logits become -inf
//   y      = sum_i G(x)_i * (x*E_i)                 only the k active experts run
//
// Importance(X) = column sums of G over the batch; the balancing loss is
// w * CV(Importance)^2 with the population standard deviation.

#include <smoe/error.hpp>
#include <smoe/rng.hpp>
#include <smoe/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace smoe {

enum class Mode { Train, Inference };

template <typename T>
struct MoELayer {
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Matrix<T> w_gate;             // in_dim x n
    Matrix<T> w_noise;            // in_dim x n
    std::vector<Matrix<T>> experts; // n of in_dim x out_dim, no bias
    Mode mode = Mode::Inference;

    /// Zero gating/noise weights; experts uniform in +-sqrt(1/in_dim).
    static MoELayer create(std::size_t in_dim, std::size_t out_dim, std::size_t n, std::size_t k, Rng& rng,
                           Mode mode = Mode::Inference)
    {
        require(in_dim > 0 && out_dim > 0, ErrorKind::InvalidArgument, "moe: dimensions must be positive");
        require(k >= 1 && k <= n, ErrorKind::InvalidArgument,
                "moe: need 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
        MoELayer layer;
        layer.n = n;
        layer.k = k;
        layer.in_dim = in_dim;
        layer.out_dim = out_dim;
        layer.w_gate = Matrix<T>(in_dim, n);
        layer.w_noise = Matrix<T>(in_dim, n);
        layer.mode = mode;
        const double bound = std::sqrt(1.0 / static_cast<double>(in_dim));
        layer.experts.reserve(n);
        for (std::size_t e = 0; e < n; ++e) {
            Matrix<T> m(in_dim, out_dim);
            fill_uniform(rng, m.values(), -bound, bound);
            layer.experts.push_back(std::move(m));
        }
        return layer;
    }

    std::size_t params_per_expert() const noexcept { return in_dim * out_dim; }

    void validate() const
    {
        require(k >= 1 && k <= n, ErrorKind::InvalidArgument,
                "moe: k=" + std::to_string(k) + " must lie in [1, n=" + std::to_string(n) + "]");
        require(experts.size() == n, ErrorKind::State, "moe: expert count != n");
        require(w_gate.rows() == in_dim && w_gate.cols() == n, ErrorKind::State, "moe: W_g shape");
        require(w_noise.rows() == in_dim && w_noise.cols() == n, ErrorKind::State, "moe: W_noise shape");
        for (const auto& e : experts)
            require(e.rows() == in_dim && e.cols() == out_dim, ErrorKind::State, "moe: expert shape");
    }
};

template <typename T>
struct GateResult {
    Batch<T> logits;                    // H, before KeepTopK
    Batch<T> gates;                     // G
    std::vector<std::uint32_t> active;  // batch x k, in descending logit order
    std::size_t k = 0;

    std::size_t batch_size() const noexcept { return gates.batch_size(); }

    std::span<const std::uint32_t> active_indices(std::size_t b) const noexcept { return {active.data() + b * k, k}; }
};

/// Everything backward() needs to replay a forward pass exactly.
template <typename T>
struct MoERecord {
    Batch<T> input;
    Batch<T> noise;        // eps; empty when no noise was applied
    Batch<T> noise_scale;  // softmax(x*W_noise); empty when no noise was applied
    GateResult<T> gate;
    Batch<T> output;
    bool recorded = false;
};

template <typename T>
struct MoEOutput {
    Batch<T> y;
    GateResult<T> gate;
};

struct LoadBalanceReport {
    std::vector<double> importance;
    double cv = 0.0;
    double loss = 0.0;
    double w_importance = 0.0;
};

namespace detail {

/// Top-k of one logit row: highest first, ties to the lower index.
template <typename T>
void select_top_k(std::span<const T> h, std::size_t k, std::span<std::uint32_t> out, std::vector<std::uint32_t>& scratch)
{
    scratch.resize(h.size());
    std::iota(scratch.begin(), scratch.end(), 0u);
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return h[a] > h[b] || (h[a] == h[b] && a < b); });
    std::copy_n(scratch.begin(), k, out.begin());
}

template <typename T>
void check_call(const MoELayer<T>& layer, const Batch<T>& x)
{
    require(layer.k >= 1 && layer.k <= layer.n, ErrorKind::InvalidArgument,
            "moe: k=" + std::to_string(layer.k) + " exceeds n=" + std::to_string(layer.n));
    require(x.dim() == layer.in_dim, ErrorKind::Dimension,
            "moe: input dim " + std::to_string(x.dim()) + " != layer in_dim " + std::to_string(layer.in_dim));
}

template <typename T>
Batch<T> row_softmax(Batch<T> z)
{
    for (std::size_t b = 0; b < z.batch_size(); ++b)
        softmax_inplace(z.row(b));
    return z;
}

/// KeepTopK + softmax on precomputed logits.
template <typename T>
GateResult<T> gates_from_logits(Batch<T> h, std::size_t k)
{
    const std::size_t batch = h.batch_size();
    const std::size_t n = h.dim();
    GateResult<T> r;
    r.k = k;
    r.gates = Batch<T>(batch, n);
    r.active.resize(batch * k);
    std::vector<std::uint32_t> scratch;
    std::vector<T> masked(n);
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (std::size_t b = 0; b < batch; ++b) {
        auto idx = std::span<std::uint32_t>(r.active.data() + b * k, k);
        select_top_k<T>(h.row(b), k, idx, scratch);
        std::fill(masked.begin(), masked.end(), neg_inf);
        for (auto i : idx)
            masked[i] = h(b, i);
        softmax_inplace(std::span<T>(masked));
        std::copy(masked.begin(), masked.end(), r.gates.row(b).begin());
    }
    r.logits = std::move(h);
    return r;
}

struct Route {
    std::vector<std::uint32_t> rows;
};

/// Sample rows grouped by the expert they are routed to.
template <typename T>
std::vector<Route> group_by_expert(const GateResult<T>& g, std::size_t n)
{
    std::vector<Route> routes(n);
    for (std::size_t b = 0; b < g.batch_size(); ++b)
        for (auto e : g.active_indices(b))
            routes[e].rows.push_back(static_cast<std::uint32_t>(b));
    return routes;
}

template <typename T>
Batch<T> gather_rows(const Batch<T>& x, std::span<const std::uint32_t> rows)
{
    Batch<T> out(rows.size(), x.dim());
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(x.row(rows[r]).data(), x.dim(), out.row(r).data());
    return out;
}

template <typename T>
GateResult<T> gate_impl(const MoELayer<T>& layer, const Batch<T>& x, const Batch<T>* noise, Batch<T>* scale_out)
{
    check_call(layer, x);
    Batch<T> h = matmul(x, layer.w_gate);
    if (noise != nullptr) {
        require(noise->batch_size() == x.batch_size() && noise->dim() == layer.n, ErrorKind::Dimension,
                "moe: noise shape must be batch x n");
        Batch<T> scale = row_softmax(matmul(x, layer.w_noise));
        for (std::size_t i = 0; i < h.size(); ++i)
            h.values()[i] += noise->values()[i] * scale.values()[i];
        if (scale_out != nullptr)
            *scale_out = std::move(scale);
    }
    return gates_from_logits(std::move(h), layer.k);
}

template <typename T>
Batch<T> draw_noise(const MoELayer<T>& layer, std::size_t batch, Rng* rng)
{
    require(rng != nullptr, ErrorKind::InvalidArgument, "moe: train mode requires a random generator");
    Batch<T> eps(batch, layer.n);
    fill_standard_normal(*rng, eps.values());
    return eps;
}

} // namespace detail

/// Gate with an explicit noise draw (pass nullptr for none). Used for replay.
template <typename T>
GateResult<T> gate_with_noise(const MoELayer<T>& layer, const Batch<T>& x, const Batch<T>* noise)
{
    return detail::gate_impl(layer, x, noise, static_cast<Batch<T>*>(nullptr));
}

/// Train mode draws eps from `rng` (required); inference mode ignores it.
template <typename T>
GateResult<T> gate(const MoELayer<T>& layer, const Batch<T>& x, Rng* rng = nullptr)
{
    detail::check_call(layer, x);
    if (layer.mode == Mode::Inference)
        return gate_with_noise(layer, x, static_cast<const Batch<T>*>(nullptr));
    const Batch<T> eps = detail::draw_noise(layer, x.batch_size(), rng);
    return gate_with_noise(layer, x, &eps);
}

/// y = sum over active experts of G_i * (x*E_i), evaluated per expert group.
template <typename T>
Batch<T> combine_experts(const MoELayer<T>& layer, const Batch<T>& x, const GateResult<T>& g)
{
    Batch<T> y(x.batch_size(), layer.out_dim);
    const auto routes = detail::group_by_expert(g, layer.n);
    for (std::size_t e = 0; e < layer.n; ++e) {
        const auto& rows = routes[e].rows;
        if (rows.empty())
            continue;
        const Batch<T> xe = detail::gather_rows(x, rows);
        const Batch<T> ye = matmul(xe, layer.experts[e]);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const T w = g.gates(rows[r], e);
            auto dst = y.row(rows[r]);
            auto src = ye.row(r);
            for (std::size_t c = 0; c < layer.out_dim; ++c)
                dst[c] += w * src[c];
        }
    }
    return y;
}

template <typename T>
MoEOutput<T> forward(const MoELayer<T>& layer, const Batch<T>& x, Rng* rng = nullptr)
{
    GateResult<T> g = gate(layer, x, rng);
    Batch<T> y = combine_experts(layer, x, g);
    return {std::move(y), std::move(g)};
}

/// Forward pass that keeps the noise draw and gate state for backward().
/// Pass `noise` to replay a previous draw; otherwise train mode samples one.
template <typename T>
MoERecord<T> record_forward(const MoELayer<T>& layer, const Batch<T>& x, Rng* rng, const Batch<T>* noise = nullptr)
{
    detail::check_call(layer, x);
    MoERecord<T> rec;
    rec.input = x;
    if (noise != nullptr)
        rec.noise = *noise;
    else if (layer.mode == Mode::Train)
        rec.noise = detail::draw_noise(layer, x.batch_size(), rng);
    const Batch<T>* eps = rec.noise.empty() ? nullptr : &rec.noise;
    rec.gate = detail::gate_impl(layer, x, eps, eps ? &rec.noise_scale : nullptr);
    rec.output = combine_experts(layer, x, rec.gate);
    rec.recorded = true;
    return rec;
}

// ---------------------------------------------------------------------------
// Load balancing

template <typename T>
std::vector<double> importance(const Batch<T>& gates)
{
    std::vector<double> imp(gates.dim(), 0.0);
    for (std::size_t b = 0; b < gates.batch_size(); ++b)
        for (std::size_t i = 0; i < gates.dim(); ++i)
            imp[i] += static_cast<double>(gates(b, i));
    return imp;
}

inline LoadBalanceReport load_balance_from_importance(std::vector<double> imp, double w_importance)
{
    require(!imp.empty(), ErrorKind::InvalidArgument, "load balance: need at least one expert");
    const double n = static_cast<double>(imp.size());
    const double mean = std::accumulate(imp.begin(), imp.end(), 0.0) / n;
    require(mean > 0.0, ErrorKind::InvalidArgument, "load balance: mean importance is zero");
    double var = 0.0;
    for (double v : imp)
        var += (v - mean) * (v - mean);
    var /= n;
    LoadBalanceReport r;
    r.cv = std::sqrt(var) / mean;
    r.w_importance = w_importance;
    r.loss = w_importance * (r.cv * r.cv);
    r.importance = std::move(imp);
    return r;
}

template <typename T>
LoadBalanceReport load_balance_loss(const Batch<T>& gates, double w_importance)
{
    return load_balance_from_importance(importance(gates), w_importance);
}

/// d(CV^2)/d(importance_i) with population variance.
inline std::vector<double> cv_squared_gradient(std::span<const double> imp)
{
    const double n = static_cast<double>(imp.size());
    const double mean = std::accumulate(imp.begin(), imp.end(), 0.0) / n;
    double var = 0.0;
    for (double v : imp)
        var += (v - mean) * (v - mean);
    var /= n;
    std::vector<double> g(imp.size());
    for (std::size_t i = 0; i < imp.size(); ++i)
        g[i] = 2.0 * (imp[i] - mean) / (n * mean * mean) - 2.0 * var / (n * mean * mean * mean);
    return g;
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
struct MoEGradients {
    Matrix<T> w_gate;
    Matrix<T> w_noise;
    std::vector<Matrix<T>> experts;
    Batch<T> input;
    LoadBalanceReport balance;
};

/// Gradients of  L = f(y) + w_importance * CV(Importance)^2  given dL/dy.
/// The top-k selection is held fixed; only kept logits carry gradient.
template <typename T>
MoEGradients<T> backward(const MoELayer<T>& layer, const MoERecord<T>& rec, const Batch<T>& grad_y, double w_importance)
{
    require(rec.recorded, ErrorKind::State, "moe backward: no recorded forward state");
    const Batch<T>& x = rec.input;
    const GateResult<T>& g = rec.gate;
    const std::size_t batch = x.batch_size();
    const std::size_t n = layer.n;
    require(grad_y.batch_size() == batch && grad_y.dim() == layer.out_dim, ErrorKind::Dimension,
            "moe backward: upstream gradient shape must be batch x out_dim");
    require(g.k == layer.k && g.gates.dim() == n && g.batch_size() == batch, ErrorKind::State,
            "moe backward: record does not match layer");

    MoEGradients<T> grads;
    grads.w_gate = Matrix<T>(layer.in_dim, n);
    grads.w_noise = Matrix<T>(layer.in_dim, n);
    grads.experts.assign(n, Matrix<T>(layer.in_dim, layer.out_dim));
    grads.input = Batch<T>(batch, layer.in_dim);

    // dL/dG for kept entries: task term via expert outputs, plus the balance term.
    Batch<T> grad_gate(batch, n);
    if (w_importance != 0.0 && batch > 0) {
        grads.balance = load_balance_loss(g.gates, w_importance);
        const auto dcv = cv_squared_gradient(grads.balance.importance);
        for (std::size_t b = 0; b < batch; ++b)
            for (auto i : g.active_indices(b))
                grad_gate(b, i) = static_cast<T>(w_importance * dcv[i]);
    } else if (batch > 0) {
        grads.balance = load_balance_loss(g.gates, w_importance);
    }

    const auto routes = detail::group_by_expert(g, n);
    for (std::size_t e = 0; e < n; ++e) {
        const auto& rows = routes[e].rows;
        if (rows.empty())
            continue;
        const Batch<T> xe = detail::gather_rows(x, rows);
        const Batch<T> ye = matmul(xe, layer.experts[e]);
        Batch<T> dye(rows.size(), layer.out_dim);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t b = rows[r];
            const T w = g.gates(b, e);
            T dot = T(0);
            for (std::size_t c = 0; c < layer.out_dim; ++c) {
                dot += grad_y(b, c) * ye(r, c);
                dye(r, c) = w * grad_y(b, c);
            }
            grad_gate(b, e) += dot;
        }
        accumulate_outer(grads.experts[e], xe, dye);
        const Batch<T> dxe = matmul_transposed(dye, layer.experts[e]);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto dst = grads.input.row(rows[r]);
            auto src = dxe.row(r);
            for (std::size_t c = 0; c < layer.in_dim; ++c)
                dst[c] += src[c];
        }
    }

    // Softmax over the kept logits.
    Batch<T> grad_h(batch, n);
    for (std::size_t b = 0; b < batch; ++b) {
        T inner = T(0);
        for (auto i : g.active_indices(b))
            inner += g.gates(b, i) * grad_gate(b, i);
        for (auto i : g.active_indices(b))
            grad_h(b, i) = g.gates(b, i) * (grad_gate(b, i) - inner);
    }

    accumulate_outer(grads.w_gate, x, grad_h);
    {
        const Batch<T> dx = matmul_transposed(grad_h, layer.w_gate);
        for (std::size_t i = 0; i < dx.size(); ++i)
            grads.input.values()[i] += dx.values()[i];
    }

    if (!rec.noise.empty()) {
        // H += eps * s with s = softmax(x*W_noise) over all n experts.
        Batch<T> grad_z(batch, n);
        for (std::size_t b = 0; b < batch; ++b) {
            T inner = T(0);
            for (std::size_t i = 0; i < n; ++i)
                inner += rec.noise_scale(b, i) * grad_h(b, i) * rec.noise(b, i);
            for (std::size_t i = 0; i < n; ++i)
                grad_z(b, i) = rec.noise_scale(b, i) * (grad_h(b, i) * rec.noise(b, i) - inner);
        }
        accumulate_outer(grads.w_noise, x, grad_z);
        const Batch<T> dx = matmul_transposed(grad_z, layer.w_noise);
        for (std::size_t i = 0; i < dx.size(); ++i)
            grads.input.values()[i] += dx.values()[i];
    }
    return grads;
}

/// Smallest gap between the k-th and (k+1)-th logit in any row; +inf when k == n.
template <typename T>
double min_top_k_gap(const GateResult<T>& g)
{
    double gap = std::numeric_limits<double>::infinity();
    const std::size_t n = g.logits.dim();
    if (g.k >= n)
        return gap;
    std::vector<T> row;
    for (std::size_t b = 0; b < g.batch_size(); ++b) {
        row.assign(g.logits.row(b).begin(), g.logits.row(b).end());
        std::sort(row.begin(), row.end(), std::greater<T>());
        gap = std::min(gap, static_cast<double>(row[g.k - 1] - row[g.k]));
    }
    return gap;
}

} // namespace smoe
