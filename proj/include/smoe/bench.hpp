#pragma once

// Batched inference latency: forward pass plus a reduction of the actions to
// their mean, timed on a monotonic clock.

#include <smoe/error.hpp>
#include <smoe/policy.hpp>
#include <smoe/rng.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <new>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace smoe {

struct BenchConfig {
    std::size_t batch = 6000;
    std::size_t passes = 1000;
    std::size_t warmup = 10;
    std::uint64_t seed = 0;
};

struct BenchReport {
    std::string name;
    std::size_t total_params = 0;
    std::size_t active_params = 0;
    std::size_t batch = 0;
    std::size_t passes = 0;
    std::size_t warmup = 0;
    std::vector<double> pass_seconds;
    double mean_seconds = 0.0;
    double std_seconds = 0.0;
    double checksum = 0.0; // sum of the reduced outputs, keeps the work observable
};

inline void summarize(BenchReport& r)
{
    const double n = static_cast<double>(r.pass_seconds.size());
    r.mean_seconds = std::accumulate(r.pass_seconds.begin(), r.pass_seconds.end(), 0.0) / n;
    double ss = 0.0;
    for (double t : r.pass_seconds)
        ss += (t - r.mean_seconds) * (t - r.mean_seconds);
    r.std_seconds = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
}

template <typename T>
T mean_output(const Batch<T>& y)
{
    double acc = 0.0;
    for (T v : y.values())
        acc += static_cast<double>(v);
    return static_cast<T>(acc / static_cast<double>(y.size()));
}

inline BenchReport bench_network(const ActorSpec& spec, const BenchConfig& cfg)
{
    require(cfg.passes > 0, ErrorKind::InvalidArgument, "bench: passes must be positive, nothing to measure");
    require(cfg.batch > 0, ErrorKind::InvalidArgument, "bench: batch must be positive");
    const auto counts = count_params(spec);
    BenchReport r;
    r.name = spec.name;
    r.total_params = counts.total;
    r.active_params = counts.active;
    r.batch = cfg.batch;
    r.passes = cfg.passes;
    r.warmup = cfg.warmup;
    try {
        Rng root(cfg.seed);
        Rng wrng = root.split(std::hash<std::string>{}(spec.name));
        Rng orng = root.split(0);
        auto net = build_actor<float>(spec, wrng, Mode::Inference);
        // Random gating weights so routing is spread across experts as in a trained net.
        if (net.is_moe()) {
            const float b = static_cast<float>(std::sqrt(1.0 / static_cast<double>(net.moe().in_dim)));
            fill_uniform(wrng, net.moe().w_gate.values(), -b, b);
        }
        Batch<float> obs(cfg.batch, spec.input_dim);
        fill_uniform(orng, obs.values(), -1.0f, 1.0f);

        for (std::size_t i = 0; i < cfg.warmup; ++i)
            r.checksum += mean_output(forward_policy(net, obs).actions);
        r.pass_seconds.reserve(cfg.passes);
        for (std::size_t i = 0; i < cfg.passes; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            const float m = mean_output(forward_policy(net, obs).actions);
            const auto t1 = std::chrono::steady_clock::now();
            r.checksum += m;
            r.pass_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
    } catch (const std::bad_alloc&) {
        fail(ErrorKind::Resource, "bench: out of memory for '" + spec.name + "' at batch " + std::to_string(cfg.batch) +
                                      "; reduce --batch");
    }
    summarize(r);
    return r;
}

using BenchProgress = std::function<void(const BenchReport&)>;

/// Reports come back sorted by active parameter count.
inline std::vector<BenchReport> run_bench(const std::vector<ActorSpec>& specs, const BenchConfig& cfg, const BenchProgress& progress = {})
{
    std::vector<BenchReport> out;
    for (const auto& s : specs) {
        out.push_back(bench_network(s, cfg));
        if (progress)
            progress(out.back());
    }
    std::stable_sort(out.begin(), out.end(), [](const BenchReport& a, const BenchReport& b) { return a.active_params < b.active_params; });
    return out;
}

/// How much slower `dense` is than `moe`, in percent of the MoE time.
inline double percent_slower(const BenchReport& dense, const BenchReport& moe)
{
    require(moe.mean_seconds > 0.0, ErrorKind::InvalidArgument, "percent_slower: MoE mean time is zero");
    return 100.0 * (dense.mean_seconds - moe.mean_seconds) / moe.mean_seconds;
}

inline void print_bench_table(std::ostream& out, const std::vector<BenchReport>& reports)
{
    out << "network,total_params,active_params,batch,passes,warmup,mean_s,std_s\n";
    for (const auto& r : reports)
        out << r.name << ',' << r.total_params << ',' << r.active_params << ',' << r.batch << ',' << r.passes << ',' << r.warmup << ','
            << r.mean_seconds << ',' << r.std_seconds << '\n';
}

} // namespace smoe
