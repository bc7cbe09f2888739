#include <smoe/analysis.hpp>
#include <smoe/bench.hpp>
#include <smoe/config.hpp>
#include <smoe/depth.hpp>
#include <smoe/depth_io.hpp>
#include <smoe/domain_rand.hpp>
#include <smoe/policy.hpp>
#include <smoe/reward_io.hpp>
#include <smoe/train_lite.hpp>
#include <smoe/weights.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

using namespace smoe;

namespace {

struct Options {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
    std::string mode;
    std::size_t batch = 6000;
    std::size_t passes = 1000;
    std::size_t warmup = 10;
    std::vector<std::string> nets;
    std::string input;
    std::string weights;
    std::string obs;
    std::string dump_dir;
    std::optional<double> blur_sigma;
    std::string flooring = "step";
    std::optional<double> w_importance;
};

// Stream ids for Rng::split, one per subcommand.
enum Stream : std::uint64_t { kInit = 1, kDepth = 2, kTrainLite = 3, kBench = 4 };

KeyValueConfig load_config(const Options& o) { return o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config); }

void warn_unused(const KeyValueConfig& kv)
{
    for (const auto& k : kv.unused_keys())
        std::cerr << "warning: config key '" << k << "' was not used\n";
}

/// Writes to --out, or stdout when it is empty.
template <typename F>
void emit(const std::string& path, F write)
{
    if (path.empty() || path == "-") {
        write(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + path + "' for writing");
    write(out);
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write to '" + path + "' failed");
}

std::vector<ActorSpec> resolve_nets(const Options& o, std::vector<ActorSpec> fallback)
{
    std::vector<ActorSpec> specs;
    for (const auto& n : o.nets)
        specs.push_back(presets::by_name(n));
    if (!o.config.empty()) {
        const auto kv = load_config(o);
        specs.push_back(actor_from_config(kv));
        warn_unused(kv);
    }
    return specs.empty() ? fallback : specs;
}

int cmd_params(const Options& o)
{
    auto fallback = presets::dense_baselines();
    fallback.push_back(presets::moe_default());
    fallback.push_back(presets::moe_param_matched(count_params(presets::dense_xl()).total));
    const auto specs = resolve_nets(o, fallback);
    // Published actor sizes for the same architectures, in parameters.
    auto reference = [](const ActorSpec& s) -> std::pair<double, double> {
        if (s == presets::dense_small())
            return {0.2e6, 0.2e6};
        if (s == presets::dense_medium())
            return {0.5e6, 0.5e6};
        if (s == presets::dense_large())
            return {0.8e6, 0.8e6};
        if (s == presets::dense_xl())
            return {1.6e6, 1.6e6};
        if (s.kind == ActorKind::Moe && s.n == 16 && s.k == 4)
            return {1.6e6, 0.8e6};
        return {0.0, 0.0};
    };
    emit(o.out, [&](std::ostream& out) {
        out << "network,kind,hidden,total,active,weights_only,params_per_expert,reference_total,reference_active\n";
        for (const auto& s : specs) {
            const auto r = count_params(s);
            const auto [rt, ra] = reference(s);
            out << s.name << ',' << to_string(s.kind) << ',';
            for (std::size_t i = 0; i < s.hidden.size(); ++i)
                out << (i ? "x" : "") << s.hidden[i];
            out << ',' << r.total << ',' << r.active << ',' << r.weights_only << ',' << r.params_per_expert << ',';
            if (rt > 0)
                out << static_cast<std::size_t>(rt) << ',' << static_cast<std::size_t>(ra);
            else
                out << ',';
            out << '\n';
        }
    });
    return 0;
}

int cmd_init(const Options& o)
{
    require(!o.out.empty(), ErrorKind::InvalidArgument, "init: --out is required");
    const auto specs = resolve_nets(o, {presets::moe_default()});
    require(specs.size() == 1, ErrorKind::InvalidArgument, "init: give exactly one network");
    Rng rng = Rng(o.seed).split(kInit);
    auto net = build_actor<float>(specs[0], rng);
    if (net.is_moe()) {
        const float b = static_cast<float>(std::sqrt(1.0 / static_cast<double>(net.moe().in_dim)));
        fill_uniform(rng, net.moe().w_gate.values(), -b, b);
    }
    save_weights(o.out, net);
    std::cerr << "wrote " << specs[0].name << " (" << count_params(net).total << " parameters) to " << o.out << '\n';
    return 0;
}

int cmd_bench(const Options& o)
{
    const auto specs = resolve_nets(o, presets::latency_set());
    BenchConfig cfg{o.batch, o.passes, o.warmup, Rng(o.seed).split(kBench).next_u64()};
    if (o.batch != 6000)
        std::cerr << "note: batch reduced/changed from 6000 to " << o.batch << '\n';
    std::cerr << "benchmarking " << specs.size() << " networks, batch " << cfg.batch << ", " << cfg.passes << " passes (+"
              << cfg.warmup << " warm-up)\n";
    const auto reports = run_bench(specs, cfg, [](const BenchReport& r) {
        std::cerr << "  " << r.name << ": " << std::scientific << std::setprecision(3) << r.mean_seconds << " s +- " << r.std_seconds
                  << std::defaultfloat << '\n';
    });
    emit(o.out, [&](std::ostream& out) { print_bench_table(out, reports); });
    for (const auto& moe : reports) {
        const bool is_moe = moe.active_params < moe.total_params;
        if (!is_moe)
            continue;
        const BenchReport* match = nullptr;
        for (const auto& d : reports)
            if (d.active_params == d.total_params &&
                (!match || std::abs(double(d.total_params) - double(moe.total_params)) <
                               std::abs(double(match->total_params) - double(moe.total_params))))
                match = &d;
        if (match)
            std::cerr << match->name << " (" << match->total_params << " params) vs " << moe.name << " (" << moe.total_params
                      << " total, " << moe.active_params << " active): dense is " << std::fixed << std::setprecision(1)
                      << percent_slower(*match, moe) << "% slower\n"
                      << std::defaultfloat;
    }
    return 0;
}

int cmd_depth(const Options& o)
{
    require(!o.out.empty(), ErrorKind::InvalidArgument, "depth: --out is required");
    PipelineConfig cfg;
    const auto kv = load_config(o);
    apply_config(cfg, kv);
    warn_unused(kv);
    if (!o.mode.empty()) {
        require(o.mode == "train" || o.mode == "deploy", ErrorKind::InvalidArgument, "--mode must be 'train' or 'deploy'");
        cfg.mode = o.mode == "train" ? PipelineMode::Train : PipelineMode::Deploy;
    }
    if (o.blur_sigma)
        cfg.blur_sigma = o.blur_sigma;
    const auto img = read_depth(o.input);
    Rng rng = Rng(o.seed).split(kDepth);
    std::vector<DepthImage> stages;
    const auto result = run_pipeline(img, cfg, rng, o.dump_dir.empty() ? nullptr : &stages);
    write_pfm(o.out, result);
    if (!o.dump_dir.empty()) {
        std::filesystem::create_directories(o.dump_dir);
        for (std::size_t i = 0; i < stages.size(); ++i) {
            std::ostringstream name;
            name << std::setw(2) << std::setfill('0') << i << '_' << to_string(stages[i].stage) << ".pfm";
            write_pfm((std::filesystem::path(o.dump_dir) / name.str()).string(), stages[i]);
        }
    }
    std::cerr << "wrote " << result.width << "x" << result.height << " depth image to " << o.out << '\n';
    return 0;
}

int cmd_train_lite(const Options& o)
{
    DiversityExperiment ex;
    const auto kv = load_config(o);
    apply_config(ex, kv);
    warn_unused(kv);
    if (o.w_importance)
        ex.w_importance = ex.train.w_importance = *o.w_importance;

    Rng root = Rng(o.seed).split(kTrainLite);
    Rng data_rng = root.split(1), init_rng = root.split(2), noise_rng = root.split(3);
    const auto ds = make_piecewise_regression(ex.samples, ex.in_dim, ex.out_dim, data_rng);
    auto layer = MoELayer<double>::create(ex.in_dim, ex.out_dim, ex.n, ex.k, init_rng, Mode::Train);

    int code = 0;
    emit(o.out, [&](std::ostream& out) {
        out << std::setprecision(std::numeric_limits<double>::max_digits10) << "epoch,task_loss,importance_loss,cv,status\n";
        std::size_t rows = 0;
        try {
            train_lite(layer, ds, ex.train, noise_rng, [&](const EpochStats& s) {
                out << s.epoch << ',' << s.task_loss << ',' << s.importance_loss << ',' << s.cv << ",ok\n";
                ++rows;
            });
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Numerical)
                throw;
            out << rows << ",,,,diverged\n";
            std::cerr << "error: " << e.what() << '\n';
            code = static_cast<int>(ErrorKind::Numerical);
        }
    });
    return code;
}

int cmd_analyze(const Options& o)
{
    require(!o.out.empty(), ErrorKind::InvalidArgument, "analyze: --out prefix is required");
    const auto net = load_weights<double>(o.weights);
    require(net.is_moe(), ErrorKind::SpecMismatch, "analyze: '" + o.weights + "' holds dense network '" + net.spec.name + "', need an MoE actor");
    const auto seq = load_obs_sequence<double>(o.obs);
    const auto trace = record_trace(net, seq);
    const auto report = sensitivity(net, seq);
    export_csv(trace, o.out + "_trace.csv");
    export_csv(report, o.out + "_sensitivity.csv");
    if (trace.timesteps() > 0) {
        const auto u = utilization(trace);
        emit(o.out + "_utilization.csv", [&](std::ostream& out) {
            out << "expert,utilization\n";
            for (std::size_t e = 0; e < u.size(); ++e)
                out << e << ',' << u[e] << '\n';
        });
    }
    std::cerr << "analyzed " << trace.timesteps() << " steps; wrote " << o.out << "_*.csv\n";
    return 0;
}

int cmd_rewards(const Options& o)
{
    const auto traj = load_trajectory(o.input);
    const auto result = trajectory_reward(traj.states(), parse_flooring(o.flooring));
    emit(o.out, [&](std::ostream& out) { write_breakdown_csv(out, result); });
    std::cerr << "steps " << result.steps.size() << ", raw return " << result.raw_return << ", floored return " << result.floored_return
              << " (" << o.flooring << " flooring)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparse mixture-of-experts locomotion policy toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--seed", o.seed, "Root random seed");

    auto* params = app.add_subcommand("params", "Parameter counts for actor networks");
    params->add_option("--net", o.nets, "Preset name(s): small, medium, large, xl, moe, moe_matched");
    params->add_option("--config", o.config, "Actor spec key=value file");
    params->add_option("--out", o.out, "CSV output (default stdout)");

    auto* init = app.add_subcommand("init", "Write a randomly initialized weight file");
    init->add_option("--net", o.nets, "Preset name");
    init->add_option("--config", o.config, "Actor spec key=value file");
    init->add_option("--out", o.out, "Weight file path")->required();

    auto* bench = app.add_subcommand("bench", "Batched forward-pass latency");
    bench->add_option("--batch", o.batch, "Batch size")->check(CLI::PositiveNumber);
    bench->add_option("--passes", o.passes, "Timed passes");
    bench->add_option("--warmup", o.warmup, "Untimed warm-up passes");
    bench->add_option("--net", o.nets, "Preset name(s); default: dense baselines plus total-matched MoE");
    bench->add_option("--config", o.config, "Extra actor spec key=value file");
    bench->add_option("--out", o.out, "CSV output (default stdout)");

    auto* depth = app.add_subcommand("depth", "Run the depth image pipeline on a PGM/PFM file");
    depth->add_option("input", o.input, "Input depth image")->required()->check(CLI::ExistingFile);
    depth->add_option("--out", o.out, "Output PFM path")->required();
    depth->add_option("--mode", o.mode, "train or deploy");
    depth->add_option("--config", o.config, "Pipeline key=value file");
    depth->add_option("--blur-sigma", o.blur_sigma, "Pin the blur sigma");
    depth->add_option("--dump-stages", o.dump_dir, "Directory for per-stage PFM dumps");

    auto* train = app.add_subcommand("train-lite", "Train one MoE layer on the synthetic regression task");
    train->add_option("--config", o.config, "key=value file (samples, in_dim, out_dim, n, k, epochs, lr, w_importance, batch_size)");
    train->add_option("--w-importance", o.w_importance, "Balancing weight");
    train->add_option("--out", o.out, "CSV output (default stdout)");

    auto* analyze = app.add_subcommand("analyze", "Expert utilization and gate sensitivity");
    analyze->add_option("--weights", o.weights, "MoE weight file")->required()->check(CLI::ExistingFile);
    analyze->add_option("--obs", o.obs, "Observation sequence (binary or trajectory text)")->required()->check(CLI::ExistingFile);
    analyze->add_option("--out", o.out, "Output prefix")->required();

    auto* rewards = app.add_subcommand("rewards", "Reward breakdown for a trajectory file");
    rewards->add_option("input", o.input, "Trajectory text file")->required()->check(CLI::ExistingFile);
    rewards->add_option("--flooring", o.flooring, "step or trajectory");
    rewards->add_option("--out", o.out, "CSV output (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*params)
            return cmd_params(o);
        if (*init)
            return cmd_init(o);
        if (*bench)
            return cmd_bench(o);
        if (*depth)
            return cmd_depth(o);
        if (*train)
            return cmd_train_lite(o);
        if (*analyze)
            return cmd_analyze(o);
        if (*rewards)
            return cmd_rewards(o);
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
