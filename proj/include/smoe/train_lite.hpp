#pragma once

// Small supervised loop over a standalone MoE layer. It exists to exercise
// the balancing term: task MSE + w * CV(Importance)^2, plain gradient descent.

#include <smoe/config.hpp>
#include <smoe/error.hpp>
#include <smoe/moe.hpp>
#include <smoe/rng.hpp>
#include <smoe/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace smoe {

struct Dataset {
    Batch<double> inputs;
    Batch<double> targets;
};

/// Four linear regimes keyed on the sign pattern of the first two inputs.
/// The last input column is a constant 1 so experts can learn offsets.
inline Dataset make_piecewise_regression(std::size_t samples, std::size_t in_dim, std::size_t out_dim, Rng& rng)
{
    require(in_dim >= 3, ErrorKind::InvalidArgument, "piecewise regression needs in_dim >= 3");
    std::vector<Matrix<double>> maps;
    for (int r = 0; r < 4; ++r) {
        Matrix<double> m(in_dim, out_dim);
        fill_standard_normal(rng, m.values());
        maps.push_back(std::move(m));
    }
    Dataset ds{Batch<double>(samples, in_dim), Batch<double>(samples, out_dim)};
    for (std::size_t s = 0; s < samples; ++s) {
        auto x = ds.inputs.row(s);
        for (std::size_t d = 0; d + 1 < in_dim; ++d)
            x[d] = rng.uniform(-1.0, 1.0);
        x[in_dim - 1] = 1.0;
        const std::size_t regime = (x[0] > 0 ? 1u : 0u) + (x[1] > 0 ? 2u : 0u);
        for (std::size_t c = 0; c < out_dim; ++c) {
            double v = 0.0;
            for (std::size_t d = 0; d < in_dim; ++d)
                v += x[d] * maps[regime](d, c);
            ds.targets(s, c) = v;
        }
    }
    return ds;
}

struct TrainLiteConfig {
    std::size_t epochs = 200;
    double lr = 0.05;
    double w_importance = 0.1;
    std::size_t batch_size = 0; // 0 = full batch
};

struct EpochStats {
    std::size_t epoch = 0;
    double task_loss = 0.0;
    double importance_loss = 0.0;
    double cv = 0.0;
};

namespace detail {

inline void sgd_step(Matrix<double>& param, const Matrix<double>& grad, double lr)
{
    for (std::size_t i = 0; i < param.size(); ++i)
        param.values()[i] -= lr * grad.values()[i];
}

} // namespace detail

/// Mutates `layer` (which must be in train mode) and returns one row per epoch.
inline std::vector<EpochStats> train_lite(MoELayer<double>& layer, const Dataset& data, const TrainLiteConfig& cfg, Rng& rng,
                                          const std::function<void(const EpochStats&)>& on_epoch = {})
{
    require(data.inputs.batch_size() == data.targets.batch_size(), ErrorKind::Dimension, "train_lite: inputs/targets differ in length");
    require(data.inputs.dim() == layer.in_dim && data.targets.dim() == layer.out_dim, ErrorKind::Dimension,
            "train_lite: dataset dims do not match layer");
    const std::size_t total = data.inputs.batch_size();
    const std::size_t bs = cfg.batch_size == 0 ? total : std::min(cfg.batch_size, total);
    std::vector<EpochStats> trace;
    if (cfg.epochs == 0 || total == 0)
        return trace;
    require(bs > 0, ErrorKind::InvalidArgument, "train_lite: empty batch");

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochStats st;
        st.epoch = epoch;
        std::vector<double> epoch_importance(layer.n, 0.0);
        std::size_t steps = 0;
        for (std::size_t start = 0; start < total; start += bs) {
            const std::size_t m = std::min(bs, total - start);
            Batch<double> x(m, layer.in_dim), t(m, layer.out_dim);
            std::copy_n(data.inputs.row(start).data(), m * layer.in_dim, x.data());
            std::copy_n(data.targets.row(start).data(), m * layer.out_dim, t.data());

            const auto rec = record_forward(layer, x, &rng);
            const double scale = 1.0 / static_cast<double>(m * layer.out_dim);
            Batch<double> dy(m, layer.out_dim);
            double mse = 0.0;
            for (std::size_t i = 0; i < dy.size(); ++i) {
                const double r = rec.output.values()[i] - t.values()[i];
                mse += r * r;
                dy.values()[i] = 2.0 * r * scale;
            }
            mse *= scale;
            const auto grads = backward(layer, rec, dy, cfg.w_importance);
            const double total_loss = mse + grads.balance.loss;
            if (!std::isfinite(total_loss))
                fail(ErrorKind::Numerical, "train_lite: non-finite loss at epoch " + std::to_string(epoch) + " (task " +
                                               std::to_string(mse) + ", balance " + std::to_string(grads.balance.loss) + ")");
            detail::sgd_step(layer.w_gate, grads.w_gate, cfg.lr);
            detail::sgd_step(layer.w_noise, grads.w_noise, cfg.lr);
            for (std::size_t e = 0; e < layer.n; ++e)
                detail::sgd_step(layer.experts[e], grads.experts[e], cfg.lr);

            st.task_loss += mse;
            st.importance_loss += grads.balance.loss;
            for (std::size_t i = 0; i < layer.n; ++i)
                epoch_importance[i] += grads.balance.importance[i];
            ++steps;
        }
        st.task_loss /= static_cast<double>(steps);
        st.importance_loss /= static_cast<double>(steps);
        st.cv = load_balance_from_importance(epoch_importance, 0.0).cv;
        trace.push_back(st);
        if (on_epoch)
            on_epoch(st);
    }
    return trace;
}

struct DiversityComparison {
    std::vector<double> final_cv_balanced;
    std::vector<double> final_cv_unbalanced;
    double mean_balanced = 0.0;
    double mean_unbalanced = 0.0;
};

struct DiversityExperiment {
    std::size_t samples = 512;
    std::size_t in_dim = 4;
    std::size_t out_dim = 2;
    std::size_t n = 4;
    std::size_t k = 2;
    double w_importance = 0.1;
    TrainLiteConfig train{500, 0.1, 0.1, 0};
};

/// Trains the same seeded layer/dataset twice per seed, with and without the
/// balancing term, and collects the final-epoch CV of each arm.
inline DiversityComparison compare_balancing(const DiversityExperiment& ex, const std::vector<std::uint64_t>& seeds)
{
    DiversityComparison out;
    for (auto seed : seeds) {
        for (int arm = 0; arm < 2; ++arm) {
            Rng root(seed);
            Rng data_rng = root.split(1), init_rng = root.split(2), noise_rng = root.split(3);
            const Dataset ds = make_piecewise_regression(ex.samples, ex.in_dim, ex.out_dim, data_rng);
            auto layer = MoELayer<double>::create(ex.in_dim, ex.out_dim, ex.n, ex.k, init_rng, Mode::Train);
            TrainLiteConfig cfg = ex.train;
            cfg.w_importance = arm == 0 ? ex.w_importance : 0.0;
            const auto trace = train_lite(layer, ds, cfg, noise_rng);
            const double cv = trace.empty() ? 0.0 : trace.back().cv;
            (arm == 0 ? out.final_cv_balanced : out.final_cv_unbalanced).push_back(cv);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double d : v)
            s += d;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    out.mean_balanced = mean(out.final_cv_balanced);
    out.mean_unbalanced = mean(out.final_cv_unbalanced);
    return out;
}

inline void apply_config(DiversityExperiment& ex, const KeyValueConfig& kv)
{
    ex.samples = kv.get_size("samples", ex.samples);
    ex.in_dim = kv.get_size("in_dim", ex.in_dim);
    ex.out_dim = kv.get_size("out_dim", ex.out_dim);
    ex.n = kv.get_size("n", ex.n);
    ex.k = kv.get_size("k", ex.k);
    ex.w_importance = kv.get_double("w_importance", ex.w_importance);
    ex.train.epochs = kv.get_size("epochs", ex.train.epochs);
    ex.train.lr = kv.get_double("lr", ex.train.lr);
    ex.train.batch_size = kv.get_size("batch_size", ex.train.batch_size);
    ex.train.w_importance = ex.w_importance;
}

} // namespace smoe
