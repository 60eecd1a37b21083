#include "deepgmm/joint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace deepgmm {

namespace {

void check_config(const JointConfig& config) {
    if (!(config.eta >= 0.0)) throw std::invalid_argument("joint: eta must be nonnegative");
    if (!(config.neighbor_fraction > 0.0 && config.neighbor_fraction <= 1.0)) {
        throw std::invalid_argument("joint: neighbor_fraction must lie in (0, 1]");
    }
}

double separability_weight(const JointConfig& config, std::size_t batch) {
    return config.separability_mode == SeparabilityMode::PerSample ? config.eta * double(batch)
                                                                   : config.eta;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

const char* to_string(SeparabilityMode mode) noexcept {
    return mode == SeparabilityMode::PerStep ? "per-step" : "per-sample";
}

SeparabilityMode separability_mode_from_string(const std::string& name) {
    if (name == "per-step") return SeparabilityMode::PerStep;
    if (name == "per-sample") return SeparabilityMode::PerSample;
    throw std::invalid_argument("unknown separability mode '" + name + "'");
}

std::size_t neighbor_count(std::size_t m, double fraction) {
    if (m < 2) return 0;
    const auto raw = std::size_t(std::floor(fraction * double(m)));
    return std::min(std::max<std::size_t>(1, raw), m - 1);
}

NeighborSets neighbor_sets(const GmmParams& params, const JointConfig& config) {
    check_config(config);
    const std::size_t m = params.components();
    const std::size_t count = neighbor_count(m, config.neighbor_fraction);
    NeighborSets out(m);
    if (count == 0) return out;
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t k = 0; k < m; ++k) {
        dist.clear();
        for (std::size_t j = 0; j < m; ++j) {
            if (j != k) dist.emplace_back(squared_distance(params.means.row(k), params.means.row(j)), j);
        }
        std::partial_sort(dist.begin(), dist.begin() + std::ptrdiff_t(count), dist.end());
        for (std::size_t i = 0; i < count; ++i) out[k].push_back(dist[i].second);
    }
    return out;
}

double separability(const GmmParams& params, const NeighborSets& nbrs) {
    double total = 0.0;
    for (std::size_t k = 0; k < nbrs.size(); ++k)
        for (const auto j : nbrs[k]) total += squared_distance(params.means.row(k), params.means.row(j));
    return total;
}

double objective(const GmmParams& params, std::span<const double> y, const NeighborSets& nbrs,
                 const JointConfig& config) {
    return log_mixture_density(params, y) + config.eta * separability(params, nbrs);
}

std::vector<double> grad_representation(const GmmParams& params, std::span<const double> y) {
    const auto post = posterior(params, y);
    std::vector<double> grad(y.size(), 0.0);
    for (std::size_t k = 0; k < post.size(); ++k) {
        const auto mu = params.means.row(k);
        const auto s = params.log_sigmas.row(k);
        for (std::size_t d = 0; d < y.size(); ++d) {
            grad[d] += post[k] * (mu[d] - y[d]) * std::exp(-2.0 * s[d]);
        }
    }
    return grad;
}

DenseMatrix separability_gradient(const GmmParams& params, const NeighborSets& nbrs) {
    DenseMatrix grad(params.components(), params.dim());
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
        auto g = grad.row(k);
        const auto mk = params.means.row(k);
        for (const auto j : nbrs[k]) {
            const auto mj = params.means.row(j);
            for (std::size_t d = 0; d < g.size(); ++d) g[d] += 2.0 * (mk[d] - mj[d]);
        }
    }
    return grad;
}

namespace {

DenseMatrix grad_means_likelihood(const GmmParams& params, std::span<const double> y,
                                  std::span<const double> post) {
    DenseMatrix grad(params.components(), params.dim());
    for (std::size_t k = 0; k < post.size(); ++k) {
        const auto mu = params.means.row(k);
        const auto s = params.log_sigmas.row(k);
        auto g = grad.row(k);
        for (std::size_t d = 0; d < y.size(); ++d) g[d] = post[k] * (y[d] - mu[d]) * std::exp(-2.0 * s[d]);
    }
    return grad;
}

DenseMatrix grad_log_sigmas_impl(const GmmParams& params, std::span<const double> y,
                                 std::span<const double> post) {
    DenseMatrix grad(params.components(), params.dim());
    for (std::size_t k = 0; k < post.size(); ++k) {
        const auto mu = params.means.row(k);
        const auto s = params.log_sigmas.row(k);
        auto g = grad.row(k);
        for (std::size_t d = 0; d < y.size(); ++d) {
            const double z = (y[d] - mu[d]) * std::exp(-s[d]);
            g[d] = post[k] * (z * z - 1.0);
        }
    }
    return grad;
}

std::vector<double> grad_weight_logits_impl(const GmmParams& params, std::span<const double> post) {
    const auto w = params.weights();
    std::vector<double> grad(post.size());
    for (std::size_t k = 0; k < post.size(); ++k) grad[k] = post[k] - w[k];
    return grad;
}

}  // namespace

DenseMatrix grad_means(const GmmParams& params, std::span<const double> y, const NeighborSets& nbrs,
                       const JointConfig& config) {
    const auto post = posterior(params, y);
    DenseMatrix grad = grad_means_likelihood(params, y, post);
    if (config.eta != 0.0) {
        const DenseMatrix sep = separability_gradient(params, nbrs);
        for (std::size_t i = 0; i < grad.size(); ++i) grad.values()[i] += config.eta * sep.values()[i];
    }
    return grad;
}

DenseMatrix grad_log_sigmas(const GmmParams& params, std::span<const double> y) {
    const auto post = posterior(params, y);
    return grad_log_sigmas_impl(params, y, post);
}

std::vector<double> grad_weight_logits(const GmmParams& params, std::span<const double> y) {
    const auto post = posterior(params, y);
    return grad_weight_logits_impl(params, post);
}

double batch_objective(const EncoderStack& enc, const GmmParams& params, const DenseMatrix& batch,
                       const NeighborSets& nbrs, const JointConfig& config) {
    const DenseMatrix ys = encode_rows(enc, batch);
    return log_likelihood(params, ys) / double(ys.rows()) + config.eta * separability(params, nbrs);
}

StepStats joint_train_step(EncoderStack& enc, GmmParams& params, const DenseMatrix& batch,
                           const NeighborSets& nbrs, const JointConfig& config, double learning_rate) {
    check_config(config);
    if (batch.rows() == 0) throw std::invalid_argument("joint_train_step: empty batch");
    const std::size_t b = batch.rows();
    const std::size_t m = params.components();
    const std::size_t dim = params.dim();
    if (enc.output_dim() != dim) {
        throw std::invalid_argument("joint_train_step: encoder output " + std::to_string(enc.output_dim()) +
                                    " != mixture dimension " + std::to_string(dim));
    }

    auto acts = forward_layers(enc.layers, batch);
    const DenseMatrix& ys = acts.back();
    const double inv_b = 1.0 / double(b);

    DenseMatrix grad_y(b, dim);
    DenseMatrix g_mu(m, dim);
    DenseMatrix g_s(m, dim);
    std::vector<double> g_alpha(m, 0.0);
    StepStats stats;

    // Sample-order accumulation keeps the reduction reproducible.
    for (std::size_t n = 0; n < b; ++n) {
        const auto y = ys.row(n);
        stats.mean_loglik += log_mixture_density(params, y);
        const auto post = posterior(params, y);

        auto gy = grad_y.row(n);
        for (std::size_t k = 0; k < m; ++k) {
            const auto mu = params.means.row(k);
            const auto s = params.log_sigmas.row(k);
            auto gm = g_mu.row(k);
            auto gs = g_s.row(k);
            for (std::size_t d = 0; d < dim; ++d) {
                const double inv_var = std::exp(-2.0 * s[d]);
                const double diff = y[d] - mu[d];
                gy[d] += post[k] * (-diff) * inv_var * inv_b;
                gm[d] += post[k] * diff * inv_var;
                gs[d] += post[k] * (diff * diff * inv_var - 1.0);
            }
        }
        const auto ga = grad_weight_logits_impl(params, post);
        for (std::size_t k = 0; k < m; ++k) g_alpha[k] += ga[k];
    }
    stats.mean_loglik *= inv_b;
    stats.separability = separability(params, nbrs);
    stats.objective = stats.mean_loglik + config.eta * stats.separability;

    for (double& v : g_mu.values()) v *= inv_b;
    for (double& v : g_s.values()) v *= inv_b;
    for (double& v : g_alpha) v *= inv_b;
    if (config.eta != 0.0) {
        const double weight = separability_weight(config, b);
        const DenseMatrix sep = separability_gradient(params, nbrs);
        for (std::size_t i = 0; i < g_mu.size(); ++i) g_mu.values()[i] += weight * sep.values()[i];
    }

    auto back = backward_layers(enc.layers, acts, std::move(grad_y));
    bool finite = g_mu.all_finite() && g_s.all_finite() && all_finite(g_alpha);
    for (const auto& g : back.gradients) finite = finite && g.weight.all_finite() && all_finite(g.bias);
    if (!finite) {
        throw std::runtime_error("joint_train_step: non-finite gradient (batch objective " +
                                 std::to_string(stats.objective) + "); step aborted");
    }
    if (learning_rate == 0.0) return stats;

    apply_gradients(enc.layers, back.gradients, learning_rate);
    for (std::size_t i = 0; i < g_mu.size(); ++i) {
        params.means.values()[i] += learning_rate * g_mu.values()[i];
        params.log_sigmas.values()[i] += learning_rate * g_s.values()[i];
    }
    for (std::size_t k = 0; k < m; ++k) params.weight_logits[k] += learning_rate * g_alpha[k];
    enforce_sigma_floor(params);
    return stats;
}

EpochStats evaluate(const EncoderStack& enc, const GmmParams& params, const DenseMatrix& data,
                    const JointConfig& config) {
    const DenseMatrix ys = encode_rows(enc, data);
    EpochStats stats;
    stats.mean_loglik = log_likelihood(params, ys) / double(ys.rows());
    stats.separability = separability(params, neighbor_sets(params, config));
    stats.mean_objective = stats.mean_loglik + config.eta * stats.separability;
    return stats;
}

double learning_rate_at(const JointConfig& config, std::size_t epoch) {
    if (config.lr_step_every == 0) return config.learning_rate;
    const auto steps = double(epoch / config.lr_step_every);
    return config.learning_rate * std::pow(config.lr_step_factor, steps);
}

TrainResult train(EncoderStack enc, GmmParams params, const DenseMatrix& data, const JointConfig& config,
                  std::size_t start_epoch, const EpochCallback& on_epoch) {
    check_config(config);
    if (data.rows() == 0) throw std::invalid_argument("train: empty dataset");
    validate(enc);
    validate(params);

    TrainResult result;
    result.initial = evaluate(enc, params, data, config);
    result.initial.epoch = start_epoch;
    result.initial.learning_rate = learning_rate_at(config, start_epoch);

    const std::size_t n = data.rows();
    const std::size_t batch = std::max<std::size_t>(1, std::min(config.batch_size, n));
    std::vector<std::size_t> order(n);
    const SeededRng base(config.seed);

    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const double lr = learning_rate_at(config, epoch);
        const NeighborSets nbrs = neighbor_sets(params, config);
        std::iota(order.begin(), order.end(), std::size_t{0});
        SeededRng rng = base.fork(epoch);
        rng.shuffle(std::span<std::size_t>(order));

        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            const DenseMatrix xb = data.gather_rows(std::span<const std::size_t>(order.data() + start, stop - start));
            joint_train_step(enc, params, xb, nbrs, config, lr);
        }

        EpochStats stats = evaluate(enc, params, data, config);
        stats.epoch = epoch + 1;
        stats.learning_rate = lr;
        if (!std::isfinite(stats.mean_objective)) {
            throw std::runtime_error("train: objective became non-finite at epoch " + std::to_string(epoch + 1));
        }
        result.history.push_back(stats);
        if (on_epoch) on_epoch(stats, enc, params);
    }
    result.encoder = std::move(enc);
    result.gmm = std::move(params);
    return result;
}

std::vector<std::size_t> assign(const EncoderStack& enc, const GmmParams& params, const DenseMatrix& data) {
    const DenseMatrix ys = encode_rows(enc, data);
    std::vector<std::size_t> labels(ys.rows());
    for (std::size_t n = 0; n < ys.rows(); ++n) {
        const auto post = posterior(params, ys.row(n));
        labels[n] = std::size_t(std::max_element(post.begin(), post.end()) - post.begin());
    }
    return labels;
}

}  // namespace deepgmm
