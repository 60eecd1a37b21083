#include "deepgmm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace deepgmm {

namespace {

const double kLogSigmaFloor = std::log(kSigmaFloor);
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_sample(const GmmParams& params, std::span<const double> y, const char* what) {
    if (y.size() != params.dim()) {
        throw std::invalid_argument(std::string(what) + ": sample dimension " +
                                    std::to_string(y.size()) + " != model dimension " +
                                    std::to_string(params.dim()));
    }
}

// log ω_k + log g_k(y) for every k.
std::vector<double> joint_log_terms(const GmmParams& params, std::span<const double> y) {
    const auto log_w = params.log_weights();
    std::vector<double> terms(params.components());
    for (std::size_t k = 0; k < terms.size(); ++k) {
        terms[k] = log_w[k] + log_component_density(params, k, y);
    }
    return terms;
}

struct EStep {
    DenseMatrix resp;
    double loglik = 0.0;
};

EStep e_step(const GmmParams& params, const DenseMatrix& ys) {
    EStep out{DenseMatrix(ys.rows(), params.components()), 0.0};
    for (std::size_t n = 0; n < ys.rows(); ++n) {
        const auto terms = joint_log_terms(params, ys.row(n));
        const double lse = log_sum_exp(terms);
        out.loglik += lse;
        auto r = out.resp.row(n);
        for (std::size_t k = 0; k < terms.size(); ++k) r[k] = std::exp(terms[k] - lse);
    }
    return out;
}

std::vector<double> column_std(const DenseMatrix& ys) {
    const std::size_t n = ys.rows();
    const std::size_t d = ys.cols();
    std::vector<double> mean(d, 0.0);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += ys(i, j);
    for (double& m : mean) m /= double(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = ys(i, j) - mean[j];
            var[j] += diff * diff;
        }
    for (double& v : var) v = std::max(std::sqrt(v / double(n)), kSigmaFloor);
    return var;
}

std::size_t nearest_centroid(const DenseMatrix& centroids, std::span<const double> y, double* dist = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
        const double d = squared_distance(centroids.row(k), y);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (dist) *dist = best_d;
    return best;
}

void require_enough_samples(const DenseMatrix& ys, std::size_t m, const char* what) {
    if (m == 0) throw std::invalid_argument(std::string(what) + ": component count must be >= 1");
    if (ys.rows() < m) {
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(ys.rows()) +
                                    " samples is fewer than " + std::to_string(m) + " components");
    }
}

}  // namespace

std::vector<double> GmmParams::log_weights() const {
    if (weight_logits.empty()) return {};
    const double lse = log_sum_exp(weight_logits);
    std::vector<double> out(weight_logits.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = weight_logits[k] - lse;
    return out;
}

std::vector<double> GmmParams::weights() const {
    auto out = log_weights();
    for (double& w : out) w = std::exp(w);
    return out;
}

double GmmParams::sigma(std::size_t k, std::size_t d) const { return std::exp(log_sigmas(k, d)); }

GmmParams GmmParams::from_moments(std::span<const double> weights, DenseMatrix means,
                                  const DenseMatrix& sigmas) {
    GmmParams p;
    p.weight_logits.resize(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) p.weight_logits[k] = std::log(weights[k]);
    p.means = std::move(means);
    p.log_sigmas = DenseMatrix(sigmas.rows(), sigmas.cols());
    for (std::size_t i = 0; i < sigmas.size(); ++i) p.log_sigmas.values()[i] = std::log(sigmas.values()[i]);
    validate(p);
    return p;
}

void validate(const GmmParams& params) {
    const std::size_t m = params.components();
    if (m == 0) throw std::invalid_argument("gmm: no components");
    if (params.means.rows() != m || params.log_sigmas.rows() != m ||
        params.log_sigmas.cols() != params.means.cols() || params.means.cols() == 0) {
        throw std::invalid_argument("gmm: inconsistent parameter shapes");
    }
    const bool finite = params.means.all_finite() && params.log_sigmas.all_finite() &&
                        std::all_of(params.weight_logits.begin(), params.weight_logits.end(),
                                    [](double v) { return std::isfinite(v); });
    if (!finite) throw std::invalid_argument("gmm: non-finite parameters");
    for (double s : params.log_sigmas.values()) {
        // Tolerate the rounding of exp/log around the floor itself.
        if (s < kLogSigmaFloor - 1e-12) throw std::invalid_argument("gmm: sigma below floor");
    }
}

void enforce_sigma_floor(GmmParams& params) {
    for (double& s : params.log_sigmas.values()) s = std::max(s, kLogSigmaFloor);
}

double log_component_density(const GmmParams& params, std::size_t k, std::span<const double> y) {
    if (k >= params.components()) {
        throw std::out_of_range("log_component_density: component " + std::to_string(k) +
                                " out of range (m=" + std::to_string(params.components()) + ")");
    }
    check_sample(params, y, "log_component_density");
    const auto mu = params.means.row(k);
    const auto s = params.log_sigmas.row(k);
    double log_det = 0.0;
    double quad = 0.0;
    for (std::size_t d = 0; d < y.size(); ++d) {
        const double z = (y[d] - mu[d]) * std::exp(-s[d]);
        quad += z * z;
        log_det += s[d];
    }
    return -double(y.size()) * kHalfLog2Pi - log_det - 0.5 * quad;
}

double log_mixture_density(const GmmParams& params, std::span<const double> y) {
    check_sample(params, y, "log_mixture_density");
    return log_sum_exp(joint_log_terms(params, y));
}

double log_likelihood(const GmmParams& params, const DenseMatrix& ys) {
    if (ys.rows() == 0) throw std::invalid_argument("log_likelihood: empty sample set");
    double total = 0.0;
    for (std::size_t n = 0; n < ys.rows(); ++n) total += log_mixture_density(params, ys.row(n));
    return total;
}

std::vector<double> posterior(const GmmParams& params, std::span<const double> y) {
    check_sample(params, y, "posterior");
    auto terms = joint_log_terms(params, y);
    const double lse = log_sum_exp(terms);
    for (double& t : terms) t = std::exp(t - lse);
    return terms;
}

Responsibilities responsibilities(const GmmParams& params, const DenseMatrix& ys) {
    if (ys.cols() != params.dim()) {
        throw std::invalid_argument("responsibilities: sample dimension " + std::to_string(ys.cols()) +
                                    " != model dimension " + std::to_string(params.dim()));
    }
    return {e_step(params, ys).resp};
}

EmResult em_fit(const DenseMatrix& ys, const GmmParams& init, const EmOptions& options, SeededRng& rng) {
    validate(init);
    const std::size_t m = init.components();
    const std::size_t dim = init.dim();
    require_enough_samples(ys, m, "em_fit");
    if (ys.cols() != dim) {
        throw std::invalid_argument("em_fit: sample dimension " + std::to_string(ys.cols()) +
                                    " != model dimension " + std::to_string(dim));
    }

    const std::size_t n = ys.rows();
    EmResult result{init, {}, 0, 0};
    EStep current = e_step(result.params, ys);
    result.loglik_trace.push_back(current.loglik);

    for (std::size_t it = 0; it < options.max_iters; ++it) {
        GmmParams next;
        next.weight_logits.assign(m, 0.0);
        next.means = DenseMatrix(m, dim);
        next.log_sigmas = DenseMatrix(m, dim);
        std::vector<double> global_std;

        for (std::size_t k = 0; k < m; ++k) {
            double nk = 0.0;
            auto mu = next.means.row(k);
            for (std::size_t i = 0; i < n; ++i) {
                const double r = current.resp(i, k);
                nk += r;
                const auto y = ys.row(i);
                for (std::size_t d = 0; d < dim; ++d) mu[d] += r * y[d];
            }
            auto s = next.log_sigmas.row(k);
            if (!(nk > 0.0)) {
                if (global_std.empty()) global_std = column_std(ys);
                const auto pick = ys.row(rng.index(n));
                std::copy(pick.begin(), pick.end(), mu.begin());
                for (std::size_t d = 0; d < dim; ++d) s[d] = std::log(global_std[d]);
                next.weight_logits[k] = std::log(1.0 / double(n));
                ++result.reseeded_components;
                std::cerr << "warning: em_fit re-seeded empty component " << k << " at iteration "
                          << it + 1 << '\n';
                continue;
            }
            for (double& v : mu) v /= nk;
            std::vector<double> var(dim, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double r = current.resp(i, k);
                const auto y = ys.row(i);
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = y[d] - mu[d];
                    var[d] += r * diff * diff;
                }
            }
            for (std::size_t d = 0; d < dim; ++d) {
                s[d] = std::max(0.5 * std::log(var[d] / nk), kLogSigmaFloor);
            }
            next.weight_logits[k] = std::log(nk / double(n));
        }

        EStep updated = e_step(next, ys);
        const double gain = updated.loglik - current.loglik;
        result.params = std::move(next);
        result.loglik_trace.push_back(updated.loglik);
        result.iterations = it + 1;
        current = std::move(updated);
        if (gain < options.tol) break;
    }
    return result;
}

KMeansResult kmeans(const DenseMatrix& ys, std::size_t m, SeededRng& rng, std::size_t max_lloyd_iters) {
    require_enough_samples(ys, m, "kmeans");
    const std::size_t n = ys.rows();
    const std::size_t dim = ys.cols();
    KMeansResult out{DenseMatrix(m, dim), std::vector<std::size_t>(n, 0), 0};

    // k-means++ seeding.
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t chosen = rng.index(n);
    for (std::size_t k = 0; k < m; ++k) {
        if (k > 0) {
            const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
            if (total > 0.0) {
                double target = rng.uniform() * total;
                chosen = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    target -= d2[i];
                    if (target < 0.0 && d2[i] > 0.0) {
                        chosen = i;
                        break;
                    }
                }
                while (d2[chosen] <= 0.0 && chosen > 0) --chosen;
            } else {
                chosen = rng.index(n);
            }
        }
        const auto src = ys.row(chosen);
        std::copy(src.begin(), src.end(), out.centroids.row(k).begin());
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(ys.row(i), out.centroids.row(k)));
        }
    }

    std::vector<std::size_t> counts(m);
    for (std::size_t it = 0; it < max_lloyd_iters; ++it) {
        bool changed = it == 0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = nearest_centroid(out.centroids, ys.row(i));
            if (k != out.labels[i]) {
                out.labels[i] = k;
                changed = true;
            }
        }
        // Empty clusters take the sample farthest from its own centroid.
        for (std::size_t k = 0; k < m; ++k) {
            std::fill(counts.begin(), counts.end(), 0);
            for (auto l : out.labels) ++counts[l];
            if (counts[k] > 0) continue;
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[out.labels[i]] < 2) continue;
                const double d = squared_distance(ys.row(i), out.centroids.row(out.labels[i]));
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far == n) continue;
            out.labels[far] = k;
            const auto src = ys.row(far);
            std::copy(src.begin(), src.end(), out.centroids.row(k).begin());
            changed = true;
        }
        out.iterations = it + 1;
        if (!changed) break;

        DenseMatrix sums(m, dim);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto l = out.labels[i];
            ++counts[l];
            auto s = sums.row(l);
            const auto y = ys.row(i);
            for (std::size_t d = 0; d < dim; ++d) s[d] += y[d];
        }
        for (std::size_t k = 0; k < m; ++k) {
            if (counts[k] == 0) continue;
            auto c = out.centroids.row(k);
            const auto s = sums.row(k);
            for (std::size_t d = 0; d < dim; ++d) c[d] = s[d] / double(counts[k]);
        }
    }
    return out;
}

GmmParams kmeans_init(const DenseMatrix& ys, std::size_t m, SeededRng& rng, std::size_t max_lloyd_iters) {
    const auto km = kmeans(ys, m, rng, max_lloyd_iters);
    const std::size_t n = ys.rows();
    const std::size_t dim = ys.cols();

    std::vector<double> counts(m, 0.0);
    DenseMatrix means(m, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto l = km.labels[i];
        counts[l] += 1.0;
        auto mu = means.row(l);
        const auto y = ys.row(i);
        for (std::size_t d = 0; d < dim; ++d) mu[d] += y[d];
    }
    DenseMatrix sigmas(m, dim, kSigmaFloor);
    for (std::size_t k = 0; k < m; ++k) {
        if (counts[k] == 0.0) {
            const auto c = km.centroids.row(k);
            std::copy(c.begin(), c.end(), means.row(k).begin());
            counts[k] = 1.0;  // keeps the weight positive
            continue;
        }
        for (double& v : means.row(k)) v /= counts[k];
    }
    DenseMatrix var(m, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto l = km.labels[i];
        const auto y = ys.row(i);
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = y[d] - means(l, d);
            var(l, d) += diff * diff;
        }
    }
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t d = 0; d < dim; ++d)
            sigmas(k, d) = std::max(std::sqrt(var(k, d) / counts[k]), kSigmaFloor);

    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    for (double& c : counts) c /= total;
    return GmmParams::from_moments(counts, std::move(means), sigmas);
}

GmmParams random_init(const DenseMatrix& ys, std::size_t m, SeededRng& rng) {
    require_enough_samples(ys, m, "random_init");
    const std::size_t n = ys.rows();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t k = 0; k < m; ++k) std::swap(idx[k], idx[k + rng.index(n - k)]);
    DenseMatrix means = ys.gather_rows(std::span<const std::size_t>(idx.data(), m));
    const auto spread = column_std(ys);
    DenseMatrix sigmas(m, ys.cols());
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t d = 0; d < ys.cols(); ++d) sigmas(k, d) = spread[d];
    const std::vector<double> weights(m, 1.0 / double(m));
    return GmmParams::from_moments(weights, std::move(means), sigmas);
}

}  // namespace deepgmm
