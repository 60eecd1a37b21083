#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "deepgmm/numerics.hpp"

namespace deepgmm {

/// Smallest standard deviation any component may take.
inline constexpr double kSigmaFloor = 1e-3;

/// Diagonal-covariance mixture. Weights are softmax(weight_logits) and
/// standard deviations are exp(log_sigmas), so the simplex and positivity
/// constraints hold by construction.
struct GmmParams {
    std::vector<double> weight_logits;  // m
    DenseMatrix means;                  // m × D
    DenseMatrix log_sigmas;             // m × D

    std::size_t components() const noexcept { return weight_logits.size(); }
    std::size_t dim() const noexcept { return means.cols(); }

    std::vector<double> weights() const;
    std::vector<double> log_weights() const;
    double sigma(std::size_t k, std::size_t d) const;

    /// Builds parameters from linear-domain weights and standard deviations.
    static GmmParams from_moments(std::span<const double> weights, DenseMatrix means,
                                  const DenseMatrix& sigmas);

    friend bool operator==(const GmmParams&, const GmmParams&) = default;
};

/// Throws std::invalid_argument unless shapes agree, values are finite,
/// and every σ respects the floor.
void validate(const GmmParams& params);

/// Raises every log σ below ln(kSigmaFloor) back to the floor.
void enforce_sigma_floor(GmmParams& params);

double log_component_density(const GmmParams& params, std::size_t k, std::span<const double> y);
double log_mixture_density(const GmmParams& params, std::span<const double> y);
double log_likelihood(const GmmParams& params, const DenseMatrix& ys);

/// Posterior p(c_k | y) for one sample, normalised in the log domain.
std::vector<double> posterior(const GmmParams& params, std::span<const double> y);

/// N × m matrix of posteriors; every row sums to one.
struct Responsibilities {
    DenseMatrix values;
};
Responsibilities responsibilities(const GmmParams& params, const DenseMatrix& ys);

struct EmOptions {
    std::size_t max_iters = 200;
    double tol = 1e-6;
};

struct EmResult {
    GmmParams params;
    /// Log-likelihood of the initial parameters followed by one entry per
    /// completed iteration.
    std::vector<double> loglik_trace;
    std::size_t iterations = 0;
    std::size_t reseeded_components = 0;
};

/// EM with closed-form weighted M-steps. Stops when the log-likelihood gain
/// drops below tol or after max_iters. A component that receives zero total
/// responsibility is re-seeded on a random sample (and a warning is logged).
EmResult em_fit(const DenseMatrix& ys, const GmmParams& init, const EmOptions& options, SeededRng& rng);

/// k-means++ seeding followed by at most `max_lloyd_iters` Lloyd iterations;
/// the result is turned into mixture parameters (cluster fractions, centroids,
/// floored per-dimension standard deviations).
GmmParams kmeans_init(const DenseMatrix& ys, std::size_t m, SeededRng& rng,
                      std::size_t max_lloyd_iters = 50);

/// Hard k-means labels (exposed for tests of the seeding step).
struct KMeansResult {
    DenseMatrix centroids;
    std::vector<std::size_t> labels;
    std::size_t iterations = 0;
};
KMeansResult kmeans(const DenseMatrix& ys, std::size_t m, SeededRng& rng, std::size_t max_lloyd_iters = 50);

/// Isotropic random start: means on random samples, σ from global spread.
GmmParams random_init(const DenseMatrix& ys, std::size_t m, SeededRng& rng);

}  // namespace deepgmm
