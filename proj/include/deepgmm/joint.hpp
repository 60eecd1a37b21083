#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deepgmm/autoencoder.hpp"
#include "deepgmm/gmm.hpp"
#include "deepgmm/numerics.hpp"

namespace deepgmm {

/// How the centre-separability gradient enters a minibatch step.
enum class SeparabilityMode {
    PerStep,    // once per optimisation step, weight η
    PerSample,  // once per sample in the batch, i.e. weight η·batch_size
};

const char* to_string(SeparabilityMode mode) noexcept;
SeparabilityMode separability_mode_from_string(const std::string& name);

struct JointConfig {
    double eta = 0.01;
    double neighbor_fraction = 0.5;
    double learning_rate = 0.01;
    double lr_step_factor = 0.1;
    std::size_t lr_step_every = 40;
    std::size_t batch_size = 256;
    std::size_t epochs = 60;
    std::uint64_t seed = 0;
    SeparabilityMode separability_mode = SeparabilityMode::PerStep;
};

/// n(k) for every component k.
using NeighborSets = std::vector<std::vector<std::size_t>>;

/// |n(k)| = max(1, floor(fraction·m)), capped at m − 1. Zero when m < 2.
std::size_t neighbor_count(std::size_t m, double fraction);

/// The |n(k)| components whose means are closest to μ_k (ties: lower index).
NeighborSets neighbor_sets(const GmmParams& params, const JointConfig& config);

/// Σ_k Σ_{j∈n(k)} ||μ_k − μ_j||², without the η factor.
double separability(const GmmParams& params, const NeighborSets& nbrs);

/// log p(y|λ) + η·separability.
double objective(const GmmParams& params, std::span<const double> y, const NeighborSets& nbrs,
                 const JointConfig& config);

// Per-sample gradients of the objective. Each is the exact derivative of
// log p(y|λ) with respect to y, μ, log σ and the softmax logits respectively;
// grad_means additionally carries the separability part.

std::vector<double> grad_representation(const GmmParams& params, std::span<const double> y);
DenseMatrix grad_means(const GmmParams& params, std::span<const double> y, const NeighborSets& nbrs,
                       const JointConfig& config);
DenseMatrix grad_log_sigmas(const GmmParams& params, std::span<const double> y);
std::vector<double> grad_weight_logits(const GmmParams& params, std::span<const double> y);

/// 2 Σ_{j∈n(k)} (μ_k − μ_j) for every (k, d); neighbour sets held fixed and
/// only the outer index differentiated. Multiply by η for the objective.
DenseMatrix separability_gradient(const GmmParams& params, const NeighborSets& nbrs);

/// Batch statistics measured before the update.
struct StepStats {
    double mean_loglik = 0.0;
    double separability = 0.0;
    double objective = 0.0;
};

/// Mean over the batch of log p(f(x)|λ), plus η·separability once.
double batch_objective(const EncoderStack& enc, const GmmParams& params, const DenseMatrix& batch,
                       const NeighborSets& nbrs, const JointConfig& config);

/// One gradient-ascent step on encoder and mixture parameters. Throws
/// std::runtime_error (leaving both untouched) if any gradient is non-finite.
StepStats joint_train_step(EncoderStack& enc, GmmParams& params, const DenseMatrix& batch,
                           const NeighborSets& nbrs, const JointConfig& config, double learning_rate);

struct EpochStats {
    std::size_t epoch = 0;
    double mean_objective = 0.0;
    double mean_loglik = 0.0;
    double separability = 0.0;
    double learning_rate = 0.0;
};

/// Whole-dataset objective terms for the current parameters.
EpochStats evaluate(const EncoderStack& enc, const GmmParams& params, const DenseMatrix& data,
                    const JointConfig& config);

double learning_rate_at(const JointConfig& config, std::size_t epoch);

struct TrainResult {
    EncoderStack encoder;
    GmmParams gmm;
    EpochStats initial;
    std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&, const EncoderStack&, const GmmParams&)>;

/// Runs epochs [start_epoch, config.epochs). Each epoch reshuffles with a
/// generator derived from (seed, epoch) and recomputes the neighbour sets, so
/// a run resumed at any epoch boundary matches an uninterrupted one.
TrainResult train(EncoderStack enc, GmmParams params, const DenseMatrix& data, const JointConfig& config,
                  std::size_t start_epoch = 0, const EpochCallback& on_epoch = {});

/// argmax_k p(c_k | f(x)) per sample, lowest index on ties.
std::vector<std::size_t> assign(const EncoderStack& enc, const GmmParams& params, const DenseMatrix& data);

}  // namespace deepgmm
