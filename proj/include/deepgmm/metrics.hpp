#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "deepgmm/numerics.hpp"

namespace deepgmm {

/// Cluster labels in [0, num_clusters).
struct Partition {
    std::vector<std::size_t> labels;
    std::size_t num_clusters = 0;

    /// num_clusters = max label + 1.
    static Partition from_labels(std::vector<std::size_t> labels);
    static Partition from_labels(std::span<const int> labels);
    std::size_t size() const noexcept { return labels.size(); }
};

/// counts(i, j) = #samples with pred = i and truth = j.
struct ContingencyTable {
    std::vector<std::vector<std::uint64_t>> counts;

    std::size_t rows() const noexcept { return counts.size(); }
    std::size_t cols() const noexcept { return counts.empty() ? 0 : counts.front().size(); }
    std::uint64_t total() const noexcept;
};

ContingencyTable confusion_matrix(const Partition& pred, const Partition& truth);

/// Optimal one-to-one assignment maximising the summed benefit of a square
/// matrix (Hungarian algorithm, O(k³)). Returns assignment[row] = column.
std::vector<std::size_t> hungarian_max(const std::vector<std::vector<double>>& benefit);

/// Fraction of samples that agree under the best one-to-one label mapping.
double clustering_accuracy(const Partition& pred, const Partition& truth);

/// MI / max(H(pred), H(truth)), natural logs.
double nmi(const Partition& pred, const Partition& truth);

/// Calinski-Harabasz: tr(B)/tr(W) · (N − k)/(k − 1). Returns +infinity (and
/// logs a diagnostic) when every point sits on its centroid.
double ch_score(const DenseMatrix& ys, const Partition& labels);

}  // namespace deepgmm
