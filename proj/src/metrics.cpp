#include "deepgmm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace deepgmm {

namespace {

void check_lengths(const Partition& a, const Partition& b, const char* what) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(what) + ": partition lengths differ (" +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

double entropy(std::span<const std::uint64_t> counts, double n) {
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = double(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

Partition Partition::from_labels(std::vector<std::size_t> labels) {
    const std::size_t k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    return {std::move(labels), k};
}

Partition Partition::from_labels(std::span<const int> labels) {
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw std::invalid_argument("Partition: negative label at index " + std::to_string(i));
        out[i] = std::size_t(labels[i]);
    }
    return from_labels(std::move(out));
}

std::uint64_t ContingencyTable::total() const noexcept {
    std::uint64_t t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
}

ContingencyTable confusion_matrix(const Partition& pred, const Partition& truth) {
    check_lengths(pred, truth, "confusion_matrix");
    ContingencyTable table{std::vector<std::vector<std::uint64_t>>(
        pred.num_clusters, std::vector<std::uint64_t>(truth.num_clusters, 0))};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred.labels[i] >= pred.num_clusters || truth.labels[i] >= truth.num_clusters) {
            throw std::invalid_argument("confusion_matrix: label out of range at index " + std::to_string(i));
        }
        ++table.counts[pred.labels[i]][truth.labels[i]];
    }
    return table;
}

std::vector<std::size_t> hungarian_max(const std::vector<std::vector<double>>& benefit) {
    // Shortest-augmenting-path formulation on costs = −benefit, 1-based with a
    // dummy column 0.
    const std::size_t n = benefit.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);

    for (std::size_t i = 1; i <= n; ++i) {
        if (benefit[i - 1].size() != n) throw std::invalid_argument("hungarian_max: matrix not square");
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = -benefit[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
    return assignment;
}

double clustering_accuracy(const Partition& pred, const Partition& truth) {
    check_lengths(pred, truth, "clustering_accuracy");
    if (pred.size() == 0) throw std::invalid_argument("clustering_accuracy: empty partitions");
    const auto table = confusion_matrix(pred, truth);
    // Pad to square with zero rows/columns.
    const std::size_t k = std::max(table.rows(), table.cols());
    std::vector<std::vector<double>> benefit(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < table.rows(); ++i)
        for (std::size_t j = 0; j < table.cols(); ++j) benefit[i][j] = double(table.counts[i][j]);
    const auto assignment = hungarian_max(benefit);
    double matched = 0.0;
    for (std::size_t i = 0; i < k; ++i) matched += benefit[i][assignment[i]];
    return matched / double(pred.size());
}

double nmi(const Partition& pred, const Partition& truth) {
    check_lengths(pred, truth, "nmi");
    if (pred.size() == 0) throw std::invalid_argument("nmi: empty partitions");
    const auto table = confusion_matrix(pred, truth);
    const double n = double(pred.size());

    std::vector<std::uint64_t> row_sums(table.rows(), 0), col_sums(table.cols(), 0);
    for (std::size_t i = 0; i < table.rows(); ++i)
        for (std::size_t j = 0; j < table.cols(); ++j) {
            row_sums[i] += table.counts[i][j];
            col_sums[j] += table.counts[i][j];
        }

    double mi = 0.0;
    for (std::size_t i = 0; i < table.rows(); ++i)
        for (std::size_t j = 0; j < table.cols(); ++j) {
            const auto c = table.counts[i][j];
            if (c == 0) continue;
            const double pij = double(c) / n;
            mi += pij * std::log(double(c) * n / (double(row_sums[i]) * double(col_sums[j])));
        }

    const double h_pred = entropy(row_sums, n);
    const double h_truth = entropy(col_sums, n);
    const double denom = std::max(h_pred, h_truth);
    if (h_pred == 0.0 && h_truth == 0.0) return 1.0;
    if (denom == 0.0) return 0.0;
    return std::clamp(mi / denom, 0.0, 1.0);
}

double ch_score(const DenseMatrix& ys, const Partition& labels) {
    const std::size_t n = ys.rows();
    const std::size_t k = labels.num_clusters;
    const std::size_t dim = ys.cols();
    if (labels.size() != n) {
        throw std::invalid_argument("ch_score: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(n) + " samples");
    }
    if (k < 2) throw std::invalid_argument("ch_score: need at least 2 clusters");
    if (n <= k) throw std::invalid_argument("ch_score: need more samples than clusters");

    std::vector<double> counts(k, 0.0);
    DenseMatrix centroids(k, dim);
    std::vector<double> overall(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto l = labels.labels[i];
        if (l >= k) throw std::invalid_argument("ch_score: label out of range at index " + std::to_string(i));
        counts[l] += 1.0;
        const auto y = ys.row(i);
        auto c = centroids.row(l);
        for (std::size_t d = 0; d < dim; ++d) {
            c[d] += y[d];
            overall[d] += y[d];
        }
    }
    for (std::size_t q = 0; q < k; ++q) {
        if (counts[q] == 0.0) throw std::invalid_argument("ch_score: cluster " + std::to_string(q) + " is empty");
        for (double& v : centroids.row(q)) v /= counts[q];
    }
    for (double& v : overall) v /= double(n);

    double between = 0.0;
    for (std::size_t q = 0; q < k; ++q) between += counts[q] * squared_distance(centroids.row(q), overall);
    double within = 0.0;
    for (std::size_t i = 0; i < n; ++i) within += squared_distance(ys.row(i), centroids.row(labels.labels[i]));

    if (within == 0.0) {
        std::cerr << "warning: ch_score: within-cluster dispersion is zero; returning +inf\n";
        return std::numeric_limits<double>::infinity();
    }
    return (between / within) * (double(n - k) / double(k - 1));
}

}  // namespace deepgmm
