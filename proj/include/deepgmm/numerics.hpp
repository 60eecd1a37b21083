#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace deepgmm {

/// Row-major matrix of doubles. Every sample set, activation block and
/// parameter tensor in the library is one of these.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    const std::vector<double>& values() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }

    /// Rows `indices` gathered into a new matrix, in the given order.
    DenseMatrix gather_rows(std::span<const std::size_t> indices) const;
    DenseMatrix transposed() const;

    bool all_finite() const noexcept;

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// a · b. Throws std::invalid_argument on shape mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a · bᵀ
DenseMatrix matmul_transpose_b(const DenseMatrix& a, const DenseMatrix& b);
/// aᵀ · b
DenseMatrix matmul_transpose_a(const DenseMatrix& a, const DenseMatrix& b);

/// log Σ exp(v) via max-shift. Throws on empty input.
double log_sum_exp(std::span<const double> values);

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; eigenvectors are the matching columns.
struct SymmetricEigen {
    std::vector<double> values;
    DenseMatrix vectors;
};
SymmetricEigen jacobi_eigen(const DenseMatrix& symmetric, int max_sweeps = 100);

/// Projects mean-centred rows onto the two leading principal axes.
/// Throws std::invalid_argument for fewer than 2 rows/cols or when every
/// row is identical.
DenseMatrix pca_project_2d(const DenseMatrix& data);

/// xoshiro256** seeded through splitmix64. Every derived draw (uniform,
/// normal, index, shuffle) is implemented here rather than through
/// <random> distributions, whose outputs differ between standard libraries.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be > 0.
    std::size_t index(std::size_t n) noexcept;
    /// Standard normal via Box-Muller (both halves used).
    double normal() noexcept;

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Independent generator for a named sub-stream (e.g. one per epoch).
    SeededRng fork(std::uint64_t stream) const noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace deepgmm
