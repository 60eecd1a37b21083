#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "deepgmm/autoencoder.hpp"
#include "deepgmm/gmm.hpp"
#include "deepgmm/numerics.hpp"

namespace deepgmm::test {

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, SeededRng& rng, double scale = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = rng.uniform(-scale, scale);
    return m;
}

inline double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / denom;
}

/// Relative error with an absolute floor, for gradient components that may
/// legitimately sit near zero.
inline double gradient_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GmmParams random_gmm(std::size_t m, std::size_t dim, SeededRng& rng, double mean_scale = 2.0) {
    GmmParams p;
    p.weight_logits.resize(m);
    for (double& a : p.weight_logits) a = rng.uniform(-1.0, 1.0);
    p.means = random_matrix(m, dim, rng, mean_scale);
    p.log_sigmas = DenseMatrix(m, dim);
    for (double& s : p.log_sigmas.values()) s = rng.uniform(-0.5, 0.5);
    return p;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("deepgmm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace deepgmm::test
