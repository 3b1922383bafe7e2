#pragma once
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "brainrot/linalg.hpp"
#include "brainrot/rng.hpp"

namespace testsupport {

using brainrot::MatX;
using brainrot::Scalar;

inline std::filesystem::path temp_dir(const std::string& suffix) {
    auto p = std::filesystem::temp_directory_path() / ("brainrot_test_" + suffix);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6);
}

inline std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline bool file_contents_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
    return read_bytes(a) == read_bytes(b);
}

inline MatX random_matrix(brainrot::Rng& rng, int rows, int cols, double scale = 1.0) {
    MatX m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

// Central-difference check of analytic gradients against a scalar loss.
// `tensors` pairs each parameter tensor with its analytic gradient.
// Returns the maximum relative error over every entry.
inline double max_grad_rel_err(const std::vector<std::pair<MatX*, const MatX*>>& tensors,
                               const std::function<double()>& loss, double h = 1e-5) {
    double worst = 0;
    for (const auto& [param, grad] : tensors) {
        for (Eigen::Index i = 0; i < param->rows(); ++i) {
            for (Eigen::Index j = 0; j < param->cols(); ++j) {
                const Scalar orig = (*param)(i, j);
                const double step = h * std::max(1.0, std::abs(orig));
                (*param)(i, j) = orig + step;
                const double lp = loss();
                (*param)(i, j) = orig - step;
                const double lm = loss();
                (*param)(i, j) = orig;
                const double numeric = (lp - lm) / (2.0 * step);
                worst = std::max(worst, rel_err((*grad)(i, j), numeric));
            }
        }
    }
    return worst;
}

}  // namespace testsupport
