#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace brainrot {

using Scalar = double;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatX = Mat<Scalar>;
using VecX = Vec<Scalar>;
using MatF = Mat<float>;
using MatI = Mat<std::int32_t>;

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { silu, relu, leaky_relu, gelu };

[[nodiscard]] inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::silu:       return "silu";
        case Activation::relu:       return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::gelu:       return "gelu";
    }
    return "silu";
}

[[nodiscard]] inline Activation parse_activation(std::string_view s) {
    if (s == "silu")       return Activation::silu;
    if (s == "relu")       return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "gelu")       return Activation::gelu;
    throw std::invalid_argument("unknown activation: " + std::string(s));
}

inline constexpr Scalar kLeakySlope = 0.01;

[[nodiscard]] inline Scalar act_value(Activation a, Scalar x) {
    switch (a) {
        case Activation::silu:       return x / (Scalar(1) + std::exp(-x));
        case Activation::relu:       return x > 0 ? x : Scalar(0);
        case Activation::leaky_relu: return x > 0 ? x : kLeakySlope * x;
        case Activation::gelu:       return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
    }
    return x;
}

[[nodiscard]] inline Scalar act_slope(Activation a, Scalar x) {
    switch (a) {
        case Activation::silu: {
            const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
            return s * (Scalar(1) + x * (Scalar(1) - s));
        }
        case Activation::relu:       return x > 0 ? Scalar(1) : Scalar(0);
        case Activation::leaky_relu: return x > 0 ? Scalar(1) : kLeakySlope;
        case Activation::gelu: {
            const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
            const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * Scalar(M_PI));
            return cdf + x * pdf;
        }
    }
    return Scalar(1);
}

template <class Derived>
[[nodiscard]] MatX act_forward(Activation a, const Eigen::MatrixBase<Derived>& pre) {
    return pre.unaryExpr([a](Scalar x) { return act_value(a, x); });
}

template <class Derived>
[[nodiscard]] MatX act_derivative(Activation a, const Eigen::MatrixBase<Derived>& pre) {
    return pre.unaryExpr([a](Scalar x) { return act_slope(a, x); });
}

// ---------------------------------------------------------------------------
// Min-max normalization; a constant input maps to all zeros.
// ---------------------------------------------------------------------------

template <class Derived>
[[nodiscard]] MatX normalize01(const Eigen::MatrixBase<Derived>& x) {
    if (x.size() == 0) return MatX(x.rows(), x.cols());
    const Scalar lo = x.minCoeff();
    const Scalar hi = x.maxCoeff();
    if (!(hi > lo)) return MatX::Zero(x.rows(), x.cols());
    return (x.array() - lo) / (hi - lo);
}

// ---------------------------------------------------------------------------
// Corner-aligned bilinear upsampling of a coarse grid to (rows, cols).
// ---------------------------------------------------------------------------

[[nodiscard]] inline MatX bilinear_resize(const MatX& grid, int rows, int cols) {
    if (grid.rows() < 1 || grid.cols() < 1) throw std::invalid_argument("bilinear_resize: empty grid");
    if (rows < 1 || cols < 1) throw std::invalid_argument("bilinear_resize: empty target");
    MatX out(rows, cols);
    const int gr = static_cast<int>(grid.rows());
    const int gc = static_cast<int>(grid.cols());
    const Scalar sy = rows > 1 ? Scalar(gr - 1) / Scalar(rows - 1) : Scalar(0);
    const Scalar sx = cols > 1 ? Scalar(gc - 1) / Scalar(cols - 1) : Scalar(0);
    for (int r = 0; r < rows; ++r) {
        const Scalar fy = sy * r;
        const int y0 = std::min(static_cast<int>(fy), gr - 1);
        const int y1 = std::min(y0 + 1, gr - 1);
        const Scalar wy = fy - y0;
        for (int c = 0; c < cols; ++c) {
            const Scalar fx = sx * c;
            const int x0 = std::min(static_cast<int>(fx), gc - 1);
            const int x1 = std::min(x0 + 1, gc - 1);
            const Scalar wx = fx - x0;
            out(r, c) = (1 - wy) * ((1 - wx) * grid(y0, x0) + wx * grid(y0, x1)) +
                        wy * ((1 - wx) * grid(y1, x0) + wx * grid(y1, x1));
        }
    }
    return out;
}

// Nearest-neighbor source index when resizing a length-`src` axis to `dst`.
[[nodiscard]] inline int nearest_source_index(int i, int src, int dst) {
    return static_cast<int>((static_cast<long long>(i) * src) / dst);
}

}  // namespace brainrot
