#pragma once
#include <vector>

#include "brainrot/linalg.hpp"

namespace brainrot {

inline constexpr Scalar kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Row-wise layer normalization. scale/bias are 1 x d.
// ---------------------------------------------------------------------------

struct LayerNormCache {
    MatX x_hat;   // normalized input
    VecX inv_std; // per row
};

[[nodiscard]] inline MatX layer_norm(const MatX& x, const MatX& scale, const MatX& bias,
                                     LayerNormCache* cache = nullptr) {
    const Eigen::Index n = x.cols();
    MatX x_hat(x.rows(), n);
    VecX inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).eval();
        const Scalar var = centered.square().sum() / static_cast<Scalar>(n);
        const Scalar is = Scalar(1) / std::sqrt(var + kLayerNormEps);
        x_hat.row(r) = centered * is;
        inv_std(r) = is;
    }
    MatX y = (x_hat.array().rowwise() * scale.row(0).array()).rowwise() + bias.row(0).array();
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

// Accumulates parameter gradients into dscale/dbias and returns dx.
[[nodiscard]] inline MatX layer_norm_backward(const MatX& dy, const LayerNormCache& cache,
                                              const MatX& scale, MatX& dscale, MatX& dbias) {
    const Eigen::Index n = dy.cols();
    MatX dx(dy.rows(), n);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const auto g = (dy.row(r).array() * scale.row(0).array()).eval();
        const Scalar m1 = g.sum() / static_cast<Scalar>(n);
        const Scalar m2 = (g * cache.x_hat.row(r).array()).sum() / static_cast<Scalar>(n);
        dx.row(r) = cache.inv_std(r) * (g - m1 - cache.x_hat.row(r).array() * m2);
    }
    dscale.row(0).array() += (dy.array() * cache.x_hat.array()).colwise().sum();
    dbias.row(0).array() += dy.array().colwise().sum();
    return dx;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

inline void softmax_rows_inplace(MatX& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const Scalar mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

// Given softmax outputs A and upstream dA, returns gradient wrt logits.
[[nodiscard]] inline MatX softmax_rows_backward(const MatX& a, const MatX& da) {
    MatX dz(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const Scalar dot = (da.row(r).array() * a.row(r).array()).sum();
        dz.row(r) = a.row(r).array() * (da.row(r).array() - dot);
    }
    return dz;
}

[[nodiscard]] inline VecX log_softmax(const VecX& logits) {
    const Scalar mx = logits.maxCoeff();
    const Scalar lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
}

// ---------------------------------------------------------------------------
// Adam. Parameter/gradient tensor lists must keep a stable order.
// ---------------------------------------------------------------------------

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<MatX*>& params, const std::vector<const MatX*>& grads) {
        if (m_.empty()) {
            for (const MatX* p : params) {
                m_.push_back(MatX::Zero(p->rows(), p->cols()));
                v_.push_back(MatX::Zero(p->rows(), p->cols()));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const MatX& g = *grads[i];
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
            const auto m_hat = (m_[i] / bc1).array();
            const auto v_hat = (v_[i] / bc2).array();
            params[i]->array() -= lr_ * m_hat / (v_hat.sqrt() + eps_);
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<MatX> m_, v_;
};

}  // namespace brainrot
