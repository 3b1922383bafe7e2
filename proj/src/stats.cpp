#include "brainrot/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace brainrot {

namespace {

constexpr double kZ95 = 1.96;  // two-sided 95% normal quantile as conventionally used

std::optional<double> pearson(const VecX& x, const VecX& y) {
    const double n = static_cast<double>(x.size());
    const double mx = x.mean(), my = y.mean();
    const VecX cx = x.array() - mx, cy = y.array() - my;
    const double sx = cx.squaredNorm(), sy = cy.squaredNorm();
    if (!(sx > 0) || !(sy > 0)) return std::nullopt;
    (void)n;
    return cx.dot(cy) / std::sqrt(sx * sy);
}

}  // namespace

VecX average_ranks(const VecX& values) {
    const Eigen::Index n = values.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&values](int a, int b) { return values(a) < values(b); });
    VecX ranks(n);
    Eigen::Index i = 0;
    while (i < n) {
        Eigen::Index j = i;
        while (j + 1 < n && values(order[static_cast<std::size_t>(j + 1)]) ==
                                values(order[static_cast<std::size_t>(i)]))
            ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of 1-based ranks i+1..j+1
        for (Eigen::Index k = i; k <= j; ++k) ranks(order[static_cast<std::size_t>(k)]) = rank;
        i = j + 1;
    }
    return ranks;
}

MetricsReport compute_metrics(const VecX& preds, const VecX& targets) {
    if (preds.size() != targets.size()) throw std::invalid_argument("compute_metrics: length mismatch");
    if (preds.size() < 2) throw std::invalid_argument("compute_metrics: need at least 2 samples");
    MetricsReport m;
    m.n = static_cast<int>(preds.size());
    const VecX resid = preds - targets;
    m.mae = resid.cwiseAbs().mean();
    m.rmse = std::sqrt(resid.squaredNorm() / static_cast<double>(m.n));
    m.pearson_r = pearson(preds, targets);
    const VecX rp = average_ranks(preds), rt = average_ranks(targets);
    m.spearman_rho = pearson(rp, rt);
    const double sstot = (targets.array() - targets.mean()).square().sum();
    if (sstot > 0) m.r2 = 1.0 - resid.squaredNorm() / sstot;
    return m;
}

BagCohort bag_cohort(const std::vector<Prediction>& predictions, const std::vector<int>& cohorts,
                     double threshold_sd) {
    if (predictions.size() != cohorts.size())
        throw std::invalid_argument("bag_cohort: prediction/cohort length mismatch");
    if (predictions.size() < 2) throw std::invalid_argument("bag_cohort: need at least 2 predictions");
    BagCohort out;
    const double n = static_cast<double>(predictions.size());
    double mean = 0;
    for (const auto& p : predictions) mean += p.bag;
    mean /= n;
    double ss = 0;
    for (const auto& p : predictions) ss += (p.bag - mean) * (p.bag - mean);
    out.sd = std::sqrt(ss / (n - 1.0));
    out.degenerate = !(out.sd > 0);

    const double cut = threshold_sd * out.sd;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        BagRecord r;
        r.subject_id = predictions[i].subject_id;
        r.bag = predictions[i].bag;
        r.cohort = cohorts[i];
        if (!out.degenerate) {
            if (r.bag > cut) {
                r.extreme = Extreme::pos;
            } else if (r.bag < -cut) {
                r.extreme = Extreme::neg;
            }
        }
        out.records.push_back(std::move(r));
    }
    return out;
}

ContingencyTable bag_contingency(const BagCohort& cohort, Referent referent) {
    ContingencyTable t;
    for (const auto& r : cohort.records) {
        if (r.extreme == Extreme::pos) {
            (r.cohort ? t.a : t.b) += 1;
        } else if (referent == Referent::rest || r.extreme == Extreme::neg) {
            (r.cohort ? t.c : t.d) += 1;
        }
    }
    return t;
}

double fisher_exact_two_sided(const ContingencyTable& t) {
    if (t.a < 0 || t.b < 0 || t.c < 0 || t.d < 0) throw std::invalid_argument("fisher: negative count");
    const long n = t.total();
    if (n < 1) throw std::invalid_argument("fisher: empty table");
    const long r1 = t.a + t.b, r2 = t.c + t.d, c1 = t.a + t.c;
    auto log_pmf = [&](long k) {
        return std::lgamma(r1 + 1.0) - std::lgamma(k + 1.0) - std::lgamma(r1 - k + 1.0) +
               std::lgamma(r2 + 1.0) - std::lgamma(c1 - k + 1.0) - std::lgamma(r2 - (c1 - k) + 1.0) -
               (std::lgamma(n + 1.0) - std::lgamma(c1 + 1.0) - std::lgamma(n - c1 + 1.0));
    };
    const long k_min = std::max(0L, c1 - r2);
    const long k_max = std::min(r1, c1);
    const double observed = log_pmf(t.a);
    const double tie_tol = std::log1p(1e-7);
    double p = 0;
    for (long k = k_min; k <= k_max; ++k) {
        const double lp = log_pmf(k);
        if (lp <= observed + tie_tol) p += std::exp(lp);
    }
    return std::min(p, 1.0);
}

AssociationStats association(const ContingencyTable& table) {
    if (table.a < 0 || table.b < 0 || table.c < 0 || table.d < 0)
        throw std::invalid_argument("association: negative count");
    if (table.total() < 1) throw std::invalid_argument("association: empty table");

    AssociationStats s;
    s.table = table;
    s.haldane = table.a == 0 || table.b == 0 || table.c == 0 || table.d == 0;
    const double h = s.haldane ? 0.5 : 0.0;
    const double a = table.a + h, b = table.b + h, c = table.c + h, d = table.d + h;

    s.odds_ratio.point = (a * d) / (b * c);
    const double se_or = std::sqrt(1 / a + 1 / b + 1 / c + 1 / d);
    s.odds_ratio.lo = std::exp(std::log(s.odds_ratio.point) - kZ95 * se_or);
    s.odds_ratio.hi = std::exp(std::log(s.odds_ratio.point) + kZ95 * se_or);

    s.relative_risk.point = (a / (a + b)) / (c / (c + d));
    const double se_rr = std::sqrt(b / (a * (a + b)) + d / (c * (c + d)));
    s.relative_risk.lo = std::exp(std::log(s.relative_risk.point) - kZ95 * se_rr);
    s.relative_risk.hi = std::exp(std::log(s.relative_risk.point) + kZ95 * se_rr);

    s.p_value = fisher_exact_two_sided(table);
    s.methods = {"or_ci=woolf", "rr_ci=katz", "p=fisher_exact_two_sided"};
    if (s.haldane) s.methods.push_back("haldane_anscombe_0.5");
    return s;
}

SimilarityMatrix cosine_similarity_matrix(const std::vector<MatX>& feature_maps) {
    if (feature_maps.empty()) throw std::invalid_argument("cosine_similarity_matrix: empty input");
    const Eigen::Index S = feature_maps.front().rows();
    const Eigen::Index d = feature_maps.front().cols();
    SimilarityMatrix out;
    out.m = MatX::Zero(S, S);
    for (const auto& z : feature_maps) {
        if (z.rows() != S || z.cols() != d)
            throw std::invalid_argument("cosine_similarity_matrix: inconsistent shapes");
        VecX norms(S);
        for (Eigen::Index i = 0; i < S; ++i) norms(i) = z.row(i).norm();
        for (Eigen::Index i = 0; i < S; ++i) {
            if (!(norms(i) > 0)) {
                ++out.zero_rows;
                continue;  // contributes cosine 0 against every row
            }
            for (Eigen::Index j = i; j < S; ++j) {
                if (!(norms(j) > 0)) continue;
                const Scalar cij = z.row(i).dot(z.row(j)) / (norms(i) * norms(j));
                out.m(i, j) += cij;
                if (j != i) out.m(j, i) += cij;
            }
        }
    }
    out.m /= static_cast<Scalar>(feature_maps.size());
    return out;
}

}  // namespace brainrot
