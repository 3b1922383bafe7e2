#pragma once
#include <optional>
#include <string>
#include <vector>

#include "brainrot/linalg.hpp"
#include "brainrot/regressor.hpp"

namespace brainrot {

// ---------------------------------------------------------------------------
// Regression metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
    double mae = 0;
    double rmse = 0;
    std::optional<double> pearson_r;
    std::optional<double> spearman_rho;
    std::optional<double> r2;
    int n = 0;
};

// MAE, RMSE, Pearson r, Spearman rho (average ranks on ties), and
// R^2 = 1 - SSres/SStot. Correlations are absent (not zero) when undefined.
[[nodiscard]] MetricsReport compute_metrics(const VecX& preds, const VecX& targets);

// Average ranks, 1-based; ties share the mean of their rank range.
[[nodiscard]] VecX average_ranks(const VecX& values);

// ---------------------------------------------------------------------------
// BAG cohort labeling
// ---------------------------------------------------------------------------

enum class Extreme { pos, neg, none };

struct BagRecord {
    std::string subject_id;
    double bag = 0;
    int cohort = 0;
    Extreme extreme = Extreme::none;
};

struct BagCohort {
    std::vector<BagRecord> records;
    double sd = 0;           // sample (n-1) standard deviation of the BAGs
    bool degenerate = false; // zero-variance input: no extremes assigned
};

[[nodiscard]] BagCohort bag_cohort(const std::vector<Prediction>& predictions,
                                   const std::vector<int>& cohorts, double threshold_sd = 1.0);

// ---------------------------------------------------------------------------
// 2x2 association statistics
// ---------------------------------------------------------------------------

struct ContingencyTable {
    long a = 0;  // exposed cases
    long b = 0;  // exposed controls
    long c = 0;  // unexposed cases
    long d = 0;  // unexposed controls

    [[nodiscard]] long total() const { return a + b + c + d; }
};

struct Interval {
    double point = 0, lo = 0, hi = 0;
};

struct AssociationStats {
    ContingencyTable table;
    Interval odds_ratio;     // Woolf log CI
    Interval relative_risk;  // Katz log CI
    double p_value = 1;      // two-sided Fisher exact
    bool haldane = false;    // +0.5 correction applied to OR/RR cells
    std::vector<std::string> methods;
};

[[nodiscard]] AssociationStats association(const ContingencyTable& table);

// Two-sided Fisher exact p: the summed probability of all tables with the
// observed margins whose hypergeometric probability does not exceed the
// observed one (1e-7 relative tie tolerance).
[[nodiscard]] double fisher_exact_two_sided(const ContingencyTable& table);

// Builds exposed = extreme-positive agers vs either everyone else
// ("rest") or extreme-negative agers ("neg").
enum class Referent { rest, neg };
[[nodiscard]] ContingencyTable bag_contingency(const BagCohort& cohort, Referent referent);

// ---------------------------------------------------------------------------
// Embedding cosine-similarity analysis
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
    MatX m;             // S x S, symmetric, averaged over subjects
    int zero_rows = 0;  // rows with zero norm anywhere in the input (cos = 0 policy)
};

[[nodiscard]] SimilarityMatrix cosine_similarity_matrix(const std::vector<MatX>& feature_maps);

}  // namespace brainrot
