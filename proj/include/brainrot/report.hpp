#pragma once
#include <filesystem>
#include <optional>
#include <vector>

#include "brainrot/interpret.hpp"
#include "brainrot/regressor.hpp"
#include "brainrot/stats.hpp"
#include "brainrot/vit.hpp"

namespace brainrot {

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& metrics);
void write_association_json(const std::filesystem::path& path, const AssociationStats& stats);

// Predicted-vs-actual scatter; one circle element per prediction.
void write_scatter_svg(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
void write_histogram_svg(const std::filesystem::path& path, const VecX& values, int bins = 20);

void write_predictions_csv(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
[[nodiscard]] std::vector<Prediction> load_predictions_csv(const std::filesystem::path& path);

void write_similarity_csv(const std::filesystem::path& path, const MatX& m);
void write_roi_csv(const std::filesystem::path& path, const std::vector<RoiScore>& scores);
void write_bag_records_csv(const std::filesystem::path& path, const BagCohort& cohort);

void write_vit_log_jsonl(const std::filesystem::path& path, const std::vector<ViTEpochStat>& log);
void write_train_report_json(const std::filesystem::path& path, const TrainReport& report);

// Metrics plus optional association statistics and the two plots; the
// association file is omitted when absent.
void write_report(const MetricsReport& metrics, const std::optional<AssociationStats>& stats,
                  const std::vector<Prediction>& predictions, const std::filesystem::path& out_dir);

}  // namespace brainrot
