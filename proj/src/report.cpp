#include "brainrot/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "brainrot/errors.hpp"

namespace brainrot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("report: cannot open for writing: " + path.string());
    f << text;
    if (!f) throw FormatError("report: write failed: " + path.string());
}

json optional_json(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

void write_metrics_json(const fs::path& path, const MetricsReport& m) {
    json j;
    j["mae"] = m.mae;
    j["rmse"] = m.rmse;
    j["pearson_r"] = optional_json(m.pearson_r);
    j["spearman_rho"] = optional_json(m.spearman_rho);
    j["r2"] = optional_json(m.r2);
    j["n"] = m.n;
    write_text(path, j.dump(2) + "\n");
}

void write_association_json(const fs::path& path, const AssociationStats& s) {
    json j;
    j["table"] = {{"a", s.table.a}, {"b", s.table.b}, {"c", s.table.c}, {"d", s.table.d}};
    j["or"] = {{"point", s.odds_ratio.point}, {"lo", s.odds_ratio.lo}, {"hi", s.odds_ratio.hi}};
    j["rr"] = {{"point", s.relative_risk.point}, {"lo", s.relative_risk.lo}, {"hi", s.relative_risk.hi}};
    j["p"] = s.p_value;
    j["methods"] = s.methods;
    write_text(path, j.dump(2) + "\n");
}

void write_scatter_svg(const fs::path& path, const std::vector<Prediction>& predictions) {
    const int size = 420, margin = 40;
    double lo = 0, hi = 1;
    if (!predictions.empty()) {
        lo = predictions.front().age;
        hi = lo;
        for (const auto& p : predictions) {
            lo = std::min({lo, p.age, p.predicted_age});
            hi = std::max({hi, p.age, p.predicted_age});
        }
        if (!(hi > lo)) hi = lo + 1;
    }
    auto sx = [&](double v) { return margin + (v - lo) / (hi - lo) * (size - 2 * margin); };
    auto sy = [&](double v) { return size - margin - (v - lo) / (hi - lo) * (size - 2 * margin); };

    std::ostringstream out;
    char buf[256];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"gray\"/>\n", sx(lo),
                  sy(lo), sx(hi), sy(hi));
    out << buf;
    out << "<line x1=\"" << margin << "\" y1=\"" << size - margin << "\" x2=\"" << size - margin
        << "\" y2=\"" << size - margin << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << size - margin << "\" stroke=\"black\"/>\n";
    for (const auto& p : predictions) {
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n",
                      sx(p.age), sy(p.predicted_age));
        out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"11\">age (years)</text>\n", size / 2 - 30,
                  size - 10);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"12\" y=\"%d\" font-size=\"11\" transform=\"rotate(-90 12 %d)\">predicted age</text>\n",
                  size / 2, size / 2);
    out << buf;
    out << "</svg>\n";
    write_text(path, out.str());
}

void write_histogram_svg(const fs::path& path, const VecX& values, int bins) {
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    const int width = 420, height = 300, margin = 36;
    double lo = 0, hi = 1;
    if (values.size() > 0) {
        lo = values.minCoeff();
        hi = values.maxCoeff();
        if (!(hi > lo)) hi = lo + 1;
    }
    std::vector<int> count(static_cast<std::size_t>(bins), 0);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        int b = static_cast<int>((values(i) - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++count[static_cast<std::size_t>(b)];
    }
    const int peak = std::max(1, *std::max_element(count.begin(), count.end()));

    std::ostringstream out;
    char buf[256];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double bw = static_cast<double>(width - 2 * margin) / bins;
    for (int b = 0; b < bins; ++b) {
        const double h =
            static_cast<double>(count[static_cast<std::size_t>(b)]) / peak * (height - 2 * margin);
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"indianred\"/>\n",
                      margin + b * bw, height - margin - h, std::max(bw - 1.0, 0.5), h);
        out << buf;
    }
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"11\">brain age gap (years), %.2f to %.2f</text>\n",
                  margin, height - 8, lo, hi);
    out << buf;
    out << "</svg>\n";
    write_text(path, out.str());
}

void write_predictions_csv(const fs::path& path, const std::vector<Prediction>& predictions) {
    const bool with_sigma =
        !predictions.empty() && std::all_of(predictions.begin(), predictions.end(),
                                            [](const Prediction& p) { return p.sigma2.has_value(); });
    std::ostringstream out;
    out << (with_sigma ? "subject_id,age,sex,predicted_age,bag,sigma2\n"
                       : "subject_id,age,sex,predicted_age,bag\n");
    char buf[192];
    for (const auto& p : predictions) {
        if (with_sigma) {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%d,%.6f,%.6f,%.6f\n", p.subject_id.c_str(), p.age,
                          p.sex, p.predicted_age, p.bag, *p.sigma2);
        } else {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%d,%.6f,%.6f\n", p.subject_id.c_str(), p.age, p.sex,
                          p.predicted_age, p.bag);
        }
        out << buf;
    }
    write_text(path, out.str());
}

std::vector<Prediction> load_predictions_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError("predictions not found: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw FormatError("predictions: empty file");
    bool with_sigma;
    if (line == "subject_id,age,sex,predicted_age,bag,sigma2") {
        with_sigma = true;
    } else if (line == "subject_id,age,sex,predicted_age,bag") {
        with_sigma = false;
    } else {
        throw FormatError("predictions: unexpected header");
    }
    std::vector<Prediction> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        Prediction p;
        std::string field;
        if (!std::getline(ss, p.subject_id, ',')) throw FormatError("predictions: malformed row");
        std::getline(ss, field, ',');
        p.age = std::stod(field);
        std::getline(ss, field, ',');
        p.sex = std::stoi(field);
        std::getline(ss, field, ',');
        p.predicted_age = std::stod(field);
        std::getline(ss, field, ',');
        p.bag = std::stod(field);
        if (with_sigma) {
            std::getline(ss, field, ',');
            p.sigma2 = std::stod(field);
        }
        out.push_back(std::move(p));
    }
    return out;
}

void write_similarity_csv(const fs::path& path, const MatX& m) {
    std::ostringstream out;
    char buf[48];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9f", m(i, j));
            out << buf << (j + 1 < m.cols() ? "," : "");
        }
        out << '\n';
    }
    write_text(path, out.str());
}

void write_roi_csv(const fs::path& path, const std::vector<RoiScore>& scores) {
    std::ostringstream out;
    out << "group,mean_intensity,voxel_count\n";
    char buf[160];
    for (const auto& s : scores) {
        std::snprintf(buf, sizeof(buf), "%s,%.9f,%ld\n", s.group.c_str(), s.mean_intensity,
                      s.voxel_count);
        out << buf;
    }
    write_text(path, out.str());
}

void write_bag_records_csv(const fs::path& path, const BagCohort& cohort) {
    std::ostringstream out;
    out << "subject_id,bag,cohort,extreme\n";
    char buf[128];
    for (const auto& r : cohort.records) {
        const char* tag = r.extreme == Extreme::pos ? "pos" : r.extreme == Extreme::neg ? "neg" : "none";
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%d,%s\n", r.subject_id.c_str(), r.bag, r.cohort, tag);
        out << buf;
    }
    write_text(path, out.str());
}

void write_vit_log_jsonl(const fs::path& path, const std::vector<ViTEpochStat>& log) {
    std::ostringstream out;
    for (const auto& e : log) {
        json j;
        j["epoch"] = e.epoch;
        j["loss"] = e.loss;
        j["accuracy"] = e.accuracy;
        out << j.dump() << '\n';
    }
    write_text(path, out.str());
}

void write_train_report_json(const fs::path& path, const TrainReport& report) {
    json j;
    j["best_epoch"] = report.best_epoch;
    j["stopped_epoch"] = report.stopped_epoch;
    j["epochs"] = json::array();
    for (const auto& e : report.epochs)
        j["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mae", e.val_mae}});
    write_text(path, j.dump(2) + "\n");
}

void write_report(const MetricsReport& metrics, const std::optional<AssociationStats>& stats,
                  const std::vector<Prediction>& predictions, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw FormatError("report: cannot create " + out_dir.string());
    write_metrics_json(out_dir / "metrics.json", metrics);
    if (stats) write_association_json(out_dir / "association.json", *stats);
    write_scatter_svg(out_dir / "scatter.svg", predictions);
    VecX bags(static_cast<Eigen::Index>(predictions.size()));
    for (std::size_t i = 0; i < predictions.size(); ++i) bags(static_cast<Eigen::Index>(i)) = predictions[i].bag;
    write_histogram_svg(out_dir / "bag_histogram.svg", bags);
}

}  // namespace brainrot
