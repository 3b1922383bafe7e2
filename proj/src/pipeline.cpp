#include "brainrot/pipeline.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "brainrot/errors.hpp"
#include "brainrot/interpret.hpp"
#include "brainrot/report.hpp"
#include "brainrot/stats.hpp"

namespace brainrot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_artifact(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw MissingArtifactError("missing prerequisite artifact " + path.string() + "; run `brainrot " +
                                   producer + "` first");
}

void write_provenance(const RunConfig& cfg, const std::string& stage,
                      const std::map<std::string, fs::path>& artifacts) {
    const fs::path dir = cfg.out_dir() / "provenance";
    std::error_code ec;
    fs::create_directories(dir, ec);
    json j;
    j["subcommand"] = stage;
    j["seed"] = cfg.seed();
    j["config"] = cfg.serialize();
    json arts = json::object();
    char buf[24];
    for (const auto& [name, path] : artifacts) {
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(file_checksum(path)));
        arts[name] = buf;
    }
    j["artifacts"] = arts;
    std::ofstream f(dir / (stage + ".json"), std::ios::trunc);
    f << j.dump(2) << "\n";
}

CohortManifest load_manifest_checked(const RunConfig& cfg) {
    const fs::path path = cfg.out_dir() / "manifest.csv";
    require_artifact(path, "synth");
    CohortManifest m = load_manifest(path);
    m.validate(cfg.out_dir());
    return m;
}

std::vector<LabeledFeature> load_features_checked(const RunConfig& cfg, const CohortManifest& manifest,
                                                  const std::string& split) {
    const fs::path path = cfg.out_dir() / "features.brvt";
    require_artifact(path, "extract");
    const auto tensors = load_tensor_archive(path);
    std::map<std::string, const NamedTensor*> by_id;
    for (const auto& t : tensors) by_id[t.name] = &t;
    std::vector<LabeledFeature> out;
    for (const auto& row : manifest.rows) {
        if (!split.empty() && row.split != split) continue;
        const auto it = by_id.find(row.subject_id);
        if (it == by_id.end())
            throw MissingArtifactError("features archive " + path.string() + " has no entry for subject " +
                                       row.subject_id + "; rerun `brainrot extract`");
        out.push_back({row.subject_id, it->second->data, row.age, row.sex});
    }
    return out;
}

std::vector<double> default_band_edges(const CohortManifest& manifest, const std::string& split) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : manifest.rows) {
        if (!split.empty() && r.split != split) continue;
        lo = std::min(lo, r.age);
        hi = std::max(hi, r.age);
    }
    std::vector<double> edges;
    if (!(hi >= lo)) return edges;
    const double start = std::floor(lo / 10.0) * 10.0;
    for (double e = start; e < hi + 10.0; e += 10.0) edges.push_back(e);
    return edges;
}

}  // namespace

std::uint64_t file_checksum(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("cannot checksum missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!f) break;
    }
    return h;
}

void run_synth(const RunConfig& cfg) {
    const CohortManifest manifest = generate_synthetic_cohort(cfg.synth(), cfg.out_dir());
    (void)manifest;
    write_provenance(cfg, "synth", {{"manifest.csv", cfg.out_dir() / "manifest.csv"}});
}

void run_pretrain(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    const auto train_rows = manifest.split("train");
    if (train_rows.empty()) throw ConfigError("pretrain: manifest has no train split");

    ViTConfig vcfg = cfg.vit();
    std::vector<std::pair<double, int>> age_sex;
    for (const auto& r : train_rows) age_sex.emplace_back(r.age, r.sex);

    SliceDataset dataset;
    dataset.classes = ClassSet::from_training(age_sex, vcfg.bin_width);
    for (const auto& row : train_rows) {
        const Volume vol = load_volume(cfg.out_dir() / row.path);
        const SliceStack stack = extract_slices(vol);
        const EvenSample sample = sample_even_slices(stack, std::min(vcfg.slices_per_volume, vol.S));
        const int cls = dataset.classes.index_of(row.age, row.sex);
        for (const auto& s : sample.slices) dataset.examples.push_back({s, cls});
    }

    const ViTTrainResult result = train_vit(dataset, vcfg);
    save_vit(cfg.out_dir() / "vit.brvt", result.params);
    write_vit_log_jsonl(cfg.out_dir() / "vit_train_log.jsonl", result.log);
    write_provenance(cfg, "pretrain",
                     {{"vit.brvt", cfg.out_dir() / "vit.brvt"},
                      {"vit_train_log.jsonl", cfg.out_dir() / "vit_train_log.jsonl"}});
}

void run_extract(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    require_artifact(cfg.out_dir() / "vit.brvt", "pretrain");
    const ViTParams vit = load_vit(cfg.out_dir() / "vit.brvt");

    std::vector<NamedTensor> tensors;
    tensors.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        const Volume vol = load_volume(cfg.out_dir() / row.path);
        const EmbeddingMatrix em = build_feature_map(vol, vit);
        tensors.push_back(NamedTensor::matrix(row.subject_id, em.Z));
    }
    save_tensor_archive(cfg.out_dir() / "features.brvt", tensors);
    write_provenance(cfg, "extract", {{"features.brvt", cfg.out_dir() / "features.brvt"}});
}

void run_train(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    const auto train = load_features_checked(cfg, manifest, "train");
    const auto val = load_features_checked(cfg, manifest, "val");
    if (train.empty()) throw ConfigError("train: manifest has no train split");
    if (val.empty()) throw ConfigError("train: manifest has no val split");

    const fs::path vit_path = cfg.out_dir() / "vit.brvt";
    const bool have_vit = fs::exists(vit_path);
    const std::uint64_t vit_before = have_vit ? file_checksum(vit_path) : 0;
    const RegressorTrainResult result = train_regressor(train, val, cfg.regressor());
    if (have_vit && file_checksum(vit_path) != vit_before)
        throw std::runtime_error("train: frozen encoder contract violated (vit.brvt changed)");

    save_regressor(cfg.out_dir() / "regressor.brvt", result.params);
    write_train_report_json(cfg.out_dir() / "train_report.json", result.report);
    write_provenance(cfg, "train",
                     {{"regressor.brvt", cfg.out_dir() / "regressor.brvt"},
                      {"train_report.json", cfg.out_dir() / "train_report.json"}});
}

void run_predict(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    require_artifact(cfg.out_dir() / "regressor.brvt", "train");
    const RegressorParams reg = load_regressor(cfg.out_dir() / "regressor.brvt");
    const auto features = load_features_checked(cfg, manifest, "");
    const RegressorConfig rcfg = cfg.regressor();

    std::vector<Prediction> predictions;
    predictions.reserve(features.size());
    for (const auto& f : features) predictions.push_back(predict(f, reg, rcfg));
    write_predictions_csv(cfg.out_dir() / "predictions.csv", predictions);
    write_provenance(cfg, "predict", {{"predictions.csv", cfg.out_dir() / "predictions.csv"}});
}

namespace {

std::vector<Prediction> split_predictions(const RunConfig& cfg, const CohortManifest& manifest) {
    const fs::path path = cfg.out_dir() / "predictions.csv";
    require_artifact(path, "predict");
    const auto all = load_predictions_csv(path);
    const std::string split = cfg.get_string("eval.split", "val");
    if (split == "all") return all;
    std::map<std::string, std::string> split_of;
    for (const auto& r : manifest.rows) split_of[r.subject_id] = r.split;
    std::vector<Prediction> out;
    for (const auto& p : all)
        if (split_of.count(p.subject_id) && split_of.at(p.subject_id) == split) out.push_back(p);
    return out;
}

}  // namespace

void run_evaluate(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    const auto preds = split_predictions(cfg, manifest);
    if (preds.size() < 2) throw ConfigError("evaluate: need at least 2 predictions in the split");
    VecX yhat(static_cast<Eigen::Index>(preds.size())), age(static_cast<Eigen::Index>(preds.size()));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        yhat(static_cast<Eigen::Index>(i)) = preds[i].predicted_age;
        age(static_cast<Eigen::Index>(i)) = preds[i].age;
    }
    const MetricsReport metrics = compute_metrics(yhat, age);
    write_report(metrics, std::nullopt, preds, cfg.out_dir());
    write_provenance(cfg, "evaluate",
                     {{"metrics.json", cfg.out_dir() / "metrics.json"},
                      {"scatter.svg", cfg.out_dir() / "scatter.svg"},
                      {"bag_histogram.svg", cfg.out_dir() / "bag_histogram.svg"}});
}

void run_bag_analyze(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    const auto preds = split_predictions(cfg, manifest);
    if (preds.size() < 2) throw ConfigError("bag-analyze: need at least 2 predictions in the split");
    std::map<std::string, int> cohort_of;
    for (const auto& r : manifest.rows) cohort_of[r.subject_id] = r.cohort;
    std::vector<int> cohorts;
    cohorts.reserve(preds.size());
    for (const auto& p : preds) cohorts.push_back(cohort_of.at(p.subject_id));

    const BagCohort cohort = bag_cohort(preds, cohorts, cfg.get_double("eval.threshold_sd", 1.0));
    if (cohort.degenerate)
        std::cerr << "bag-analyze: warning: zero-variance BAG distribution, no extremes assigned\n";
    write_bag_records_csv(cfg.out_dir() / "bag_records.csv", cohort);

    std::map<std::string, fs::path> artifacts{{"bag_records.csv", cfg.out_dir() / "bag_records.csv"}};
    const std::pair<Referent, const char*> variants[] = {{Referent::rest, "pos_vs_rest"},
                                                         {Referent::neg, "pos_vs_neg"}};
    for (const auto& [ref, name] : variants) {
        const ContingencyTable table = bag_contingency(cohort, ref);
        if (table.total() < 1) {
            std::cerr << "bag-analyze: warning: empty contingency table for " << name << ", skipped\n";
            continue;
        }
        const fs::path path = cfg.out_dir() / ("association_" + std::string(name) + ".json");
        write_association_json(path, association(table));
        artifacts[path.filename().string()] = path;
    }
    write_provenance(cfg, "bag-analyze", artifacts);
}

void run_simcheck(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    const std::string split = cfg.get_string("eval.split", "val");
    const auto features = load_features_checked(cfg, manifest, split == "all" ? "" : split);
    if (features.empty()) throw ConfigError("simcheck: no features in split " + split);
    std::vector<MatX> zs;
    zs.reserve(features.size());
    for (const auto& f : features) zs.push_back(f.Z);
    const SimilarityMatrix sim = cosine_similarity_matrix(zs);
    if (sim.zero_rows > 0)
        std::cerr << "simcheck: warning: " << sim.zero_rows << " zero-norm embedding rows\n";
    write_similarity_csv(cfg.out_dir() / "similarity.csv", sim.m);
    write_provenance(cfg, "simcheck", {{"similarity.csv", cfg.out_dir() / "similarity.csv"}});
}

void run_interpret(const RunConfig& cfg) {
    const CohortManifest manifest = load_manifest_checked(cfg);
    require_artifact(cfg.out_dir() / "vit.brvt", "pretrain");
    require_artifact(cfg.out_dir() / "regressor.brvt", "train");
    const ViTParams vit = load_vit(cfg.out_dir() / "vit.brvt");
    const RegressorParams reg = load_regressor(cfg.out_dir() / "regressor.brvt");
    const RegressorConfig rcfg = cfg.regressor();

    const std::string split = cfg.get_string("interpret.split", "val");
    const int cap = cfg.get_int("interpret.max_subjects", 0);
    std::vector<SubjectAttention> subjects;
    std::vector<double> ages;
    for (const auto& row : manifest.rows) {
        if (split != "all" && row.split != split) continue;
        if (cap > 0 && static_cast<int>(subjects.size()) >= cap) break;
        const Volume vol = load_volume(cfg.out_dir() / row.path);
        subjects.push_back(subject_attention(vol, vit, reg, rcfg));
        ages.push_back(row.age);
    }
    if (subjects.empty()) throw ConfigError("interpret: no subjects in split " + split);

    const AttentionVolume agg = aggregate_attention(subjects);
    save_volume(attention_as_volume(agg), cfg.out_dir() / "attention.brv");
    write_montage_svg(cfg.out_dir() / "attention_montage.svg", agg);
    std::map<std::string, fs::path> artifacts{
        {"attention.brv", cfg.out_dir() / "attention.brv"},
        {"attention_montage.svg", cfg.out_dir() / "attention_montage.svg"}};

    std::vector<double> edges = cfg.interpret_bands();
    if (edges.empty()) edges = default_band_edges(manifest, split == "all" ? "" : split);
    if (edges.size() >= 2) {
        for (const auto& band : age_band_attention(subjects, ages, edges)) {
            if (band.n_subjects == 0) {
                std::cerr << "interpret: warning: empty age band " << band.lo << "-" << band.hi
                          << ", skipped\n";
                continue;
            }
            char name[96];
            std::snprintf(name, sizeof(name), "attention_band_%g-%g.brv", band.lo, band.hi);
            save_volume(attention_as_volume(band.volume), cfg.out_dir() / name);
            artifacts[name] = cfg.out_dir() / name;
        }
    }

    const std::string atlas_vol = cfg.get_string("interpret.atlas_volume", "");
    const std::string atlas_csv = cfg.get_string("interpret.atlas_csv", "");
    if (!atlas_vol.empty() && !atlas_csv.empty()) {
        const AtlasVolume atlas = load_atlas(atlas_vol, atlas_csv);
        bool resampled = false;
        const auto scores = roi_scores(agg, atlas, &resampled);
        if (resampled) std::cerr << "interpret: attention volume resampled to the atlas grid\n";
        write_roi_csv(cfg.out_dir() / "roi_scores.csv", scores);
        artifacts["roi_scores.csv"] = cfg.out_dir() / "roi_scores.csv";
    }
    write_provenance(cfg, "interpret", artifacts);
}

void run_pipeline(const RunConfig& cfg) {
    run_synth(cfg);
    run_pretrain(cfg);
    run_extract(cfg);
    run_train(cfg);
    run_predict(cfg);
    run_evaluate(cfg);
    run_bag_analyze(cfg);
    run_simcheck(cfg);
    run_interpret(cfg);
    write_provenance(cfg, "pipeline", {{"predictions.csv", cfg.out_dir() / "predictions.csv"}});
}

int run_subcommand(const std::string& name, const RunConfig& cfg) {
    try {
        if (name == "synth") {
            run_synth(cfg);
        } else if (name == "pretrain") {
            run_pretrain(cfg);
        } else if (name == "extract") {
            run_extract(cfg);
        } else if (name == "train") {
            run_train(cfg);
        } else if (name == "predict") {
            run_predict(cfg);
        } else if (name == "evaluate") {
            run_evaluate(cfg);
        } else if (name == "bag-analyze") {
            run_bag_analyze(cfg);
        } else if (name == "simcheck") {
            run_simcheck(cfg);
        } else if (name == "interpret") {
            run_interpret(cfg);
        } else if (name == "pipeline") {
            run_pipeline(cfg);
        } else {
            std::cerr << "unknown subcommand: " << name << "\n";
            return kExitConfig;
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const DivergenceError& e) {
        std::cerr << "numerical divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

}  // namespace brainrot
