#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <limits>

#include "brainrot/config.hpp"
#include "brainrot/errors.hpp"
#include "brainrot/pipeline.hpp"
#include "brainrot/report.hpp"
#include "support.hpp"

using namespace brainrot;
namespace fs = std::filesystem;
using testsupport::file_contents_equal;
using testsupport::read_bytes;

namespace {

RunConfig toy_run_config(const fs::path& out) {
    RunConfig cfg = RunConfig::from_string(R"(
seed = 7
synth.count = 24
synth.s = 8
synth.h = 16
synth.w = 16
synth.age_min = 20
synth.age_max = 80
synth.case_fraction = 0.5
synth.case_atrophy_boost = 8
synth.noise_sigma = 0.05
synth.sex_asymmetry = 0.3
synth.train_frac = 0.667
synth.val_frac = 0.25

vit.patch = 4
vit.embed_dim = 16
vit.depth = 1
vit.heads = 2
vit.mlp_ratio = 2.0
vit.bin_width = 20
vit.slices = 4
vit.epochs = 2
vit.lr = 0.001
vit.batch_size = 8

reg.conv_blocks = 2:2x3,1:2x2
reg.fc1 = 8
reg.fc2 = 6
reg.dropout = 0.1
reg.lr = 0.001
reg.max_epochs = 8
reg.patience = 8
reg.batch_size = 8

interpret.max_subjects = 3
)");
    cfg.set("io.out", out.string());
    return cfg;
}

int run_cli(const std::string& args, const fs::path& stderr_to = {}) {
    std::string cmd = std::string(BRAINROT_CLI_PATH) + " " + args + " >/dev/null";
    cmd += stderr_to.empty() ? " 2>/dev/null" : " 2>" + stderr_to.string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing, overrides, and serialization") {
    RunConfig cfg = RunConfig::from_string("a.b = 3\n# comment\nc.d = hello  # trailing\n");
    CHECK(cfg.get_int("a.b", 0) == 3);
    CHECK(cfg.get_string("c.d", "") == "hello");
    CHECK(cfg.get_double("missing", 2.5) == 2.5);

    cfg.apply_override("--a.b=9");
    CHECK(cfg.get_int("a.b", 0) == 9);  // flags beat file values
    cfg.apply_override("e.f=0.25");
    CHECK(cfg.get_double("e.f", 0) == 0.25);

    const std::string s = cfg.serialize();
    CHECK(s.find("a.b = 9") != std::string::npos);
    CHECK(RunConfig::from_string(s).get_int("a.b", 0) == 9);

    CHECK_THROWS_AS(cfg.apply_override("--nonsense"), ConfigError);
    CHECK_THROWS_AS((void)RunConfig::from_string("novalue\n"), ConfigError);
    CHECK_THROWS_AS((void)cfg.get_int("c.d", 0), ConfigError);

    CHECK_THROWS_AS((void)RunConfig::from_string("synth.count = 0").synth(), ConfigError);
    const auto blocks = parse_conv_blocks("8:10x60,4:5x15,1:2x6");
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].out_channels == 8);
    CHECK(blocks[0].kh == 10);
    CHECK(blocks[0].kw == 60);
    CHECK(blocks[2].kw == 6);
    CHECK_THROWS_AS((void)parse_conv_blocks("oops"), ConfigError);
}

TEST_CASE("report writers: partial output, determinism, element counts") {
    const auto dir = testsupport::temp_dir("report");
    std::vector<Prediction> preds;
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        Prediction p;
        p.subject_id = "s" + std::to_string(i);
        p.age = 20 + 0.6 * i;
        p.sex = i % 2;
        p.predicted_age = p.age + 2 * rng.normal();
        p.bag = p.predicted_age - p.age;
        preds.push_back(p);
    }
    VecX yhat(100), age(100);
    for (int i = 0; i < 100; ++i) {
        yhat(i) = preds[i].predicted_age;
        age(i) = preds[i].age;
    }
    const MetricsReport metrics = compute_metrics(yhat, age);

    write_report(metrics, std::nullopt, preds, dir);
    CHECK(fs::exists(dir / "metrics.json"));
    CHECK(!fs::exists(dir / "association.json"));  // omitted without input
    CHECK(fs::exists(dir / "scatter.svg"));
    CHECK(fs::exists(dir / "bag_histogram.svg"));

    const std::string svg = read_bytes(dir / "scatter.svg");
    std::size_t circles = 0, pos = 0;
    while ((pos = svg.find("<circle", pos)) != std::string::npos) {
        ++circles;
        pos += 7;
    }
    CHECK(circles == 100);

    const auto dir2 = testsupport::temp_dir("report2");
    write_report(metrics, association({8, 3, 4, 9}), preds, dir2);
    CHECK(fs::exists(dir2 / "association.json"));
    CHECK(file_contents_equal(dir / "metrics.json", dir2 / "metrics.json"));
    CHECK(file_contents_equal(dir / "scatter.svg", dir2 / "scatter.svg"));

    // predictions csv round-trip
    write_predictions_csv(dir / "p.csv", preds);
    const auto loaded = load_predictions_csv(dir / "p.csv");
    REQUIRE(loaded.size() == 100);
    CHECK(loaded[17].subject_id == "s17");
    CHECK(loaded[17].bag == doctest::Approx(preds[17].bag).epsilon(1e-6));
}

TEST_CASE("pipeline produces every artifact and is deterministic") {
    const auto dir = testsupport::temp_dir("pipe1");
    run_pipeline(toy_run_config(dir));
    for (const char* name :
         {"manifest.csv", "vit.brvt", "vit_train_log.jsonl", "features.brvt", "regressor.brvt",
          "train_report.json", "predictions.csv", "metrics.json", "scatter.svg", "bag_histogram.svg",
          "bag_records.csv", "similarity.csv", "attention.brv", "attention_montage.svg"}) {
        INFO(name);
        CHECK(fs::exists(dir / name));
    }
    CHECK(fs::exists(dir / "provenance" / "pipeline.json"));
    CHECK(fs::exists(dir / "provenance" / "train.json"));

    const std::string log = read_bytes(dir / "vit_train_log.jsonl");
    CHECK(log.find("\"epoch\":1") != std::string::npos);
    CHECK(log.find("\"loss\":") != std::string::npos);
    CHECK(log.find("\"accuracy\":") != std::string::npos);

    const auto dir2 = testsupport::temp_dir("pipe2");
    run_pipeline(toy_run_config(dir2));
    CHECK(file_contents_equal(dir / "predictions.csv", dir2 / "predictions.csv"));
    CHECK(file_contents_equal(dir / "vit.brvt", dir2 / "vit.brvt"));
    CHECK(file_contents_equal(dir / "regressor.brvt", dir2 / "regressor.brvt"));
    CHECK(file_contents_equal(dir / "features.brvt", dir2 / "features.brvt"));
    CHECK(file_contents_equal(dir / "similarity.csv", dir2 / "similarity.csv"));
}

TEST_CASE("stagewise runs compose to the pipeline bit-for-bit") {
    const auto ref = testsupport::temp_dir("pipe_ref");
    run_pipeline(toy_run_config(ref));

    const auto dir = testsupport::temp_dir("pipe_stages");
    const RunConfig cfg = toy_run_config(dir);
    run_synth(cfg);
    run_pretrain(cfg);
    run_extract(cfg);
    run_train(cfg);
    run_predict(cfg);
    run_evaluate(cfg);
    run_bag_analyze(cfg);
    run_simcheck(cfg);
    run_interpret(cfg);

    for (const char* name : {"manifest.csv", "vit.brvt", "features.brvt", "regressor.brvt",
                             "predictions.csv", "metrics.json", "similarity.csv", "attention.brv"}) {
        INFO(name);
        CHECK(file_contents_equal(ref / name, dir / name));
    }
}

TEST_CASE("interpret honors an atlas and emits roi scores") {
    const auto dir = testsupport::temp_dir("pipe_atlas");
    RunConfig cfg = toy_run_config(dir);

    // same-grid atlas with three named regions in two groups
    AtlasVolume atlas;
    atlas.S = 8;
    atlas.H = 16;
    atlas.W = 16;
    atlas.labels.assign(8, MatI::Zero(16, 16));
    for (int s = 0; s < 8; ++s)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                atlas.labels[s](y, x) = s < 2 ? 1 : (y < 8 ? 2 : 3);
    atlas.region_names = {{1, "front"}, {2, "upper"}, {3, "lower"}};
    atlas.region_groups = {{"front", "front"}, {"upper", "deep"}, {"lower", "deep"}};
    save_atlas(dir / "atlas.brva", dir / "atlas.csv", atlas);
    cfg.set("interpret.atlas_volume", (dir / "atlas.brva").string());
    cfg.set("interpret.atlas_csv", (dir / "atlas.csv").string());

    run_pipeline(cfg);
    REQUIRE(fs::exists(dir / "roi_scores.csv"));
    const std::string csv = read_bytes(dir / "roi_scores.csv");
    CHECK(csv.find("front") != std::string::npos);
    CHECK(csv.find("deep") != std::string::npos);

    // age-band volumes exist for the cohort range
    bool any_band = false;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().rfind("attention_band_", 0) == 0) any_band = true;
    CHECK(any_band);
}

TEST_CASE("cli exit codes follow the error taxonomy") {
    const auto dir = testsupport::temp_dir("cli");

    SUBCASE("missing prerequisite artifact exits 2 and names it") {
        const auto err = dir / "err.txt";
        CHECK(run_cli("train --out " + (dir / "empty").string(), err) == 2);
        const std::string msg = read_bytes(err);
        CHECK(msg.find("manifest.csv") != std::string::npos);

        // with a manifest but no features, the features path is named
        RunConfig cfg = toy_run_config(dir / "synth_only");
        run_synth(cfg);
        CHECK(run_cli("train --out " + (dir / "synth_only").string() +
                          " --reg.conv_blocks=2:2x3,1:2x2 --reg.fc1=8 --reg.fc2=6",
                      err) == 2);
        CHECK(read_bytes(err).find("features.brvt") != std::string::npos);
    }
    SUBCASE("config validation failures exit 3") {
        CHECK(run_cli("synth --out " + dir.string() + " --synth.count=0") == 3);
        CHECK(run_cli("synth --config /nonexistent.cfg") == 3);
        CHECK(run_cli("synth --out " + dir.string() + " --synth.count=nope") == 3);
    }
    SUBCASE("a tiny synth run exits 0") {
        CHECK(run_cli("synth --out " + (dir / "ok").string() +
                      " --synth.count=2 --synth.s=4 --synth.h=6 --synth.w=6") == 0);
        CHECK(fs::exists(dir / "ok" / "manifest.csv"));
    }
    SUBCASE("training divergence exits 4") {
        // manifest with pathless rows plus a feature archive containing an inf
        const fs::path out = dir / "diverge";
        fs::create_directories(out);
        CohortManifest m;
        m.rows.push_back({"A", "", 30.0, 0, 0, "train"});
        m.rows.push_back({"B", "", 40.0, 1, 0, "val"});
        save_manifest(out / "manifest.csv", m);
        MatX z = MatX::Constant(6, 8, 0.1);
        z(0, 0) = std::numeric_limits<float>::infinity();
        save_tensor_archive(out / "features.brvt",
                            {NamedTensor::matrix("A", z), NamedTensor::matrix("B", z)});
        CHECK(run_cli("train --out " + out.string() +
                      " --reg.conv_blocks=2:2x3,1:2x2 --reg.fc1=8 --reg.fc2=6") == 4);
    }
}

TEST_CASE("provenance records the merged effective config and checksums") {
    const auto dir = testsupport::temp_dir("prov");
    RunConfig cfg = toy_run_config(dir);
    cfg.apply_override("--synth.count=10");
    run_synth(cfg);
    const std::string prov = read_bytes(dir / "provenance" / "synth.json");
    CHECK(prov.find("synth.count = 10") != std::string::npos);  // flag beat the file value
    CHECK(prov.find("\"seed\": 7") != std::string::npos);
    CHECK(prov.find("manifest.csv") != std::string::npos);

    const std::uint64_t ck = file_checksum(dir / "manifest.csv");
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(ck));
    CHECK(prov.find(hex) != std::string::npos);
}
