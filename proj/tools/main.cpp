#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "brainrot/pipeline.hpp"

namespace {

const std::vector<std::pair<std::string, std::string>> kSubcommands = {
    {"synth", "Generate a synthetic cohort and manifest"},
    {"pretrain", "Train the slice encoder on age-sex composite classes"},
    {"extract", "Extract per-subject embedding feature maps with the frozen encoder"},
    {"train", "Train the residual CNN regressor on extracted features"},
    {"predict", "Predict brain age and BAG for every manifest subject"},
    {"evaluate", "Compute regression metrics and plots on a split"},
    {"bag-analyze", "Label extreme agers and compute cohort association statistics"},
    {"simcheck", "Write the averaged slice-embedding cosine-similarity matrix"},
    {"interpret", "Guided-backprop attention volumes, age bands, and ROI scores"},
    {"pipeline", "Run every stage in order"},
};

}  // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("BRAINROT_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) Eigen::setNbThreads(n);
    }

    CLI::App app{"brainrot: two-stage brain-age estimation on synthetic volumetric cohorts"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    long long seed = -1;
    for (const auto& [name, desc] : kSubcommands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "Configuration file (section.key = value lines)");
        sub->add_option("--out", out_dir, "Output directory (overrides io.out)");
        sub->add_option("--seed", seed, "Global seed (overrides the config seed)");
        sub->allow_extras();  // --section.key=value overrides
    }

    CLI11_PARSE(app, argc, argv);

    CLI::App* sub = app.get_subcommands().front();
    brainrot::RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = brainrot::RunConfig::from_file(config_path);
        for (const auto& extra : sub->remaining()) cfg.apply_override(extra);
        if (!out_dir.empty()) cfg.set("io.out", out_dir);
        if (seed >= 0) cfg.set("seed", std::to_string(seed));
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return brainrot::kExitConfig;
    }
    return brainrot::run_subcommand(sub->get_name(), cfg);
}
