#pragma once
#include <cstdint>
#include <filesystem>
#include <string>

#include "brainrot/config.hpp"

namespace brainrot {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitMissingArtifact = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitDivergence = 4;

void run_synth(const RunConfig& cfg);
void run_pretrain(const RunConfig& cfg);
void run_extract(const RunConfig& cfg);
void run_train(const RunConfig& cfg);
void run_predict(const RunConfig& cfg);
void run_evaluate(const RunConfig& cfg);
void run_bag_analyze(const RunConfig& cfg);
void run_simcheck(const RunConfig& cfg);
void run_interpret(const RunConfig& cfg);
void run_pipeline(const RunConfig& cfg);

// Dispatches, converts errors to categorized exit codes, prints diagnostics.
[[nodiscard]] int run_subcommand(const std::string& name, const RunConfig& cfg);

[[nodiscard]] std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace brainrot
