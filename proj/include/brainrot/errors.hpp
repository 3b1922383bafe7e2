#pragma once
#include <stdexcept>
#include <string>

namespace brainrot {

// File-format problems: bad magic, version, truncation, dimension overflow.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A subcommand prerequisite (manifest, features, parameters) is absent.
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, int epoch)
        : std::runtime_error(what), epoch(epoch) {}
    int epoch;
};

}  // namespace brainrot
