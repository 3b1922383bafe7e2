#pragma once
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "brainrot/regressor.hpp"
#include "brainrot/vit.hpp"
#include "brainrot/volume.hpp"

namespace brainrot {

// Flat `section.key = value` configuration. Flag overrides take precedence
// over file values; the serialized form is sorted for diffable provenance.
class RunConfig {
public:
    RunConfig() = default;

    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    // Accepts "--section.key=value" (or "section.key=value").
    void apply_override(const std::string& arg);

    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) > 0; }
    [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const;
    [[nodiscard]] double get_double(const std::string& key, double fallback) const;
    [[nodiscard]] int get_int(const std::string& key, int fallback) const;
    [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const;
    [[nodiscard]] std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    [[nodiscard]] std::string serialize() const;

    // Global seed; per-stage streams are derived from it.
    [[nodiscard]] std::uint64_t seed() const { return get_u64("seed", 1); }
    [[nodiscard]] std::filesystem::path out_dir() const {
        return std::filesystem::path(get_string("io.out", "out"));
    }

    [[nodiscard]] SynthConfig synth() const;
    [[nodiscard]] ViTConfig vit() const;
    [[nodiscard]] RegressorConfig regressor() const;
    [[nodiscard]] std::vector<double> interpret_bands() const;

private:
    std::map<std::string, std::string> values_;
};

// "8:10x60,4:5x15,1:2x6" -> conv block specs
[[nodiscard]] std::vector<ConvBlockSpec> parse_conv_blocks(const std::string& text);

}  // namespace brainrot
