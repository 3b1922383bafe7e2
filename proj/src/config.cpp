#include "brainrot/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "brainrot/errors.hpp"
#include "brainrot/rng.hpp"

namespace brainrot {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: missing '=' on line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(lineno));
        cfg.values_[key] = value;
    }
    return cfg;
}

void RunConfig::apply_override(const std::string& arg) {
    std::string body = arg;
    if (body.rfind("--", 0) == 0) body = body.substr(2);
    const auto eq = body.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("config override must look like --section.key=value: " + arg);
    values_[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " is not a number: " + it->second);
    }
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " is not an integer: " + it->second);
    }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "on") return true;
    if (it->second == "false" || it->second == "0" || it->second == "off") return false;
    throw ConfigError("config: " + key + " is not a boolean: " + it->second);
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " is not an unsigned integer: " + it->second);
    }
}

std::string RunConfig::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
    return out.str();
}

SynthConfig RunConfig::synth() const {
    SynthConfig c;
    c.seed = mix_seed(seed(), 101);
    c.count = get_int("synth.count", c.count);
    c.S = get_int("synth.s", c.S);
    c.H = get_int("synth.h", c.H);
    c.W = get_int("synth.w", c.W);
    c.age_min = get_double("synth.age_min", c.age_min);
    c.age_max = get_double("synth.age_max", c.age_max);
    c.case_fraction = get_double("synth.case_fraction", c.case_fraction);
    c.case_atrophy_boost = get_double("synth.case_atrophy_boost", c.case_atrophy_boost);
    c.noise_sigma = get_double("synth.noise_sigma", c.noise_sigma);
    c.sex_asymmetry = get_double("synth.sex_asymmetry", c.sex_asymmetry);
    c.sex_age_offset = get_double("synth.sex_age_offset", c.sex_age_offset);
    c.train_frac = get_double("synth.train_frac", c.train_frac);
    c.val_frac = get_double("synth.val_frac", c.val_frac);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

ViTConfig RunConfig::vit() const {
    ViTConfig c;
    c.seed = mix_seed(seed(), 102);
    c.patch = get_int("vit.patch", c.patch);
    c.embed_dim = get_int("vit.embed_dim", c.embed_dim);
    c.depth = get_int("vit.depth", c.depth);
    c.heads = get_int("vit.heads", c.heads);
    c.mlp_ratio = get_double("vit.mlp_ratio", c.mlp_ratio);
    c.bin_width = get_int("vit.bin_width", c.bin_width);
    c.slices_per_volume = get_int("vit.slices", c.slices_per_volume);
    c.lr = get_double("vit.lr", c.lr);
    c.epochs = get_int("vit.epochs", c.epochs);
    c.batch_size = get_int("vit.batch_size", c.batch_size);
    c.image_h = get_int("synth.h", c.image_h);
    c.image_w = get_int("synth.w", c.image_w);
    return c;
}

RegressorConfig RunConfig::regressor() const {
    RegressorConfig c;
    c.seed = mix_seed(seed(), 103);
    if (has("reg.conv_blocks")) c.conv_blocks = parse_conv_blocks(get_string("reg.conv_blocks", ""));
    try {
        c.activation = parse_activation(get_string("reg.activation", to_string(c.activation)));
        c.loss = parse_loss(get_string("reg.loss", to_string(c.loss)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    c.fc1_dim = get_int("reg.fc1", c.fc1_dim);
    c.fc2_dim = get_int("reg.fc2", c.fc2_dim);
    c.dropout = get_double("reg.dropout", c.dropout);
    c.sex_fusion = get_bool("reg.sex_fusion", c.sex_fusion);
    c.residual = get_bool("reg.residual", c.residual);
    c.lr = get_double("reg.lr", c.lr);
    c.max_epochs = get_int("reg.max_epochs", c.max_epochs);
    c.patience = get_int("reg.patience", c.patience);
    c.batch_size = get_int("reg.batch_size", c.batch_size);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return c;
}

std::vector<double> RunConfig::interpret_bands() const {
    const std::string text = get_string("interpret.bands", "");
    std::vector<double> edges;
    if (text.empty()) return edges;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            edges.push_back(std::stod(trim(item)));
        } catch (const std::exception&) {
            throw ConfigError("config: interpret.bands must be comma-separated numbers");
        }
    }
    return edges;
}

std::vector<ConvBlockSpec> parse_conv_blocks(const std::string& text) {
    std::vector<ConvBlockSpec> specs;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        ConvBlockSpec spec;
        if (std::sscanf(item.c_str(), "%d:%dx%d", &spec.out_channels, &spec.kh, &spec.kw) != 3)
            throw ConfigError("config: conv block must look like channels:KHxKW, got " + item);
        specs.push_back(spec);
    }
    if (specs.empty()) throw ConfigError("config: reg.conv_blocks is empty");
    return specs;
}

}  // namespace brainrot
