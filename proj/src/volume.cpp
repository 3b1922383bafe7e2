#include "brainrot/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "brainrot/errors.hpp"
#include "brainrot/rng.hpp"

namespace brainrot {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMaxVoxels = 1ull << 32;

void put_u32le(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f32le(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(os, bits);
}

std::uint32_t get_u32le(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("volume file: truncated ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32le(std::istream& is, const char* what) {
    std::uint32_t bits = get_u32le(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void Volume::validate() const {
    if (S < 1 || H < 1 || W < 1) throw std::invalid_argument("Volume: dimensions must be >= 1");
    if (static_cast<int>(voxels.size()) != S) throw std::invalid_argument("Volume: slice count mismatch");
    for (const auto& m : voxels) {
        if (m.rows() != H || m.cols() != W) throw std::invalid_argument("Volume: slice shape mismatch");
        if (!m.allFinite()) throw std::invalid_argument("Volume: non-finite voxel");
    }
    if (!(age >= 0)) throw std::invalid_argument("Volume: age must be non-negative");
    if (sex != 0 && sex != 1) throw std::invalid_argument("Volume: sex must be 0 or 1");
    if (cohort_label != 0 && cohort_label != 1) throw std::invalid_argument("Volume: cohort_label must be 0 or 1");
}

void SynthConfig::validate() const {
    if (count < 1) throw std::invalid_argument("SynthConfig: count must be >= 1");
    if (S < 1 || H < 1 || W < 1) throw std::invalid_argument("SynthConfig: dims must be >= 1");
    if (!(age_min < age_max)) throw std::invalid_argument("SynthConfig: age_min must be < age_max");
    if (age_min < 0) throw std::invalid_argument("SynthConfig: age range must be non-negative");
    if (case_fraction < 0 || case_fraction > 1) throw std::invalid_argument("SynthConfig: case_fraction in [0,1]");
    if (case_atrophy_boost < 0) throw std::invalid_argument("SynthConfig: case_atrophy_boost must be >= 0");
    if (noise_sigma < 0) throw std::invalid_argument("SynthConfig: noise_sigma must be >= 0");
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
        throw std::invalid_argument("SynthConfig: split fractions invalid");
}

double synth_shell_value(double u, double v, double w, double effective_age) {
    const double t = std::clamp(effective_age / 100.0, 0.0, 1.0);
    const double r_out = 0.85 - 0.35 * t;
    const double r_in = 0.08 + 0.30 * t;
    const double r = std::sqrt(u * u + v * v + w * w);
    return sigmoid((r_out - r) / 0.04) * sigmoid((r - r_in) / 0.04);
}

double synth_effective_age(const SynthConfig& cfg, double age, int sex, int cohort) {
    return age + cfg.sex_age_offset * (sex ? 1.0 : -1.0) + cfg.case_atrophy_boost * cohort;
}

namespace {

// Symmetric normalized coordinate of index i on an axis of length n;
// exact negation under i -> n-1-i.
double axis_coord(int i, int n) {
    if (n == 1) return 0.0;
    return static_cast<double>(2 * i - (n - 1)) / static_cast<double>(n - 1);
}

}  // namespace

Volume generate_subject(const SynthConfig& cfg, int index) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    Volume vol;
    {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "S%05d", index);
        vol.subject_id = buf;
    }
    vol.S = cfg.S;
    vol.H = cfg.H;
    vol.W = cfg.W;
    vol.age = cfg.age_min + (cfg.age_max - cfg.age_min) * rng.uniform();
    vol.sex = rng.bernoulli(0.5) ? 1 : 0;
    vol.cohort_label = rng.bernoulli(cfg.case_fraction) ? 1 : 0;

    const double eff_age = synth_effective_age(cfg, vol.age, vol.sex, vol.cohort_label);
    const double asym = cfg.sex_asymmetry * (vol.sex ? 1.0 : -1.0);

    vol.voxels.assign(static_cast<std::size_t>(cfg.S), MatF(cfg.H, cfg.W));
    for (int s = 0; s < cfg.S; ++s) {
        const double u = axis_coord(s, cfg.S);
        MatF& slice = vol.voxels[static_cast<std::size_t>(s)];
        for (int y = 0; y < cfg.H; ++y) {
            const double v = axis_coord(y, cfg.H);
            for (int x = 0; x < cfg.W; ++x) {
                const double w = axis_coord(x, cfg.W);
                double value = synth_shell_value(u, v, w, eff_age) * std::max(0.0, 1.0 + asym * u);
                if (cfg.noise_sigma > 0) value += cfg.noise_sigma * rng.normal();
                slice(y, x) = static_cast<float>(value);
            }
        }
    }
    return vol;
}

std::string split_for_index(const SynthConfig& cfg, int index) {
    const int n_train = static_cast<int>(std::llround(cfg.train_frac * cfg.count));
    const int n_val = std::min(cfg.count - n_train, static_cast<int>(std::llround(cfg.val_frac * cfg.count)));
    if (index < n_train) return "train";
    if (index < n_train + n_val) return "val";
    return "test";
}

std::vector<ManifestRow> CohortManifest::split(const std::string& name) const {
    std::vector<ManifestRow> out;
    for (const auto& r : rows)
        if (r.split == name) out.push_back(r);
    return out;
}

void CohortManifest::validate(const fs::path& root) const {
    std::set<std::string> ids;
    for (const auto& r : rows) {
        if (!ids.insert(r.subject_id).second)
            throw FormatError("manifest: duplicate subject_id " + r.subject_id);
        if (r.split != "train" && r.split != "val" && r.split != "test")
            throw FormatError("manifest: bad split '" + r.split + "' for " + r.subject_id);
        if (!r.path.empty()) {
            const fs::path p = root.empty() ? fs::path(r.path) : root / r.path;
            if (!fs::exists(p)) throw FormatError("manifest: unresolvable path " + p.string());
        }
    }
}

void save_manifest(const fs::path& path, const CohortManifest& manifest) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("manifest: cannot open for writing: " + path.string());
    f << "subject_id,path,age,sex,cohort,split\n";
    char buf[64];
    for (const auto& r : manifest.rows) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.age);
        f << r.subject_id << ',' << r.path << ',' << buf << ',' << r.sex << ',' << r.cohort << ',' << r.split
          << '\n';
    }
    if (!f) throw FormatError("manifest: write failed: " + path.string());
}

CohortManifest load_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError("manifest not found: " + path.string());
    CohortManifest m;
    std::string line;
    if (!std::getline(f, line)) throw FormatError("manifest: empty file " + path.string());
    if (line != "subject_id,path,age,sex,cohort,split")
        throw FormatError("manifest: unexpected header in " + path.string());
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        ManifestRow r;
        std::string age_s, sex_s, cohort_s;
        if (!std::getline(ss, r.subject_id, ',') || !std::getline(ss, r.path, ',') ||
            !std::getline(ss, age_s, ',') || !std::getline(ss, sex_s, ',') ||
            !std::getline(ss, cohort_s, ',') || !std::getline(ss, r.split))
            throw FormatError("manifest: malformed row: " + line);
        r.age = std::stod(age_s);
        r.sex = std::stoi(sex_s);
        r.cohort = std::stoi(cohort_s);
        m.rows.push_back(std::move(r));
    }
    return m;
}

CohortManifest generate_synthetic_cohort(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const fs::path vol_dir = out_dir / "volumes";
    std::error_code ec;
    fs::create_directories(vol_dir, ec);
    if (ec || !fs::is_directory(vol_dir))
        throw FormatError("synth: cannot create output directory " + vol_dir.string());

    CohortManifest manifest;
    for (int i = 0; i < cfg.count; ++i) {
        Volume vol = generate_subject(cfg, i);
        const std::string rel = "volumes/" + vol.subject_id + ".brv";
        save_volume(vol, out_dir / rel);
        ManifestRow row;
        row.subject_id = vol.subject_id;
        row.path = rel;
        row.age = vol.age;
        row.sex = vol.sex;
        row.cohort = vol.cohort_label;
        row.split = split_for_index(cfg, i);
        manifest.rows.push_back(std::move(row));
    }
    save_manifest(out_dir / "manifest.csv", manifest);
    return manifest;
}

void save_volume(const Volume& volume, const fs::path& path) {
    volume.validate();
    if (volume.subject_id.size() > 0xffff) throw FormatError("volume file: subject_id too long");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("volume file: cannot open for writing: " + path.string());
    f.write("BRVV", 4);
    put_u32le(f, 1u);
    put_u32le(f, static_cast<std::uint32_t>(volume.S));
    put_u32le(f, static_cast<std::uint32_t>(volume.H));
    put_u32le(f, static_cast<std::uint32_t>(volume.W));
    put_f32le(f, static_cast<float>(volume.age));
    f.put(static_cast<char>(volume.sex));
    f.put(static_cast<char>(volume.cohort_label));
    const std::uint16_t len = static_cast<std::uint16_t>(volume.subject_id.size());
    f.put(static_cast<char>(len & 0xff));
    f.put(static_cast<char>(len >> 8));
    f.write(volume.subject_id.data(), len);
    for (const auto& slice : volume.voxels)
        for (int y = 0; y < volume.H; ++y)
            for (int x = 0; x < volume.W; ++x) put_f32le(f, slice(y, x));
    if (!f) throw FormatError("volume file: write failed: " + path.string());
}

Volume load_volume(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("volume file not found: " + path.string());
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "BRVV", 4) != 0)
        throw FormatError("volume file: bad magic in " + path.string());
    if (get_u32le(f, "version") != 1u) throw FormatError("volume file: unsupported version in " + path.string());
    Volume vol;
    vol.S = static_cast<int>(get_u32le(f, "S"));
    vol.H = static_cast<int>(get_u32le(f, "H"));
    vol.W = static_cast<int>(get_u32le(f, "W"));
    if (vol.S < 1 || vol.H < 1 || vol.W < 1 ||
        static_cast<std::uint64_t>(vol.S) * vol.H * vol.W > kMaxVoxels)
        throw FormatError("volume file: dimension overflow in " + path.string());
    vol.age = get_f32le(f, "age");
    int sex = f.get(), cohort = f.get();
    if (sex == EOF || cohort == EOF) throw FormatError("volume file: truncated header in " + path.string());
    vol.sex = sex;
    vol.cohort_label = cohort;
    int lo = f.get(), hi = f.get();
    if (lo == EOF || hi == EOF) throw FormatError("volume file: truncated header in " + path.string());
    const std::size_t id_len = static_cast<std::size_t>(lo) | (static_cast<std::size_t>(hi) << 8);
    vol.subject_id.resize(id_len);
    if (id_len && !f.read(vol.subject_id.data(), static_cast<std::streamsize>(id_len)))
        throw FormatError("volume file: truncated subject_id in " + path.string());
    vol.voxels.assign(static_cast<std::size_t>(vol.S), MatF(vol.H, vol.W));
    for (auto& slice : vol.voxels)
        for (int y = 0; y < vol.H; ++y)
            for (int x = 0; x < vol.W; ++x) slice(y, x) = get_f32le(f, "voxels");
    vol.validate();
    return vol;
}

SliceStack extract_slices(const Volume& volume) {
    volume.validate();
    SliceStack stack;
    stack.subject_id = volume.subject_id;
    stack.slices.reserve(static_cast<std::size_t>(volume.S));
    const double n = static_cast<double>(volume.H) * volume.W;
    for (const auto& raw : volume.voxels) {
        MatX slice = raw.cast<Scalar>();
        const double mean = slice.sum() / n;
        slice.array() -= mean;
        const double var = slice.array().square().sum() / n;  // population variance
        if (var > 0) {
            slice /= std::sqrt(var);
        } else {
            slice.setZero();
        }
        stack.slices.push_back(std::move(slice));
    }
    return stack;
}

std::vector<int> even_indices(int S, int n) {
    if (n < 1 || n > S) throw std::invalid_argument("even_indices: n out of range");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k)
        idx[static_cast<std::size_t>(k)] = static_cast<int>((static_cast<long long>(k) * S) / n);
    return idx;
}

EvenSample sample_even_slices(const SliceStack& stack, int n) {
    EvenSample out;
    out.indices = even_indices(static_cast<int>(stack.slices.size()), n);
    out.slices.reserve(out.indices.size());
    for (int i : out.indices) out.slices.push_back(stack.slices[static_cast<std::size_t>(i)]);
    return out;
}

double voxel_mass(const Volume& volume) {
    double total = 0;
    for (const auto& slice : volume.voxels) total += static_cast<double>(slice.sum());
    return total;
}

}  // namespace brainrot
