#pragma once
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "brainrot/linalg.hpp"

namespace brainrot {

// ---------------------------------------------------------------------------
// Volume: a sagittal-slice-major 3D scalar field with subject metadata.
// Voxel (s, y, x) lives at slice s, row y, column x.
// ---------------------------------------------------------------------------

struct Volume {
    std::string subject_id;
    int S = 0, H = 0, W = 0;
    std::vector<MatF> voxels;  // S matrices of shape H x W
    double age = 0;            // years, >= 0
    int sex = 0;               // 0 = male, 1 = female
    int cohort_label = 0;      // 0 = control, 1 = case

    void validate() const;
};

struct SliceStack {
    std::string subject_id;
    std::vector<MatX> slices;  // per-slice z-scored, sagittal order
};

// ---------------------------------------------------------------------------
// Synthetic cohort generation.
//
// Each voxel is evaluated on normalized coordinates u,v,w in [-1,1]
// (u along the sagittal axis) as a soft spherical shell:
//
//   t      = clamp(effective_age / 100, 0, 1)
//   r_out  = 0.85 - 0.35 t          (outer boundary shrinks with age)
//   r_in   = 0.08 + 0.30 t          (central cavity grows with age)
//   shell  = sigmoid((r_out - r)/0.04) * sigmoid((r - r_in)/0.04)
//   value  = shell * max(0, 1 + asym * u) + gaussian_noise
//
// where r = sqrt(u^2+v^2+w^2), asym = sex_asymmetry * (sex ? +1 : -1), and
// effective_age = age + sex_age_offset * (sex ? +1 : -1)
//                 + case_atrophy_boost * cohort_label.
// Shell mass is strictly decreasing in effective age and the field is
// mirror-symmetric in u whenever sex_asymmetry is zero.
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::uint64_t seed = 1;
    int count = 1;
    int S = 160, H = 224, W = 224;
    double age_min = 20.0, age_max = 80.0;
    double case_fraction = 0.0;
    double case_atrophy_boost = 0.0;
    double noise_sigma = 0.0;
    double sex_asymmetry = 0.1;
    double sex_age_offset = 0.0;  // shifts the shape-driving age by sex
    double train_frac = 0.8;
    double val_frac = 0.1;

    void validate() const;
};

// The closed-form shape model (no noise), exposed so it can be evaluated
// independently of volume generation.
[[nodiscard]] double synth_shell_value(double u, double v, double w, double effective_age);
[[nodiscard]] double synth_effective_age(const SynthConfig& cfg, double age, int sex, int cohort);

// Deterministic per-index subject; does not touch the filesystem.
[[nodiscard]] Volume generate_subject(const SynthConfig& cfg, int index);
[[nodiscard]] std::string split_for_index(const SynthConfig& cfg, int index);

// ---------------------------------------------------------------------------
// Cohort manifest: CSV `subject_id,path,age,sex,cohort,split`.
// ---------------------------------------------------------------------------

struct ManifestRow {
    std::string subject_id;
    std::string path;
    double age = 0;
    int sex = 0;
    int cohort = 0;
    std::string split;  // train / val / test
};

struct CohortManifest {
    std::vector<ManifestRow> rows;

    [[nodiscard]] std::vector<ManifestRow> split(const std::string& name) const;
    void validate(const std::filesystem::path& root = {}) const;
};

void save_manifest(const std::filesystem::path& path, const CohortManifest& manifest);
[[nodiscard]] CohortManifest load_manifest(const std::filesystem::path& path);

// Writes volumes under out_dir/volumes and the manifest to out_dir/manifest.csv.
CohortManifest generate_synthetic_cohort(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// .brv persistence: magic "BRVV", u32 version=1, u32 S,H,W, f32 age, u8 sex,
// u8 cohort_label, u16 id length, UTF-8 subject id, then S*H*W f32 LE voxels,
// slice-major. load(save(v)) is bit-exact.
// ---------------------------------------------------------------------------

void save_volume(const Volume& volume, const std::filesystem::path& path);
[[nodiscard]] Volume load_volume(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Slicing
// ---------------------------------------------------------------------------

// Per-slice z-score; an all-constant slice maps to all zeros.
[[nodiscard]] SliceStack extract_slices(const Volume& volume);

struct EvenSample {
    std::vector<int> indices;
    std::vector<MatX> slices;
};

// indices[k] = floor(k * S / n), k = 0..n-1.
[[nodiscard]] EvenSample sample_even_slices(const SliceStack& stack, int n);
[[nodiscard]] std::vector<int> even_indices(int S, int n);

// Sum of all voxels; the "foreground mass" used by generator checks.
[[nodiscard]] double voxel_mass(const Volume& volume);

}  // namespace brainrot
