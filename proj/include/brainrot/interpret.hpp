#pragma once
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "brainrot/linalg.hpp"
#include "brainrot/regressor.hpp"
#include "brainrot/vit.hpp"
#include "brainrot/volume.hpp"

namespace brainrot {

// ---------------------------------------------------------------------------
// Guided backpropagation
// ---------------------------------------------------------------------------

struct GuidedGradientMap {
    std::string subject_id;
    MatX g;  // S x d, min-max normalized to [0,1]
};

[[nodiscard]] GuidedGradientMap guided_backprop(const MatX& Z, int sex, const RegressorParams& p,
                                                const RegressorConfig& cfg);

// ---------------------------------------------------------------------------
// Patch projection and fusion
// ---------------------------------------------------------------------------

// s = P g for patch embeddings P (N_p x d) and slice gradient g (d).
[[nodiscard]] VecX patch_importance(const MatX& patch_embeddings, const VecX& g);

// Element-wise product of two [0,1] maps.
[[nodiscard]] VecX fuse_maps(const VecX& scores_norm, const VecX& alpha_norm);

struct SliceHeatmap {
    int slice_index = 0;
    MatX heat;  // H x W in [0,1]
};

// Bilinear upsampling of the patch grid followed by min-max normalization.
[[nodiscard]] MatX upsample_heatmap(const MatX& grid, int target_h, int target_w);

// ---------------------------------------------------------------------------
// Per-subject stacks and cross-subject aggregation
// ---------------------------------------------------------------------------

struct SubjectAttention {
    std::string subject_id;
    std::vector<MatX> heat;  // S slices, each H x W in [0,1]
};

[[nodiscard]] SubjectAttention subject_attention(const Volume& volume, const ViTParams& vit,
                                                 const RegressorParams& reg, const RegressorConfig& cfg);

struct AttentionVolume {
    int S = 0, H = 0, W = 0;
    std::vector<MatX> field;  // in [0,1]
    int n_subjects = 0;
};

[[nodiscard]] AttentionVolume aggregate_attention(const std::vector<SubjectAttention>& subjects);

// Persists in the volume format with zeroed metadata, subject_id "ATTENTION".
[[nodiscard]] Volume attention_as_volume(const AttentionVolume& av);
[[nodiscard]] AttentionVolume attention_from_volume(const Volume& v);

// ---------------------------------------------------------------------------
// Atlas and ROI scores
// ---------------------------------------------------------------------------

// Label volume (.brva: magic "BRVA", u32 version=1, u32 S,H,W, i32 LE labels,
// slice-major) plus a CSV `label,region,group`. Label 0 is background.
struct AtlasVolume {
    int S = 0, H = 0, W = 0;
    std::vector<MatI> labels;
    std::map<int, std::string> region_names;
    std::map<std::string, std::string> region_groups;

    void validate() const;
};

void save_atlas(const std::filesystem::path& volume_path, const std::filesystem::path& csv_path,
                const AtlasVolume& atlas);
[[nodiscard]] AtlasVolume load_atlas(const std::filesystem::path& volume_path,
                                     const std::filesystem::path& csv_path);

struct RoiScore {
    std::string group;
    double mean_intensity = 0;
    long voxel_count = 0;
};

// Region means merged into groups by voxel-count weighting, sorted by
// descending intensity. Nearest-neighbor resampling is applied on a grid
// mismatch and reported through `resampled`.
[[nodiscard]] std::vector<RoiScore> roi_scores(const AttentionVolume& attention,
                                               const AtlasVolume& atlas, bool* resampled = nullptr);

// ---------------------------------------------------------------------------
// Age-band aggregation (per-band reruns of aggregate_attention)
// ---------------------------------------------------------------------------

struct AgeBandAttention {
    double lo = 0, hi = 0;
    int n_subjects = 0;
    AttentionVolume volume;  // empty band -> n_subjects 0, field empty
};

[[nodiscard]] std::vector<AgeBandAttention> age_band_attention(
    const std::vector<SubjectAttention>& subjects, const std::vector<double>& ages,
    const std::vector<double>& band_edges);

// SVG montage of evenly spaced slices, block-averaged to coarse cells.
void write_montage_svg(const std::filesystem::path& path, const AttentionVolume& av,
                       int max_slices = 8);

}  // namespace brainrot
