#include "brainrot/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "brainrot/errors.hpp"

namespace brainrot {

namespace fs = std::filesystem;

GuidedGradientMap guided_backprop(const MatX& Z, int sex, const RegressorParams& p,
                                  const RegressorConfig& cfg) {
    GuidedGradientMap map;
    map.g = normalize01(input_gradient(Z, sex, p, cfg, GradientMode::guided));
    return map;
}

VecX patch_importance(const MatX& patch_embeddings, const VecX& g) {
    if (patch_embeddings.cols() != g.size())
        throw std::invalid_argument("patch_importance: width mismatch");
    return patch_embeddings * g;
}

VecX fuse_maps(const VecX& scores_norm, const VecX& alpha_norm) {
    if (scores_norm.size() != alpha_norm.size())
        throw std::invalid_argument("fuse_maps: length mismatch");
    return scores_norm.cwiseProduct(alpha_norm);
}

MatX upsample_heatmap(const MatX& grid, int target_h, int target_w) {
    return normalize01(bilinear_resize(grid, target_h, target_w));
}

SubjectAttention subject_attention(const Volume& volume, const ViTParams& vit,
                                   const RegressorParams& reg, const RegressorConfig& cfg) {
    const SliceStack stack = extract_slices(volume);
    const EmbeddingMatrix em = build_feature_map(stack, volume.age, volume.sex, vit);
    const GuidedGradientMap gmap = guided_backprop(em.Z, volume.sex, reg, cfg);

    const int grid_h = volume.H / vit.patch;
    const int grid_w = volume.W / vit.patch;
    SubjectAttention out;
    out.subject_id = volume.subject_id;
    out.heat.reserve(static_cast<std::size_t>(volume.S));
    for (int i = 0; i < volume.S; ++i) {
        const EncodeResult enc = encode_slice_full(stack.slices[static_cast<std::size_t>(i)], vit);
        VecX alpha = enc.cls_attention_heads.colwise().mean().transpose();
        alpha = alpha.tail(alpha.size() - 1);
        const VecX scores = patch_importance(enc.patch_tokens, gmap.g.row(i).transpose());
        const VecX scores_norm = normalize01(scores);
        const VecX alpha_norm = normalize01(alpha);
        const VecX fused = fuse_maps(scores_norm, alpha_norm);
        const MatX grid = Eigen::Map<const MatX>(fused.data(), grid_h, grid_w);
        out.heat.push_back(upsample_heatmap(grid, volume.H, volume.W));
    }
    return out;
}

AttentionVolume aggregate_attention(const std::vector<SubjectAttention>& subjects) {
    if (subjects.empty()) throw std::invalid_argument("aggregate_attention: empty subject set");
    const int S = static_cast<int>(subjects.front().heat.size());
    if (S == 0) throw std::invalid_argument("aggregate_attention: empty heatmap stack");
    const int H = static_cast<int>(subjects.front().heat.front().rows());
    const int W = static_cast<int>(subjects.front().heat.front().cols());

    AttentionVolume av;
    av.S = S;
    av.H = H;
    av.W = W;
    av.n_subjects = static_cast<int>(subjects.size());
    av.field.assign(static_cast<std::size_t>(S), MatX::Zero(H, W));
    for (const auto& subject : subjects) {
        if (static_cast<int>(subject.heat.size()) != S)
            throw std::invalid_argument("aggregate_attention: inconsistent stack shapes");
        for (int i = 0; i < S; ++i) {
            const MatX& h = subject.heat[static_cast<std::size_t>(i)];
            if (h.rows() != H || h.cols() != W)
                throw std::invalid_argument("aggregate_attention: inconsistent stack shapes");
            av.field[static_cast<std::size_t>(i)] += h;
        }
    }
    for (auto& f : av.field) f /= static_cast<Scalar>(av.n_subjects);

    // finalize once: whole-volume min-max normalization
    Scalar lo = av.field.front().minCoeff(), hi = av.field.front().maxCoeff();
    for (const auto& f : av.field) {
        lo = std::min(lo, f.minCoeff());
        hi = std::max(hi, f.maxCoeff());
    }
    for (auto& f : av.field) {
        if (hi > lo) {
            f = (f.array() - lo) / (hi - lo);
        } else {
            f.setZero();
        }
    }
    return av;
}

Volume attention_as_volume(const AttentionVolume& av) {
    Volume v;
    v.subject_id = "ATTENTION";
    v.S = av.S;
    v.H = av.H;
    v.W = av.W;
    v.age = 0;
    v.sex = 0;
    v.cohort_label = 0;
    v.voxels.reserve(av.field.size());
    for (const auto& f : av.field) v.voxels.push_back(f.cast<float>());
    return v;
}

AttentionVolume attention_from_volume(const Volume& v) {
    AttentionVolume av;
    av.S = v.S;
    av.H = v.H;
    av.W = v.W;
    av.n_subjects = 0;
    av.field.reserve(v.voxels.size());
    for (const auto& f : v.voxels) av.field.push_back(f.cast<Scalar>());
    return av;
}

// ---------------------------------------------------------------------------
// Atlas
// ---------------------------------------------------------------------------

void AtlasVolume::validate() const {
    if (S < 1 || H < 1 || W < 1 || static_cast<int>(labels.size()) != S)
        throw std::invalid_argument("atlas: bad dimensions");
    std::set<int> seen;
    for (const auto& m : labels) {
        if (m.rows() != H || m.cols() != W) throw std::invalid_argument("atlas: slice shape mismatch");
        for (Eigen::Index y = 0; y < m.rows(); ++y)
            for (Eigen::Index x = 0; x < m.cols(); ++x)
                if (m(y, x) != 0) seen.insert(m(y, x));
    }
    for (int label : seen)
        if (!region_names.count(label))
            throw std::invalid_argument("atlas: unnamed label " + std::to_string(label));
}

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

std::uint32_t get_u32le(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("atlas file: truncated ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_atlas(const fs::path& volume_path, const fs::path& csv_path, const AtlasVolume& atlas) {
    atlas.validate();
    std::ofstream f(volume_path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("atlas file: cannot open for writing: " + volume_path.string());
    f.write("BRVA", 4);
    put_u32le(f, 1u);
    put_u32le(f, static_cast<std::uint32_t>(atlas.S));
    put_u32le(f, static_cast<std::uint32_t>(atlas.H));
    put_u32le(f, static_cast<std::uint32_t>(atlas.W));
    for (const auto& m : atlas.labels)
        for (Eigen::Index y = 0; y < m.rows(); ++y)
            for (Eigen::Index x = 0; x < m.cols(); ++x)
                put_u32le(f, static_cast<std::uint32_t>(m(y, x)));
    if (!f) throw FormatError("atlas file: write failed");

    std::ofstream c(csv_path, std::ios::trunc);
    if (!c) throw FormatError("atlas csv: cannot open for writing: " + csv_path.string());
    c << "label,region,group\n";
    for (const auto& [label, region] : atlas.region_names) {
        auto g = atlas.region_groups.find(region);
        c << label << ',' << region << ',' << (g == atlas.region_groups.end() ? region : g->second)
          << '\n';
    }
}

AtlasVolume load_atlas(const fs::path& volume_path, const fs::path& csv_path) {
    std::ifstream f(volume_path, std::ios::binary);
    if (!f) throw MissingArtifactError("atlas file not found: " + volume_path.string());
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "BRVA", 4) != 0)
        throw FormatError("atlas file: bad magic in " + volume_path.string());
    if (get_u32le(f, "version") != 1u) throw FormatError("atlas file: unsupported version");
    AtlasVolume atlas;
    atlas.S = static_cast<int>(get_u32le(f, "S"));
    atlas.H = static_cast<int>(get_u32le(f, "H"));
    atlas.W = static_cast<int>(get_u32le(f, "W"));
    if (atlas.S < 1 || atlas.H < 1 || atlas.W < 1 ||
        static_cast<std::uint64_t>(atlas.S) * atlas.H * atlas.W > (1ull << 32))
        throw FormatError("atlas file: dimension overflow");
    atlas.labels.assign(static_cast<std::size_t>(atlas.S), MatI(atlas.H, atlas.W));
    for (auto& m : atlas.labels)
        for (Eigen::Index y = 0; y < m.rows(); ++y)
            for (Eigen::Index x = 0; x < m.cols(); ++x)
                m(y, x) = static_cast<std::int32_t>(get_u32le(f, "labels"));

    std::ifstream c(csv_path);
    if (!c) throw MissingArtifactError("atlas csv not found: " + csv_path.string());
    std::string line;
    if (!std::getline(c, line) || line != "label,region,group")
        throw FormatError("atlas csv: unexpected header");
    while (std::getline(c, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string label_s, region, group;
        if (!std::getline(ss, label_s, ',') || !std::getline(ss, region, ',') || !std::getline(ss, group))
            throw FormatError("atlas csv: malformed row: " + line);
        const int label = std::stoi(label_s);
        atlas.region_names[label] = region;
        atlas.region_groups[region] = group;
    }
    atlas.validate();
    return atlas;
}

std::vector<RoiScore> roi_scores(const AttentionVolume& attention, const AtlasVolume& atlas,
                                 bool* resampled) {
    atlas.validate();
    if (attention.S < 1) throw std::invalid_argument("roi_scores: empty attention volume");

    const bool needs_resample =
        attention.S != atlas.S || attention.H != atlas.H || attention.W != atlas.W;
    if (resampled) *resampled = needs_resample;

    auto sample = [&](int s, int y, int x) -> Scalar {
        if (!needs_resample) return attention.field[static_cast<std::size_t>(s)](y, x);
        const int ss = nearest_source_index(s, attention.S, atlas.S);
        const int sy = nearest_source_index(y, attention.H, atlas.H);
        const int sx = nearest_source_index(x, attention.W, atlas.W);
        return attention.field[static_cast<std::size_t>(ss)](sy, sx);
    };

    std::map<int, std::pair<double, long>> region_sums;  // label -> (sum, count)
    for (int s = 0; s < atlas.S; ++s)
        for (int y = 0; y < atlas.H; ++y)
            for (int x = 0; x < atlas.W; ++x) {
                const int label = atlas.labels[static_cast<std::size_t>(s)](y, x);
                if (label == 0) continue;
                auto& acc = region_sums[label];
                acc.first += sample(s, y, x);
                acc.second += 1;
            }
    if (region_sums.empty()) throw std::invalid_argument("roi_scores: atlas has no nonzero labels");

    std::map<std::string, std::pair<double, long>> group_sums;
    for (const auto& [label, acc] : region_sums) {
        const std::string& region = atlas.region_names.at(label);
        auto g = atlas.region_groups.find(region);
        const std::string group = g == atlas.region_groups.end() ? region : g->second;
        group_sums[group].first += acc.first;
        group_sums[group].second += acc.second;
    }

    std::vector<RoiScore> out;
    for (const auto& [group, acc] : group_sums)
        out.push_back({group, acc.first / static_cast<double>(acc.second), acc.second});
    std::sort(out.begin(), out.end(), [](const RoiScore& a, const RoiScore& b) {
        if (a.mean_intensity != b.mean_intensity) return a.mean_intensity > b.mean_intensity;
        return a.group < b.group;
    });
    return out;
}

std::vector<AgeBandAttention> age_band_attention(const std::vector<SubjectAttention>& subjects,
                                                 const std::vector<double>& ages,
                                                 const std::vector<double>& band_edges) {
    if (subjects.size() != ages.size())
        throw std::invalid_argument("age_band_attention: subject/age length mismatch");
    if (band_edges.size() < 2) throw std::invalid_argument("age_band_attention: need at least one band");
    for (std::size_t i = 1; i < band_edges.size(); ++i)
        if (!(band_edges[i] > band_edges[i - 1]))
            throw std::invalid_argument("age_band_attention: edges must increase");

    std::vector<AgeBandAttention> out;
    for (std::size_t b = 0; b + 1 < band_edges.size(); ++b) {
        const double lo = band_edges[b], hi = band_edges[b + 1];
        std::vector<SubjectAttention> members;
        const bool last = b + 2 == band_edges.size();
        for (std::size_t i = 0; i < subjects.size(); ++i)
            if (ages[i] >= lo && (ages[i] < hi || (last && ages[i] <= hi))) members.push_back(subjects[i]);
        AgeBandAttention band;
        band.lo = lo;
        band.hi = hi;
        band.n_subjects = static_cast<int>(members.size());
        if (!members.empty()) band.volume = aggregate_attention(members);
        out.push_back(std::move(band));
    }
    return out;
}

void write_montage_svg(const fs::path& path, const AttentionVolume& av, int max_slices) {
    if (av.S < 1) throw std::invalid_argument("montage: empty volume");
    const int n = std::min(max_slices, av.S);
    const std::vector<int> picks = even_indices(av.S, n);
    const int cell = 4;
    const int grid = 48;
    const int tile_h = std::min(grid, av.H), tile_w = std::min(grid, av.W);
    const int pad = 6;

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("montage: cannot open for writing: " + path.string());
    const int width = n * (tile_w * cell + pad) + pad;
    const int height = tile_h * cell + 2 * pad + 14;
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"black\"/>\n";
    char buf[160];
    for (int k = 0; k < n; ++k) {
        const MatX& slice = av.field[static_cast<std::size_t>(picks[static_cast<std::size_t>(k)])];
        const int x0 = pad + k * (tile_w * cell + pad);
        for (int ty = 0; ty < tile_h; ++ty) {
            const int y_lo = ty * av.H / tile_h, y_hi = (ty + 1) * av.H / tile_h;
            for (int tx = 0; tx < tile_w; ++tx) {
                const int x_lo = tx * av.W / tile_w, x_hi = (tx + 1) * av.W / tile_w;
                const double mean =
                    slice.block(y_lo, x_lo, std::max(1, y_hi - y_lo), std::max(1, x_hi - x_lo)).mean();
                const int level = static_cast<int>(std::lround(std::clamp(mean, 0.0, 1.0) * 255));
                std::snprintf(buf, sizeof(buf),
                              "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"rgb(%d,%d,%d)\"/>\n",
                              x0 + tx * cell, pad + ty * cell, cell, cell, level, level / 4, 255 - level);
                f << buf;
            }
        }
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" fill=\"white\" font-size=\"10\">slice %d</text>\n", x0,
                      pad + tile_h * cell + 11, picks[static_cast<std::size_t>(k)]);
        f << buf;
    }
    f << "</svg>\n";
}

}  // namespace brainrot
