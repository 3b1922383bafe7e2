#pragma once
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "brainrot/linalg.hpp"
#include "brainrot/tensor_archive.hpp"
#include "brainrot/volume.hpp"

namespace brainrot {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ViTConfig {
    int patch = 16;
    int embed_dim = 768;
    int depth = 12;
    int heads = 12;
    double mlp_ratio = 4.0;
    int bin_width = 10;          // years per age bin
    int slices_per_volume = 32;  // evenly spaced slices sampled for pretraining
    double lr = 1e-4;
    int epochs = 5;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int image_h = 224, image_w = 224;

    void validate() const;
    [[nodiscard]] int mlp_hidden() const { return static_cast<int>(mlp_ratio * embed_dim); }
    [[nodiscard]] int n_patches() const { return (image_h / patch) * (image_w / patch); }
};

// ---------------------------------------------------------------------------
// Age-sex composite classes. Label form "{lo}-{hi}|{M|F}" with
// lo = bin_width * floor(age / bin_width).
// ---------------------------------------------------------------------------

struct AgeSexClass {
    int class_id = -1;  // 2 * floor(age / bin_width) + sex
    int bin_lo = 0;
    int sex = 0;
    std::string label;
};

[[nodiscard]] AgeSexClass age_sex_class(double age, int sex, int bin_width);

// The classes observed in a training cohort: the Cartesian product of
// observed age bins and both sexes, in (bin, sex) order.
struct ClassSet {
    int bin_width = 10;
    std::vector<std::pair<int, int>> entries;  // (bin_lo, sex)

    static ClassSet from_training(const std::vector<std::pair<double, int>>& age_sex, int bin_width);
    [[nodiscard]] int size() const { return static_cast<int>(entries.size()); }
    [[nodiscard]] int index_of(double age, int sex) const;  // -1 if the bin was not observed
    [[nodiscard]] std::string label_of(int index) const;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ViTLayerParams {
    MatX ln1_scale, ln1_bias;  // 1 x d
    MatX wq, wk, wv, wo;       // d x d
    MatX bq, bk, bv, bo;       // 1 x d
    MatX ln2_scale, ln2_bias;  // 1 x d
    MatX w1, b1;               // d x m, 1 x m
    MatX w2, b2;               // m x d, 1 x d
};

struct ViTParams {
    int patch = 16;
    int heads = 12;
    int image_h = 224, image_w = 224;
    bool frozen = false;

    MatX patch_weight;  // (patch*patch) x d
    MatX patch_bias;    // 1 x d
    MatX pos_embed;     // (1 + n_patches) x d
    MatX cls_token;     // 1 x d
    std::vector<ViTLayerParams> layers;
    MatX final_ln_scale, final_ln_bias;  // 1 x d
    MatX head_weight;                    // d x C
    MatX head_bias;                      // 1 x C

    [[nodiscard]] int embed_dim() const { return static_cast<int>(patch_weight.cols()); }
    [[nodiscard]] int n_patches() const { return static_cast<int>(pos_embed.rows()) - 1; }
    [[nodiscard]] int depth() const { return static_cast<int>(layers.size()); }
    [[nodiscard]] int num_classes() const { return static_cast<int>(head_bias.cols()); }

    static ViTParams init(const ViTConfig& cfg, int num_classes);
    static ViTParams zeros_like(const ViTParams& p);
    void set_zero();
};

template <class Params, class Fn>
void vit_visit(Params& p, Fn&& fn) {
    fn("patch.weight", p.patch_weight);
    fn("patch.bias", p.patch_bias);
    fn("pos_embed", p.pos_embed);
    fn("cls_token", p.cls_token);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string pre = "layers." + std::to_string(i) + ".";
        fn(pre + "ln1.scale", l.ln1_scale);
        fn(pre + "ln1.bias", l.ln1_bias);
        fn(pre + "attn.wq", l.wq);
        fn(pre + "attn.bq", l.bq);
        fn(pre + "attn.wk", l.wk);
        fn(pre + "attn.bk", l.bk);
        fn(pre + "attn.wv", l.wv);
        fn(pre + "attn.bv", l.bv);
        fn(pre + "attn.wo", l.wo);
        fn(pre + "attn.bo", l.bo);
        fn(pre + "ln2.scale", l.ln2_scale);
        fn(pre + "ln2.bias", l.ln2_bias);
        fn(pre + "ffn.w1", l.w1);
        fn(pre + "ffn.b1", l.b1);
        fn(pre + "ffn.w2", l.w2);
        fn(pre + "ffn.b2", l.b2);
    }
    fn("final_ln.scale", p.final_ln_scale);
    fn("final_ln.bias", p.final_ln_bias);
    fn("head.weight", p.head_weight);
    fn("head.bias", p.head_bias);
}

[[nodiscard]] std::vector<NamedTensor> vit_to_tensors(const ViTParams& p);
[[nodiscard]] ViTParams vit_from_tensors(const std::vector<NamedTensor>& tensors);
[[nodiscard]] std::uint64_t vit_checksum(const ViTParams& p);
void save_vit(const std::filesystem::path& path, const ViTParams& p);
[[nodiscard]] ViTParams load_vit(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// Row-major non-overlapping patches; concatenating rows reconstructs the slice.
[[nodiscard]] MatX patchify(const MatX& slice, int patch);
[[nodiscard]] MatX unpatchify(const MatX& patches, int h, int w, int patch);

// CLS token plus projected patches, positional encodings added.
[[nodiscard]] MatX embed_tokens(const MatX& slice, const ViTParams& p);

// The stack of transformer layers (pre-LN residual form); identity at depth 0.
// Does not apply the final layer norm.
[[nodiscard]] MatX encoder_forward(const MatX& tokens, const ViTParams& p);

struct EncodeResult {
    VecX embedding;            // final-layer CLS token after the final layer norm
    MatX patch_tokens;         // n_patches x d, same normalization
    MatX cls_attention_heads;  // heads x (1 + n_patches); rows are softmax rows. Empty at depth 0.
};

[[nodiscard]] EncodeResult encode_slice_full(const MatX& slice, const ViTParams& p);
[[nodiscard]] VecX encode_slice(const MatX& slice, const ViTParams& p);

// Final-layer CLS->patch attention averaged over heads (length n_patches).
[[nodiscard]] VecX cls_attention(const MatX& slice, const ViTParams& p);

struct EmbeddingMatrix {
    std::string subject_id;
    double age = 0;
    int sex = 0;
    MatX Z;  // S x d, sagittal order
};

[[nodiscard]] EmbeddingMatrix build_feature_map(const Volume& volume, const ViTParams& p);
[[nodiscard]] EmbeddingMatrix build_feature_map(const SliceStack& stack, double age, int sex,
                                                const ViTParams& p);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean over the batch of -sum_c y_c log softmax(logits)_c.
[[nodiscard]] double cross_entropy(const MatX& logits, const MatX& one_hot_targets);
[[nodiscard]] double cross_entropy(const MatX& logits, const std::vector<int>& targets);
double cross_entropy_with_grad(const MatX& logits, const std::vector<int>& targets, MatX& dlogits);

// Loss and parameter gradients for one slice; gradients accumulate into
// `grads` scaled by `grad_scale`. Returns the example loss and its logits.
double vit_example_backward(const MatX& slice, int target, const ViTParams& p, ViTParams& grads,
                            double grad_scale, VecX* logits_out = nullptr);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SliceExample {
    MatX slice;
    int class_id = 0;
};

struct SliceDataset {
    std::vector<SliceExample> examples;
    ClassSet classes;
};

// One example per sampled slice, labeled with the subject's composite class.
[[nodiscard]] SliceDataset build_slice_dataset(const std::vector<Volume>& subjects, const ViTConfig& cfg);

struct ViTEpochStat {
    int epoch = 0;
    double loss = 0;
    double accuracy = 0;
};

struct ViTTrainResult {
    ViTParams params;
    std::vector<ViTEpochStat> log;
    ClassSet classes;
};

[[nodiscard]] ViTTrainResult train_vit(const SliceDataset& dataset, const ViTConfig& cfg);

}  // namespace brainrot
