#pragma once
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brainrot/linalg.hpp"
#include "brainrot/tensor_archive.hpp"
#include "brainrot/vit.hpp"

namespace brainrot {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ConvBlockSpec {
    int out_channels = 1;
    int kh = 1, kw = 1;
};

enum class LossKind { mse, nll };

[[nodiscard]] std::string to_string(LossKind k);
[[nodiscard]] LossKind parse_loss(std::string_view s);

struct RegressorConfig {
    std::vector<ConvBlockSpec> conv_blocks{{8, 10, 60}, {4, 5, 15}, {1, 2, 6}};
    Activation activation = Activation::silu;
    int fc1_dim = 512;
    int fc2_dim = 128;
    double dropout = 0.3;
    bool sex_fusion = true;
    bool residual = true;
    LossKind loss = LossKind::mse;
    double lr = 5e-4;
    int max_epochs = 200;
    int patience = 20;
    int batch_size = 16;
    std::uint64_t seed = 1;

    void validate() const;
    [[nodiscard]] int fused_dim() const { return fc2_dim + (sex_fusion ? 1 : 0); }
};

// ---------------------------------------------------------------------------
// Shape chain. Per block: valid conv (h-kh+1, w-kw+1) then max pool with
// kernel 2 stride 1, shrinking each spatial dim by one more.
// ---------------------------------------------------------------------------

struct ShapeChain {
    struct Stage {
        int channels, h, w;
    };
    std::vector<Stage> stages;  // stages[0] is the 1 x S x d input
    int flat = 0;
};

[[nodiscard]] ShapeChain regressor_shape_chain(const RegressorConfig& cfg, int S, int d);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ConvBlockParams {
    MatX kernel;      // C_out x (C_in * kh * kw)
    MatX bias;        // 1 x C_out
    MatX res_kernel;  // C_out x C_in; empty when channels match (identity path)
    MatX res_bias;    // 1 x C_out; empty with res_kernel
};

struct RegressorParams {
    int input_s = 0, input_d = 0;
    std::vector<ConvBlockSpec> specs;
    std::vector<ConvBlockParams> blocks;
    MatX fc1_w, fc1_b;            // fc1 x flat, 1 x fc1
    MatX ln1_scale, ln1_bias;     // 1 x fc1
    MatX fc2_w, fc2_b;            // fc2 x fc1, 1 x fc2
    MatX ln2_scale, ln2_bias;     // 1 x fc2
    MatX out_w, out_b;            // 1 x fused, 1 x 1
    MatX var_w, var_b;            // log-variance head (NLL); empty otherwise

    [[nodiscard]] bool has_var_head() const { return var_w.size() > 0; }
    static RegressorParams init(const RegressorConfig& cfg, int S, int d);
    static RegressorParams zeros_like(const RegressorParams& p);
    void set_zero();
};

template <class Params, class Fn>
void regressor_visit(Params& p, Fn&& fn) {
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "conv." + std::to_string(i) + ".";
        fn(pre + "kernel", b.kernel);
        fn(pre + "bias", b.bias);
        if (b.res_kernel.size() > 0) {
            fn(pre + "res_kernel", b.res_kernel);
            fn(pre + "res_bias", b.res_bias);
        }
    }
    fn("fc1.weight", p.fc1_w);
    fn("fc1.bias", p.fc1_b);
    fn("ln1.scale", p.ln1_scale);
    fn("ln1.bias", p.ln1_bias);
    fn("fc2.weight", p.fc2_w);
    fn("fc2.bias", p.fc2_b);
    fn("ln2.scale", p.ln2_scale);
    fn("ln2.bias", p.ln2_bias);
    fn("out.weight", p.out_w);
    fn("out.bias", p.out_b);
    if (p.var_w.size() > 0) {
        fn("var.weight", p.var_w);
        fn("var.bias", p.var_b);
    }
}

[[nodiscard]] std::vector<NamedTensor> regressor_to_tensors(const RegressorParams& p);
[[nodiscard]] RegressorParams regressor_from_tensors(const std::vector<NamedTensor>& tensors);
[[nodiscard]] std::uint64_t regressor_checksum(const RegressorParams& p);
void save_regressor(const std::filesystem::path& path, const RegressorParams& p);
[[nodiscard]] RegressorParams load_regressor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum class RunMode { train, eval };

// Channel-major feature map: C rows, h*w row-major columns.
struct FeatureMap {
    MatX data;
    int h = 0, w = 0;
};

// One residual block: maxpool(act(conv_valid(x))) plus a nearest-resized
// (and 1x1-convolved, on channel mismatch) shortcut.
[[nodiscard]] FeatureMap conv_block_forward(const FeatureMap& x, const ConvBlockParams& params,
                                            const ConvBlockSpec& spec, const RegressorConfig& cfg);

struct RegressorOutput {
    double y_hat = 0;
    std::optional<double> sigma2;  // present in NLL mode
};

class Rng;

[[nodiscard]] RegressorOutput regressor_forward(const MatX& Z, int sex, const RegressorParams& p,
                                                const RegressorConfig& cfg, RunMode mode,
                                                Rng* dropout_rng = nullptr);

enum class GradientMode { standard, guided };

struct GuidedDiag {
    long negative_incoming = 0;   // strictly negative gradients hitting an activation
    long inactive_with_grad = 0;  // non-positive pre-activations carrying nonzero gradient
};

// d y_hat / d Z in eval mode. Guided mode zeroes the flow through an
// activation unless its input was positive and the incoming gradient is
// positive.
[[nodiscard]] MatX input_gradient(const MatX& Z, int sex, const RegressorParams& p,
                                  const RegressorConfig& cfg, GradientMode mode,
                                  GuidedDiag* diag = nullptr);

// Parameter gradients of the configured loss at a single example, in eval
// mode (dropout off). Backs the finite-difference verification suite.
[[nodiscard]] RegressorParams regressor_loss_gradients(const MatX& Z, int sex, double age,
                                                       const RegressorParams& p,
                                                       const RegressorConfig& cfg);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

[[nodiscard]] double mse_loss(const VecX& preds, const VecX& targets);
[[nodiscard]] double nll_loss(const VecX& mu, const VecX& sigma2, const VecX& targets);

// ---------------------------------------------------------------------------
// Training and prediction
// ---------------------------------------------------------------------------

struct LabeledFeature {
    std::string subject_id;
    MatX Z;
    double age = 0;
    int sex = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_mae = 0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    int stopped_epoch = 0;
};

struct RegressorTrainResult {
    RegressorParams params;
    TrainReport report;
};

[[nodiscard]] RegressorTrainResult train_regressor(const std::vector<LabeledFeature>& train,
                                                   const std::vector<LabeledFeature>& val,
                                                   const RegressorConfig& cfg);

struct Prediction {
    std::string subject_id;
    double age = 0;
    int sex = 0;
    double predicted_age = 0;
    double bag = 0;  // predicted_age - age
    std::optional<double> sigma2;
};

[[nodiscard]] Prediction predict(const LabeledFeature& feature, const RegressorParams& p,
                                 const RegressorConfig& cfg);
[[nodiscard]] Prediction predict(const Volume& volume, const ViTParams& vit, const RegressorParams& p,
                                 const RegressorConfig& cfg);

}  // namespace brainrot
