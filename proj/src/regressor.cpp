#include "brainrot/regressor.hpp"

#include <algorithm>
#include <cmath>

#include "brainrot/errors.hpp"
#include "brainrot/nn.hpp"
#include "brainrot/rng.hpp"

namespace brainrot {

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "nll"; }

LossKind parse_loss(std::string_view s) {
    if (s == "mse") return LossKind::mse;
    if (s == "nll") return LossKind::nll;
    throw std::invalid_argument("unknown loss: " + std::string(s));
}

void RegressorConfig::validate() const {
    for (const auto& b : conv_blocks)
        if (b.out_channels < 1 || b.kh < 1 || b.kw < 1)
            throw ConfigError("regressor: conv block dims must be >= 1");
    if (fc1_dim < 1 || fc2_dim < 1) throw ConfigError("regressor: fc dims must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("regressor: dropout must be in [0,1)");
    if (!(lr > 0)) throw ConfigError("regressor: lr must be positive");
    if (max_epochs < 1) throw ConfigError("regressor: max_epochs must be >= 1");
    if (patience < 0) throw ConfigError("regressor: patience must be >= 0");
    if (batch_size < 1) throw ConfigError("regressor: batch_size must be >= 1");
}

ShapeChain regressor_shape_chain(const RegressorConfig& cfg, int S, int d) {
    if (S < 1 || d < 1) throw std::invalid_argument("shape chain: input dims must be >= 1");
    ShapeChain chain;
    chain.stages.push_back({1, S, d});
    int c = 1, h = S, w = d;
    for (std::size_t i = 0; i < cfg.conv_blocks.size(); ++i) {
        const auto& b = cfg.conv_blocks[i];
        const int hc = h - b.kh + 1, wc = w - b.kw + 1;
        if (hc < 2 || wc < 2)
            throw std::invalid_argument("shape chain: kernel of block " + std::to_string(i) +
                                        " does not fit the " + std::to_string(h) + "x" +
                                        std::to_string(w) + " feature map");
        c = b.out_channels;
        h = hc - 1;  // max pool, kernel 2 stride 1
        w = wc - 1;
        chain.stages.push_back({c, h, w});
    }
    chain.flat = c * h * w;
    return chain;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

RegressorParams RegressorParams::init(const RegressorConfig& cfg, int S, int d) {
    cfg.validate();
    const ShapeChain chain = regressor_shape_chain(cfg, S, d);
    RegressorParams p;
    p.input_s = S;
    p.input_d = d;
    p.specs = cfg.conv_blocks;

    Rng rng(mix_seed(cfg.seed, 0x524547ULL));  // "REG"
    auto fill = [&rng](MatX& w, double stddev) {
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal(0.0, stddev);
    };

    int c_in = 1;
    for (const auto& spec : cfg.conv_blocks) {
        ConvBlockParams b;
        b.kernel.resize(spec.out_channels, c_in * spec.kh * spec.kw);
        fill(b.kernel, std::sqrt(2.0 / (c_in * spec.kh * spec.kw)));
        b.bias = MatX::Zero(1, spec.out_channels);
        if (cfg.residual && spec.out_channels != c_in) {
            b.res_kernel.resize(spec.out_channels, c_in);
            fill(b.res_kernel, std::sqrt(2.0 / c_in));
            b.res_bias = MatX::Zero(1, spec.out_channels);
        }
        p.blocks.push_back(std::move(b));
        c_in = spec.out_channels;
    }

    p.fc1_w.resize(cfg.fc1_dim, chain.flat);
    fill(p.fc1_w, std::sqrt(2.0 / chain.flat));
    p.fc1_b = MatX::Zero(1, cfg.fc1_dim);
    p.ln1_scale = MatX::Ones(1, cfg.fc1_dim);
    p.ln1_bias = MatX::Zero(1, cfg.fc1_dim);
    p.fc2_w.resize(cfg.fc2_dim, cfg.fc1_dim);
    fill(p.fc2_w, std::sqrt(2.0 / cfg.fc1_dim));
    p.fc2_b = MatX::Zero(1, cfg.fc2_dim);
    p.ln2_scale = MatX::Ones(1, cfg.fc2_dim);
    p.ln2_bias = MatX::Zero(1, cfg.fc2_dim);
    p.out_w.resize(1, cfg.fused_dim());
    fill(p.out_w, 0.01);
    p.out_b = MatX::Zero(1, 1);
    if (cfg.loss == LossKind::nll) {
        p.var_w = MatX::Zero(1, cfg.fused_dim());
        p.var_b = MatX::Zero(1, 1);
    }
    return p;
}

RegressorParams RegressorParams::zeros_like(const RegressorParams& p) {
    RegressorParams z = p;
    z.set_zero();
    return z;
}

void RegressorParams::set_zero() {
    regressor_visit(*this, [](const std::string&, MatX& t) { t.setZero(); });
}

std::vector<NamedTensor> regressor_to_tensors(const RegressorParams& p) {
    std::vector<NamedTensor> out;
    MatX meta(1, 3 + 3 * static_cast<int>(p.specs.size()));
    meta(0, 0) = p.input_s;
    meta(0, 1) = p.input_d;
    meta(0, 2) = static_cast<Scalar>(p.specs.size());
    for (std::size_t i = 0; i < p.specs.size(); ++i) {
        meta(0, 3 + 3 * static_cast<Eigen::Index>(i)) = p.specs[i].out_channels;
        meta(0, 4 + 3 * static_cast<Eigen::Index>(i)) = p.specs[i].kh;
        meta(0, 5 + 3 * static_cast<Eigen::Index>(i)) = p.specs[i].kw;
    }
    out.push_back(NamedTensor::vector("meta", meta));
    regressor_visit(p, [&out](const std::string& name, const MatX& t) {
        out.push_back(t.rows() == 1 ? NamedTensor::vector(name, t) : NamedTensor::matrix(name, t));
    });
    return out;
}

RegressorParams regressor_from_tensors(const std::vector<NamedTensor>& tensors) {
    const MatX& meta = find_tensor(tensors, "meta").data;
    if (meta.size() < 3) throw FormatError("regressor archive: bad meta tensor");
    RegressorParams p;
    p.input_s = static_cast<int>(meta(0, 0));
    p.input_d = static_cast<int>(meta(0, 1));
    const int n_blocks = static_cast<int>(meta(0, 2));
    if (meta.size() != 3 + 3 * n_blocks) throw FormatError("regressor archive: bad meta tensor");
    for (int i = 0; i < n_blocks; ++i)
        p.specs.push_back({static_cast<int>(meta(0, 3 + 3 * i)), static_cast<int>(meta(0, 4 + 3 * i)),
                           static_cast<int>(meta(0, 5 + 3 * i))});
    p.blocks.resize(static_cast<std::size_t>(n_blocks));
    auto has = [&tensors](const std::string& name) {
        return std::any_of(tensors.begin(), tensors.end(),
                           [&name](const NamedTensor& t) { return t.name == name; });
    };
    for (int i = 0; i < n_blocks; ++i) {
        const std::string pre = "conv." + std::to_string(i) + ".";
        if (has(pre + "res_kernel")) {
            p.blocks[static_cast<std::size_t>(i)].res_kernel.resize(1, 1);
            p.blocks[static_cast<std::size_t>(i)].res_bias.resize(1, 1);
        }
    }
    if (has("var.weight")) {
        p.var_w.resize(1, 1);
        p.var_b.resize(1, 1);
    }
    regressor_visit(p, [&tensors](const std::string& name, MatX& t) { t = find_tensor(tensors, name).data; });
    return p;
}

std::uint64_t regressor_checksum(const RegressorParams& p) {
    return archive_checksum(regressor_to_tensors(p));
}

void save_regressor(const std::filesystem::path& path, const RegressorParams& p) {
    save_tensor_archive(path, regressor_to_tensors(p));
}

RegressorParams load_regressor(const std::filesystem::path& path) {
    return regressor_from_tensors(load_tensor_archive(path));
}

// ---------------------------------------------------------------------------
// Conv block core
// ---------------------------------------------------------------------------

namespace {

struct BlockCache {
    MatX x;  // C_in x (h*w)
    int h = 0, w = 0;
    int hc = 0, wc = 0, hp = 0, wp = 0;
    MatX pre;                  // C_out x (hc*wc)
    std::vector<int> argmax;   // (C_out*hp*wp) -> column in pre
    std::vector<int> res_src;  // (hp*wp) -> column in x
    MatX res_lin;              // C_out x (h*w); empty on identity shortcut
    bool identity_res = false;
};

void fill_im2col_row(const MatX& x, int w, int kh, int kw, int r, int wc, MatX& col) {
    const int c_in = static_cast<int>(x.rows());
    for (int ci = 0; ci < c_in; ++ci)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx)
                col.row(ci * kh * kw + dy * kw + dx) = x.row(ci).segment((r + dy) * w + dx, wc);
}

std::vector<int> resize_map(int h, int w, int hp, int wp) {
    std::vector<int> src(static_cast<std::size_t>(hp) * wp);
    for (int r = 0; r < hp; ++r) {
        const int sr = nearest_source_index(r, h, hp);
        for (int c = 0; c < wp; ++c)
            src[static_cast<std::size_t>(r) * wp + c] = sr * w + nearest_source_index(c, w, wp);
    }
    return src;
}

MatX block_forward_core(const FeatureMap& in, const ConvBlockParams& params, const ConvBlockSpec& spec,
                        const RegressorConfig& cfg, BlockCache* cache, int* out_h, int* out_w) {
    const int h = in.h, w = in.w;
    const int c_in = static_cast<int>(in.data.rows());
    const int hc = h - spec.kh + 1, wc = w - spec.kw + 1;
    if (hc < 2 || wc < 2) throw std::invalid_argument("conv block: kernel larger than input allows");
    const int hp = hc - 1, wp = wc - 1;
    const int c_out = spec.out_channels;

    MatX pre(c_out, static_cast<Eigen::Index>(hc) * wc);
    MatX col(static_cast<Eigen::Index>(c_in) * spec.kh * spec.kw, wc);
    const VecX bias = params.bias.row(0).transpose();
    for (int r = 0; r < hc; ++r) {
        fill_im2col_row(in.data, w, spec.kh, spec.kw, r, wc, col);
        pre.middleCols(static_cast<Eigen::Index>(r) * wc, wc) = params.kernel * col;
    }
    pre.colwise() += bias;

    // activation then max pool (kernel 2, stride 1)
    MatX act = act_forward(cfg.activation, pre);
    MatX out(c_out, static_cast<Eigen::Index>(hp) * wp);
    std::vector<int> argmax(static_cast<std::size_t>(c_out) * hp * wp);
    for (int c = 0; c < c_out; ++c) {
        for (int r = 0; r < hp; ++r) {
            for (int cc = 0; cc < wp; ++cc) {
                const int base = r * wc + cc;
                int best = base;
                Scalar bv = act(c, base);
                for (int cand : {base + 1, base + wc, base + wc + 1}) {
                    if (act(c, cand) > bv) {
                        bv = act(c, cand);
                        best = cand;
                    }
                }
                out(c, r * wp + cc) = bv;
                argmax[(static_cast<std::size_t>(c) * hp + r) * wp + cc] = best;
            }
        }
    }

    std::vector<int> res_src;
    MatX res_lin;
    bool identity_res = false;
    if (cfg.residual) {
        res_src = resize_map(h, w, hp, wp);
        if (params.res_kernel.size() > 0) {
            res_lin = params.res_kernel * in.data;
            res_lin.colwise() += params.res_bias.row(0).transpose();
        } else {
            if (c_in != c_out)
                throw std::invalid_argument("conv block: missing 1x1 shortcut for channel mismatch");
            identity_res = true;
        }
        const MatX& source = identity_res ? in.data : res_lin;
        for (int j = 0; j < hp * wp; ++j)
            out.col(j) += source.col(res_src[static_cast<std::size_t>(j)]);
    }

    if (cache) {
        cache->x = in.data;
        cache->h = h;
        cache->w = w;
        cache->hc = hc;
        cache->wc = wc;
        cache->hp = hp;
        cache->wp = wp;
        cache->pre = std::move(pre);
        cache->argmax = std::move(argmax);
        cache->res_src = std::move(res_src);
        cache->res_lin = std::move(res_lin);
        cache->identity_res = identity_res;
    }
    *out_h = hp;
    *out_w = wp;
    return out;
}

// Backward through the activation with the optional guided gate.
MatX act_backward(const MatX& incoming, const MatX& pre, Activation act, GradientMode mode,
                  GuidedDiag* diag) {
    if (mode == GradientMode::standard && !diag)
        return incoming.cwiseProduct(act_derivative(act, pre));
    MatX out(incoming.rows(), incoming.cols());
    for (Eigen::Index i = 0; i < incoming.rows(); ++i) {
        for (Eigen::Index j = 0; j < incoming.cols(); ++j) {
            const Scalar g = incoming(i, j);
            const Scalar x = pre(i, j);
            if (diag) {
                if (g < 0) ++diag->negative_incoming;
                if (x <= 0 && g != 0) ++diag->inactive_with_grad;
            }
            if (mode == GradientMode::guided && !(x > 0 && g > 0)) {
                out(i, j) = 0;
            } else {
                out(i, j) = g * act_slope(act, x);
            }
        }
    }
    return out;
}

// dout is C_out x (hp*wp); returns dx and optionally accumulates parameter
// gradients scaled by `scale`.
MatX block_backward_core(const MatX& dout, const BlockCache& c, const ConvBlockParams& params,
                         const ConvBlockSpec& spec, const RegressorConfig& cfg,
                         ConvBlockParams* grads, double scale, GradientMode gmode, GuidedDiag* diag) {
    const int c_in = static_cast<int>(c.x.rows());
    const Scalar s = static_cast<Scalar>(scale);
    MatX dx = MatX::Zero(c_in, static_cast<Eigen::Index>(c.h) * c.w);

    if (cfg.residual) {
        MatX dres = MatX::Zero(spec.out_channels, static_cast<Eigen::Index>(c.h) * c.w);
        for (int j = 0; j < c.hp * c.wp; ++j)
            dres.col(c.res_src[static_cast<std::size_t>(j)]) += dout.col(j);
        if (c.identity_res) {
            dx += dres;
        } else {
            if (grads) {
                grads->res_kernel += s * dres * c.x.transpose();
                grads->res_bias.row(0) += s * dres.rowwise().sum().transpose();
            }
            dx += params.res_kernel.transpose() * dres;
        }
    }

    MatX dact = MatX::Zero(spec.out_channels, static_cast<Eigen::Index>(c.hc) * c.wc);
    for (int ch = 0; ch < spec.out_channels; ++ch)
        for (int j = 0; j < c.hp * c.wp; ++j)
            dact(ch, c.argmax[static_cast<std::size_t>(ch) * c.hp * c.wp + j]) += dout(ch, j);

    const MatX dpre = act_backward(dact, c.pre, cfg.activation, gmode, diag);
    if (grads) grads->bias.row(0) += s * dpre.rowwise().sum().transpose();

    MatX col(static_cast<Eigen::Index>(c_in) * spec.kh * spec.kw, c.wc);
    for (int r = 0; r < c.hc; ++r) {
        const auto dpre_r = dpre.middleCols(static_cast<Eigen::Index>(r) * c.wc, c.wc);
        if (grads) {
            fill_im2col_row(c.x, c.w, spec.kh, spec.kw, r, c.wc, col);
            grads->kernel += s * dpre_r * col.transpose();
        }
        const MatX dcol = params.kernel.transpose() * dpre_r;
        for (int ci = 0; ci < c_in; ++ci)
            for (int dy = 0; dy < spec.kh; ++dy)
                for (int dk = 0; dk < spec.kw; ++dk)
                    dx.row(ci).segment((r + dy) * c.w + dk, c.wc) +=
                        dcol.row(ci * spec.kh * spec.kw + dy * spec.kw + dk);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Full forward/backward
// ---------------------------------------------------------------------------

struct ForwardCache {
    std::vector<BlockCache> blocks;
    int last_h = 0, last_w = 0;
    MatX flat;  // 1 x flat
    MatX a1, l1, act1, d1, mask1;
    MatX a2, l2, act2, d2, mask2;
    LayerNormCache ln1, ln2;
    MatX fused;
    double y_hat = 0, logvar = 0;
};

ForwardCache forward_cached(const MatX& Z, int sex, const RegressorParams& p,
                            const RegressorConfig& cfg, RunMode mode, Rng* dropout_rng) {
    if (Z.rows() != p.input_s || Z.cols() != p.input_d)
        throw std::invalid_argument("regressor_forward: feature map shape mismatch");
    if (sex != 0 && sex != 1) throw std::invalid_argument("regressor_forward: sex must be 0 or 1");
    if (mode == RunMode::train && cfg.dropout > 0 && dropout_rng == nullptr)
        throw std::invalid_argument("regressor_forward: train mode requires a dropout rng");

    ForwardCache c;
    FeatureMap fm;
    fm.data = Eigen::Map<const MatX>(Z.data(), 1, Z.size());
    fm.h = static_cast<int>(Z.rows());
    fm.w = static_cast<int>(Z.cols());
    c.blocks.resize(p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        int oh = 0, ow = 0;
        MatX out = block_forward_core(fm, p.blocks[i], p.specs[i], cfg, &c.blocks[i], &oh, &ow);
        fm.data = std::move(out);
        fm.h = oh;
        fm.w = ow;
    }
    c.last_h = fm.h;
    c.last_w = fm.w;
    c.flat = Eigen::Map<const MatX>(fm.data.data(), 1, fm.data.size());
    if (c.flat.cols() != p.fc1_w.cols())
        throw std::invalid_argument("regressor_forward: flattened width mismatch");

    auto dropout_mask = [&](Eigen::Index n) {
        MatX mask = MatX::Ones(1, n);
        if (mode == RunMode::train && cfg.dropout > 0) {
            const Scalar keep_scale = Scalar(1) / (Scalar(1) - cfg.dropout);
            for (Eigen::Index j = 0; j < n; ++j)
                mask(0, j) = dropout_rng->uniform() < cfg.dropout ? Scalar(0) : keep_scale;
        }
        return mask;
    };

    c.a1 = (p.fc1_w * c.flat.transpose()).transpose() + p.fc1_b;
    c.l1 = layer_norm(c.a1, p.ln1_scale, p.ln1_bias, &c.ln1);
    c.act1 = act_forward(cfg.activation, c.l1);
    c.mask1 = dropout_mask(c.act1.cols());
    c.d1 = c.act1.cwiseProduct(c.mask1);

    c.a2 = (p.fc2_w * c.d1.transpose()).transpose() + p.fc2_b;
    c.l2 = layer_norm(c.a2, p.ln2_scale, p.ln2_bias, &c.ln2);
    c.act2 = act_forward(cfg.activation, c.l2);
    c.mask2 = dropout_mask(c.act2.cols());
    c.d2 = c.act2.cwiseProduct(c.mask2);

    c.fused.resize(1, c.d2.cols() + (cfg.sex_fusion ? 1 : 0));
    c.fused.leftCols(c.d2.cols()) = c.d2;
    if (cfg.sex_fusion) c.fused(0, c.d2.cols()) = static_cast<Scalar>(sex);
    if (c.fused.cols() != p.out_w.cols())
        throw std::invalid_argument("regressor_forward: fused width mismatch");

    c.y_hat = p.out_w.row(0).dot(c.fused.row(0)) + p.out_b(0, 0);
    if (p.has_var_head()) c.logvar = p.var_w.row(0).dot(c.fused.row(0)) + p.var_b(0, 0);
    return c;
}

// Returns dZ; parameter gradients (scaled) go into `grads` when non-null.
MatX backward_from_output(const ForwardCache& c, const RegressorParams& p, const RegressorConfig& cfg,
                          double dy, double dlogvar, RegressorParams* grads, double scale,
                          GradientMode gmode, GuidedDiag* diag) {
    const Scalar s = static_cast<Scalar>(scale);
    MatX dfused = dy * p.out_w;
    if (p.has_var_head() && dlogvar != 0) dfused += dlogvar * p.var_w;
    if (grads) {
        grads->out_w += s * dy * c.fused;
        grads->out_b(0, 0) += s * dy;
        if (p.has_var_head()) {
            grads->var_w += s * dlogvar * c.fused;
            grads->var_b(0, 0) += s * dlogvar;
        }
    }

    MatX dd2 = dfused.leftCols(c.d2.cols());
    MatX dact2 = dd2.cwiseProduct(c.mask2);
    MatX dl2 = act_backward(dact2, c.l2, cfg.activation, gmode, diag);
    MatX dln2_scale = MatX::Zero(1, c.l2.cols()), dln2_bias = MatX::Zero(1, c.l2.cols());
    MatX da2 = layer_norm_backward(dl2, c.ln2, p.ln2_scale, dln2_scale, dln2_bias);
    if (grads) {
        grads->ln2_scale += s * dln2_scale;
        grads->ln2_bias += s * dln2_bias;
        grads->fc2_w += s * da2.transpose() * c.d1;
        grads->fc2_b += s * da2;
    }
    MatX dd1 = (p.fc2_w.transpose() * da2.transpose()).transpose();

    MatX dact1 = dd1.cwiseProduct(c.mask1);
    MatX dl1 = act_backward(dact1, c.l1, cfg.activation, gmode, diag);
    MatX dln1_scale = MatX::Zero(1, c.l1.cols()), dln1_bias = MatX::Zero(1, c.l1.cols());
    MatX da1 = layer_norm_backward(dl1, c.ln1, p.ln1_scale, dln1_scale, dln1_bias);
    if (grads) {
        grads->ln1_scale += s * dln1_scale;
        grads->ln1_bias += s * dln1_bias;
        grads->fc1_w += s * da1.transpose() * c.flat;
        grads->fc1_b += s * da1;
    }
    MatX dflat = (p.fc1_w.transpose() * da1.transpose()).transpose();

    const int last_c = c.blocks.empty() ? 1 : p.specs.back().out_channels;
    MatX dmap = Eigen::Map<const MatX>(dflat.data(), last_c, dflat.size() / last_c);
    for (int i = static_cast<int>(p.blocks.size()) - 1; i >= 0; --i)
        dmap = block_backward_core(dmap, c.blocks[static_cast<std::size_t>(i)],
                                   p.blocks[static_cast<std::size_t>(i)],
                                   p.specs[static_cast<std::size_t>(i)], cfg,
                                   grads ? &grads->blocks[static_cast<std::size_t>(i)] : nullptr,
                                   scale, gmode, diag);
    return Eigen::Map<const MatX>(dmap.data(), p.input_s, p.input_d);
}

}  // namespace

FeatureMap conv_block_forward(const FeatureMap& x, const ConvBlockParams& params,
                              const ConvBlockSpec& spec, const RegressorConfig& cfg) {
    FeatureMap out;
    int oh = 0, ow = 0;
    out.data = block_forward_core(x, params, spec, cfg, nullptr, &oh, &ow);
    out.h = oh;
    out.w = ow;
    return out;
}

RegressorOutput regressor_forward(const MatX& Z, int sex, const RegressorParams& p,
                                  const RegressorConfig& cfg, RunMode mode, Rng* dropout_rng) {
    const ForwardCache c = forward_cached(Z, sex, p, cfg, mode, dropout_rng);
    RegressorOutput out;
    out.y_hat = c.y_hat;
    if (p.has_var_head()) out.sigma2 = std::exp(c.logvar);
    return out;
}

MatX input_gradient(const MatX& Z, int sex, const RegressorParams& p, const RegressorConfig& cfg,
                    GradientMode mode, GuidedDiag* diag) {
    const ForwardCache c = forward_cached(Z, sex, p, cfg, RunMode::eval, nullptr);
    return backward_from_output(c, p, cfg, 1.0, 0.0, nullptr, 1.0, mode, diag);
}

RegressorParams regressor_loss_gradients(const MatX& Z, int sex, double age, const RegressorParams& p,
                                         const RegressorConfig& cfg) {
    RegressorParams grads = RegressorParams::zeros_like(p);
    const ForwardCache c = forward_cached(Z, sex, p, cfg, RunMode::eval, nullptr);
    double dy = 0, dlogvar = 0;
    if (cfg.loss == LossKind::mse) {
        dy = 2.0 * (c.y_hat - age);
    } else {
        const double sigma2 = std::exp(c.logvar);
        const double r = age - c.y_hat;
        dy = -r / sigma2;
        dlogvar = 0.5 - r * r / (2.0 * sigma2);
    }
    (void)backward_from_output(c, p, cfg, dy, dlogvar, &grads, 1.0, GradientMode::standard, nullptr);
    return grads;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double mse_loss(const VecX& preds, const VecX& targets) {
    if (preds.size() != targets.size()) throw std::invalid_argument("mse_loss: length mismatch");
    if (preds.size() == 0) throw std::invalid_argument("mse_loss: empty batch");
    return (targets - preds).squaredNorm() / static_cast<double>(preds.size());
}

double nll_loss(const VecX& mu, const VecX& sigma2, const VecX& targets) {
    if (mu.size() != targets.size() || sigma2.size() != targets.size())
        throw std::invalid_argument("nll_loss: length mismatch");
    if (mu.size() == 0) throw std::invalid_argument("nll_loss: empty batch");
    double total = 0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        if (!(sigma2(i) > 0)) throw std::invalid_argument("nll_loss: variance must be positive");
        const double r = targets(i) - mu(i);
        total += r * r / (2.0 * sigma2(i)) + 0.5 * std::log(2.0 * M_PI * sigma2(i));
    }
    return total / static_cast<double>(mu.size());
}

// ---------------------------------------------------------------------------
// Training / prediction
// ---------------------------------------------------------------------------

namespace {

double validation_mae(const std::vector<LabeledFeature>& val, const RegressorParams& p,
                      const RegressorConfig& cfg) {
    double total = 0;
    for (const auto& f : val) {
        const RegressorOutput out = regressor_forward(f.Z, f.sex, p, cfg, RunMode::eval);
        total += std::abs(out.y_hat - f.age);
    }
    return total / static_cast<double>(val.size());
}

}  // namespace

RegressorTrainResult train_regressor(const std::vector<LabeledFeature>& train,
                                     const std::vector<LabeledFeature>& val,
                                     const RegressorConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("train_regressor: empty training split");
    if (val.empty()) throw std::invalid_argument("train_regressor: empty validation split");

    const int S = static_cast<int>(train.front().Z.rows());
    const int d = static_cast<int>(train.front().Z.cols());
    RegressorTrainResult result;
    result.params = RegressorParams::init(cfg, S, d);
    RegressorParams grads = RegressorParams::zeros_like(result.params);

    std::vector<MatX*> param_ptrs, grad_ptrs_mut;
    regressor_visit(result.params, [&param_ptrs](const std::string&, MatX& t) { param_ptrs.push_back(&t); });
    regressor_visit(grads, [&grad_ptrs_mut](const std::string&, MatX& t) { grad_ptrs_mut.push_back(&t); });
    std::vector<const MatX*> grad_ptrs(grad_ptrs_mut.begin(), grad_ptrs_mut.end());

    Adam opt(cfg.lr);
    Rng order_rng(mix_seed(cfg.seed, 0x524547424154ULL));
    Rng dropout_rng(mix_seed(cfg.seed, 0x52454744524fULL));
    const int n = static_cast<int>(train.size());

    RegressorParams best = result.params;
    double best_mae = std::numeric_limits<double>::infinity();
    int best_epoch = 0, wait = 0, epoch = 0;

    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<int> order = order_rng.permutation(n);
        double epoch_loss = 0;
        int done = 0;
        while (done < n) {
            const int bs = std::min(cfg.batch_size, n - done);
            grads.set_zero();
            for (int b = 0; b < bs; ++b) {
                const auto& ex = train[static_cast<std::size_t>(order[static_cast<std::size_t>(done + b)])];
                const ForwardCache c =
                    forward_cached(ex.Z, ex.sex, result.params, cfg, RunMode::train, &dropout_rng);
                double dy = 0, dlogvar = 0;
                if (cfg.loss == LossKind::mse) {
                    const double r = c.y_hat - ex.age;
                    epoch_loss += r * r;
                    dy = 2.0 * r / bs;
                } else {
                    const double sigma2 = std::exp(c.logvar);
                    const double r = ex.age - c.y_hat;
                    epoch_loss += r * r / (2.0 * sigma2) + 0.5 * std::log(2.0 * M_PI * sigma2);
                    dy = -r / sigma2 / bs;
                    dlogvar = (0.5 - r * r / (2.0 * sigma2)) / bs;
                }
                (void)backward_from_output(c, result.params, cfg, dy, dlogvar, &grads, 1.0,
                                           GradientMode::standard, nullptr);
            }
            opt.step(param_ptrs, grad_ptrs);
            done += bs;
        }
        epoch_loss /= n;
        const double val_mae = validation_mae(val, result.params, cfg);
        if (!std::isfinite(epoch_loss) || !std::isfinite(val_mae))
            throw DivergenceError("train_regressor: non-finite loss at epoch " + std::to_string(epoch),
                                  epoch);
        result.report.epochs.push_back({epoch, epoch_loss, val_mae});

        if (val_mae < best_mae) {
            best_mae = val_mae;
            best = result.params;
            best_epoch = epoch;
            wait = 0;
        } else {
            ++wait;
            if (wait > cfg.patience) break;
        }
    }
    result.report.best_epoch = best_epoch;
    result.report.stopped_epoch = std::min(epoch, cfg.max_epochs);
    result.params = std::move(best);
    return result;
}

Prediction predict(const LabeledFeature& feature, const RegressorParams& p, const RegressorConfig& cfg) {
    const RegressorOutput out = regressor_forward(feature.Z, feature.sex, p, cfg, RunMode::eval);
    Prediction pred;
    pred.subject_id = feature.subject_id;
    pred.age = feature.age;
    pred.sex = feature.sex;
    pred.predicted_age = out.y_hat;
    pred.bag = out.y_hat - feature.age;
    pred.sigma2 = out.sigma2;
    return pred;
}

Prediction predict(const Volume& volume, const ViTParams& vit, const RegressorParams& p,
                   const RegressorConfig& cfg) {
    const EmbeddingMatrix em = build_feature_map(volume, vit);
    return predict({em.subject_id, em.Z, em.age, em.sex}, p, cfg);
}

}  // namespace brainrot
