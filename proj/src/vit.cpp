#include "brainrot/vit.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "brainrot/errors.hpp"
#include "brainrot/nn.hpp"
#include "brainrot/rng.hpp"

namespace brainrot {

namespace {

Scalar gelu(Scalar x) { return act_value(Activation::gelu, x); }
Scalar gelu_slope(Scalar x) { return act_slope(Activation::gelu, x); }

}  // namespace

// ---------------------------------------------------------------------------
// Config / classes
// ---------------------------------------------------------------------------

void ViTConfig::validate() const {
    if (patch < 1) throw ConfigError("vit: patch size must be >= 1");
    if (image_h % patch != 0 || image_w % patch != 0)
        throw ConfigError("vit: image dims must be divisible by the patch size");
    if (embed_dim < 1 || embed_dim % heads != 0)
        throw ConfigError("vit: embed_dim must be a positive multiple of heads");
    if (bin_width < 1) throw ConfigError("vit: bin_width must be a positive integer");
    if (epochs < 1) throw ConfigError("vit: epochs must be >= 1");
    if (slices_per_volume < 1) throw ConfigError("vit: slices_per_volume must be >= 1");
    if (batch_size < 1) throw ConfigError("vit: batch_size must be >= 1");
    if (mlp_ratio <= 0) throw ConfigError("vit: mlp_ratio must be positive");
    if (!(lr > 0)) throw ConfigError("vit: lr must be positive");
}

AgeSexClass age_sex_class(double age, int sex, int bin_width) {
    if (!(age >= 0)) throw std::invalid_argument("age_sex_class: age must be non-negative");
    if (sex != 0 && sex != 1) throw std::invalid_argument("age_sex_class: sex must be 0 or 1");
    if (bin_width < 1) throw std::invalid_argument("age_sex_class: bin_width must be >= 1");
    AgeSexClass c;
    const int bin = static_cast<int>(std::floor(age / bin_width));
    c.bin_lo = bin * bin_width;
    c.sex = sex;
    c.class_id = 2 * bin + sex;
    c.label = std::to_string(c.bin_lo) + "-" + std::to_string(c.bin_lo + bin_width - 1) + "|" +
              (sex ? "F" : "M");
    return c;
}

ClassSet ClassSet::from_training(const std::vector<std::pair<double, int>>& age_sex, int bin_width) {
    ClassSet set;
    set.bin_width = bin_width;
    std::set<int> bins;
    for (const auto& [age, sex] : age_sex) {
        (void)sex;
        if (!(age >= 0)) throw std::invalid_argument("ClassSet: age must be non-negative");
        bins.insert(static_cast<int>(std::floor(age / bin_width)) * bin_width);
    }
    for (int lo : bins)
        for (int sex = 0; sex < 2; ++sex) set.entries.emplace_back(lo, sex);
    return set;
}

int ClassSet::index_of(double age, int sex) const {
    const AgeSexClass c = age_sex_class(age, sex, bin_width);
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i] == std::make_pair(c.bin_lo, c.sex)) return static_cast<int>(i);
    return -1;
}

std::string ClassSet::label_of(int index) const {
    const auto& [lo, sex] = entries.at(static_cast<std::size_t>(index));
    return std::to_string(lo) + "-" + std::to_string(lo + bin_width - 1) + "|" + (sex ? "F" : "M");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

ViTParams ViTParams::init(const ViTConfig& cfg, int num_classes) {
    cfg.validate();
    if (num_classes < 1) throw ConfigError("vit: need at least one class");
    ViTParams p;
    p.patch = cfg.patch;
    p.heads = cfg.heads;
    p.image_h = cfg.image_h;
    p.image_w = cfg.image_w;
    const int d = cfg.embed_dim;
    const int m = cfg.mlp_hidden();
    const int np = cfg.n_patches();
    p.patch_weight.resize(cfg.patch * cfg.patch, d);
    p.patch_bias = MatX::Zero(1, d);
    p.pos_embed.resize(1 + np, d);
    p.cls_token.resize(1, d);
    p.layers.resize(static_cast<std::size_t>(cfg.depth));
    for (auto& l : p.layers) {
        l.ln1_scale = MatX::Ones(1, d);
        l.ln1_bias = MatX::Zero(1, d);
        l.wq.resize(d, d);
        l.wk.resize(d, d);
        l.wv.resize(d, d);
        l.wo.resize(d, d);
        l.bq = MatX::Zero(1, d);
        l.bk = MatX::Zero(1, d);
        l.bv = MatX::Zero(1, d);
        l.bo = MatX::Zero(1, d);
        l.ln2_scale = MatX::Ones(1, d);
        l.ln2_bias = MatX::Zero(1, d);
        l.w1.resize(d, m);
        l.b1 = MatX::Zero(1, m);
        l.w2.resize(m, d);
        l.b2 = MatX::Zero(1, d);
    }
    p.final_ln_scale = MatX::Ones(1, d);
    p.final_ln_bias = MatX::Zero(1, d);
    p.head_weight.resize(d, num_classes);
    p.head_bias = MatX::Zero(1, num_classes);

    Rng rng(mix_seed(cfg.seed, 0x564954ULL));  // "VIT"
    auto fill = [&rng](MatX& w) {
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal(0.0, 0.02);
    };
    fill(p.patch_weight);
    fill(p.pos_embed);
    fill(p.cls_token);
    for (auto& l : p.layers) {
        fill(l.wq);
        fill(l.wk);
        fill(l.wv);
        fill(l.wo);
        fill(l.w1);
        fill(l.w2);
    }
    fill(p.head_weight);
    return p;
}

ViTParams ViTParams::zeros_like(const ViTParams& p) {
    ViTParams z = p;
    z.set_zero();
    return z;
}

void ViTParams::set_zero() {
    vit_visit(*this, [](const std::string&, MatX& t) { t.setZero(); });
}

std::vector<NamedTensor> vit_to_tensors(const ViTParams& p) {
    std::vector<NamedTensor> out;
    MatX meta(1, 5);
    meta << p.patch, p.heads, p.image_h, p.image_w, p.frozen ? 1 : 0;
    out.push_back(NamedTensor::vector("meta", meta));
    vit_visit(p, [&out](const std::string& name, const MatX& t) {
        out.push_back(t.rows() == 1 ? NamedTensor::vector(name, t) : NamedTensor::matrix(name, t));
    });
    return out;
}

ViTParams vit_from_tensors(const std::vector<NamedTensor>& tensors) {
    const MatX& meta = find_tensor(tensors, "meta").data;
    if (meta.size() != 5) throw FormatError("vit archive: bad meta tensor");
    ViTParams p;
    p.patch = static_cast<int>(meta(0, 0));
    p.heads = static_cast<int>(meta(0, 1));
    p.image_h = static_cast<int>(meta(0, 2));
    p.image_w = static_cast<int>(meta(0, 3));
    p.frozen = meta(0, 4) != 0;
    int depth = 0;
    for (const auto& t : tensors)
        if (t.name.rfind("layers.", 0) == 0)
            depth = std::max(depth, std::stoi(t.name.substr(7, t.name.find('.', 7) - 7)) + 1);
    p.layers.resize(static_cast<std::size_t>(depth));
    vit_visit(p, [&tensors](const std::string& name, MatX& t) { t = find_tensor(tensors, name).data; });
    return p;
}

std::uint64_t vit_checksum(const ViTParams& p) { return archive_checksum(vit_to_tensors(p)); }

void save_vit(const std::filesystem::path& path, const ViTParams& p) {
    save_tensor_archive(path, vit_to_tensors(p));
}

ViTParams load_vit(const std::filesystem::path& path) {
    return vit_from_tensors(load_tensor_archive(path));
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

MatX patchify(const MatX& slice, int patch) {
    const int h = static_cast<int>(slice.rows());
    const int w = static_cast<int>(slice.cols());
    if (patch < 1 || h % patch != 0 || w % patch != 0)
        throw std::invalid_argument("patchify: dims must be divisible by the patch size");
    const int ph = h / patch, pw = w / patch;
    MatX out(ph * pw, patch * patch);
    for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px)
            for (int dy = 0; dy < patch; ++dy)
                out.row(py * pw + px).segment(dy * patch, patch) =
                    slice.row(py * patch + dy).segment(px * patch, patch);
    return out;
}

MatX unpatchify(const MatX& patches, int h, int w, int patch) {
    if (patch < 1 || h % patch != 0 || w % patch != 0 ||
        patches.rows() != (h / patch) * (w / patch) || patches.cols() != patch * patch)
        throw std::invalid_argument("unpatchify: inconsistent shapes");
    const int pw = w / patch;
    MatX out(h, w);
    for (int i = 0; i < static_cast<int>(patches.rows()); ++i) {
        const int py = i / pw, px = i % pw;
        for (int dy = 0; dy < patch; ++dy)
            out.row(py * patch + dy).segment(px * patch, patch) = patches.row(i).segment(dy * patch, patch);
    }
    return out;
}

MatX embed_tokens(const MatX& slice, const ViTParams& p) {
    if (slice.rows() != p.image_h || slice.cols() != p.image_w)
        throw std::invalid_argument("embed_tokens: slice shape does not match parameters");
    const MatX patches = patchify(slice, p.patch);
    MatX tokens(1 + patches.rows(), p.embed_dim());
    tokens.row(0) = p.cls_token.row(0);
    tokens.bottomRows(patches.rows()) =
        ((patches * p.patch_weight).rowwise() + p.patch_bias.row(0)).eval();
    tokens += p.pos_embed;
    return tokens;
}

namespace {

struct LayerCache {
    MatX x_in;
    LayerNormCache ln1;
    MatX xn1;
    MatX q, k, v;
    std::vector<MatX> attn;  // per head, N x N
    MatX concat;             // attention output before wo
    MatX x_mid;              // x_in + attention
    LayerNormCache ln2;
    MatX xn2;
    MatX ffn_pre, ffn_act;
};

// One transformer layer: z <- z + MSA(LN(z)); z <- z + FFN(LN(z)).
MatX layer_forward(const MatX& x, const ViTLayerParams& l, int heads, LayerCache* cache) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const Eigen::Index dh = d / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    LayerNormCache ln1;
    const MatX xn1 = layer_norm(x, l.ln1_scale, l.ln1_bias, &ln1);
    const MatX q = (xn1 * l.wq).rowwise() + l.bq.row(0);
    const MatX k = (xn1 * l.wk).rowwise() + l.bk.row(0);
    const MatX v = (xn1 * l.wv).rowwise() + l.bv.row(0);

    MatX concat(n, d);
    std::vector<MatX> attn(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const auto qh = q.middleCols(h * dh, dh);
        const auto kh = k.middleCols(h * dh, dh);
        const auto vh = v.middleCols(h * dh, dh);
        MatX a = qh * kh.transpose() * inv_sqrt_dh;
        softmax_rows_inplace(a);
        concat.middleCols(h * dh, dh) = a * vh;
        attn[static_cast<std::size_t>(h)] = std::move(a);
    }
    const MatX x_mid = x + ((concat * l.wo).rowwise() + l.bo.row(0)).eval();

    LayerNormCache ln2;
    const MatX xn2 = layer_norm(x_mid, l.ln2_scale, l.ln2_bias, &ln2);
    MatX ffn_pre = (xn2 * l.w1).rowwise() + l.b1.row(0);
    MatX ffn_act = ffn_pre.unaryExpr([](Scalar t) { return gelu(t); });
    MatX out = x_mid + ((ffn_act * l.w2).rowwise() + l.b2.row(0)).eval();

    if (cache) {
        cache->x_in = x;
        cache->ln1 = std::move(ln1);
        cache->xn1 = xn1;
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->attn = std::move(attn);
        cache->concat = std::move(concat);
        cache->x_mid = x_mid;
        cache->ln2 = std::move(ln2);
        cache->xn2 = xn2;
        cache->ffn_pre = std::move(ffn_pre);
        cache->ffn_act = std::move(ffn_act);
    }
    return out;
}

// Gradient of one layer; accumulates into `g` scaled by `scale`.
MatX layer_backward(const MatX& dout, const LayerCache& c, const ViTLayerParams& l,
                    ViTLayerParams& g, int heads, double scale) {
    const Eigen::Index d = c.x_in.cols();
    const Eigen::Index dh = d / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const Scalar s = static_cast<Scalar>(scale);

    // FFN branch
    MatX dffn_out = dout;
    g.w2 += s * c.ffn_act.transpose() * dffn_out;
    g.b2.row(0) += s * dffn_out.colwise().sum();
    MatX dffn_act = dffn_out * l.w2.transpose();
    MatX dffn_pre =
        dffn_act.cwiseProduct(c.ffn_pre.unaryExpr([](Scalar t) { return gelu_slope(t); }));
    g.w1 += s * c.xn2.transpose() * dffn_pre;
    g.b1.row(0) += s * dffn_pre.colwise().sum();
    MatX dxn2 = dffn_pre * l.w1.transpose();

    MatX dln2_scale = MatX::Zero(1, d), dln2_bias = MatX::Zero(1, d);
    MatX dx_mid = dout + layer_norm_backward(dxn2, c.ln2, l.ln2_scale, dln2_scale, dln2_bias);
    g.ln2_scale += s * dln2_scale;
    g.ln2_bias += s * dln2_bias;

    // Attention branch
    MatX dattn_out = dx_mid;
    g.wo += s * c.concat.transpose() * dattn_out;
    g.bo.row(0) += s * dattn_out.colwise().sum();
    MatX dconcat = dattn_out * l.wo.transpose();

    MatX dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
    for (int h = 0; h < heads; ++h) {
        const auto qh = c.q.middleCols(h * dh, dh);
        const auto kh = c.k.middleCols(h * dh, dh);
        const auto vh = c.v.middleCols(h * dh, dh);
        const MatX& a = c.attn[static_cast<std::size_t>(h)];
        const auto doh = dconcat.middleCols(h * dh, dh);
        MatX da = doh * vh.transpose();
        dv.middleCols(h * dh, dh) = a.transpose() * doh;
        MatX dlogits = softmax_rows_backward(a, da);
        dq.middleCols(h * dh, dh) = dlogits * kh * inv_sqrt_dh;
        dk.middleCols(h * dh, dh) = dlogits.transpose() * qh * inv_sqrt_dh;
    }
    g.wq += s * c.xn1.transpose() * dq;
    g.bq.row(0) += s * dq.colwise().sum();
    g.wk += s * c.xn1.transpose() * dk;
    g.bk.row(0) += s * dk.colwise().sum();
    g.wv += s * c.xn1.transpose() * dv;
    g.bv.row(0) += s * dv.colwise().sum();
    MatX dxn1 = dq * l.wq.transpose() + dk * l.wk.transpose() + dv * l.wv.transpose();

    MatX dln1_scale = MatX::Zero(1, d), dln1_bias = MatX::Zero(1, d);
    MatX dx = dx_mid + layer_norm_backward(dxn1, c.ln1, l.ln1_scale, dln1_scale, dln1_bias);
    g.ln1_scale += s * dln1_scale;
    g.ln1_bias += s * dln1_bias;
    return dx;
}

}  // namespace

MatX encoder_forward(const MatX& tokens, const ViTParams& p) {
    if (tokens.cols() != p.embed_dim())
        throw std::invalid_argument("encoder_forward: token width does not match parameters");
    MatX x = tokens;
    for (const auto& l : p.layers) x = layer_forward(x, l, p.heads, nullptr);
    return x;
}

EncodeResult encode_slice_full(const MatX& slice, const ViTParams& p) {
    MatX x = embed_tokens(slice, p);
    EncodeResult out;
    const int depth = p.depth();
    for (int i = 0; i < depth; ++i) {
        if (i + 1 == depth) {
            LayerCache cache;
            x = layer_forward(x, p.layers[static_cast<std::size_t>(i)], p.heads, &cache);
            out.cls_attention_heads.resize(p.heads, x.rows());
            for (int h = 0; h < p.heads; ++h)
                out.cls_attention_heads.row(h) = cache.attn[static_cast<std::size_t>(h)].row(0);
        } else {
            x = layer_forward(x, p.layers[static_cast<std::size_t>(i)], p.heads, nullptr);
        }
    }
    const MatX normed = layer_norm(x, p.final_ln_scale, p.final_ln_bias);
    out.embedding = normed.row(0).transpose();
    out.patch_tokens = normed.bottomRows(normed.rows() - 1);
    return out;
}

VecX encode_slice(const MatX& slice, const ViTParams& p) {
    return encode_slice_full(slice, p).embedding;
}

VecX cls_attention(const MatX& slice, const ViTParams& p) {
    if (p.depth() == 0) throw std::invalid_argument("cls_attention: encoder has no layers");
    const EncodeResult r = encode_slice_full(slice, p);
    VecX mean = r.cls_attention_heads.colwise().mean().transpose();
    return mean.tail(mean.size() - 1);  // drop the CLS->CLS entry
}

EmbeddingMatrix build_feature_map(const SliceStack& stack, double age, int sex, const ViTParams& p) {
    EmbeddingMatrix em;
    em.subject_id = stack.subject_id;
    em.age = age;
    em.sex = sex;
    em.Z.resize(static_cast<Eigen::Index>(stack.slices.size()), p.embed_dim());
    for (std::size_t i = 0; i < stack.slices.size(); ++i)
        em.Z.row(static_cast<Eigen::Index>(i)) = encode_slice(stack.slices[i], p).transpose();
    return em;
}

EmbeddingMatrix build_feature_map(const Volume& volume, const ViTParams& p) {
    return build_feature_map(extract_slices(volume), volume.age, volume.sex, p);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

double cross_entropy(const MatX& logits, const MatX& one_hot_targets) {
    if (logits.rows() != one_hot_targets.rows() || logits.cols() != one_hot_targets.cols())
        throw std::invalid_argument("cross_entropy: shape mismatch");
    if (logits.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
    double total = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const VecX ls = log_softmax(logits.row(r).transpose());
        total -= one_hot_targets.row(r).dot(ls.transpose());
    }
    return total / static_cast<double>(logits.rows());
}

double cross_entropy(const MatX& logits, const std::vector<int>& targets) {
    MatX one_hot = MatX::Zero(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r)
        one_hot(r, targets.at(static_cast<std::size_t>(r))) = 1;
    return cross_entropy(logits, one_hot);
}

double cross_entropy_with_grad(const MatX& logits, const std::vector<int>& targets, MatX& dlogits) {
    if (logits.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
    dlogits.resize(logits.rows(), logits.cols());
    double total = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const VecX ls = log_softmax(logits.row(r).transpose());
        const int t = targets.at(static_cast<std::size_t>(r));
        total -= ls(t);
        dlogits.row(r) = ls.array().exp().transpose();
        dlogits(r, t) -= 1;
    }
    dlogits /= static_cast<double>(logits.rows());
    return total / static_cast<double>(logits.rows());
}

// ---------------------------------------------------------------------------
// Backward through the whole encoder for one example.
// ---------------------------------------------------------------------------

double vit_example_backward(const MatX& slice, int target, const ViTParams& p, ViTParams& grads,
                            double grad_scale, VecX* logits_out) {
    const MatX patches = patchify(slice, p.patch);
    MatX tokens(1 + patches.rows(), p.embed_dim());
    tokens.row(0) = p.cls_token.row(0);
    tokens.bottomRows(patches.rows()) =
        ((patches * p.patch_weight).rowwise() + p.patch_bias.row(0)).eval();
    tokens += p.pos_embed;

    std::vector<LayerCache> caches(p.layers.size());
    MatX x = tokens;
    for (std::size_t i = 0; i < p.layers.size(); ++i)
        x = layer_forward(x, p.layers[i], p.heads, &caches[i]);

    LayerNormCache lnf;
    const MatX normed = layer_norm(x, p.final_ln_scale, p.final_ln_bias, &lnf);
    const MatX logits = (normed.row(0) * p.head_weight) + p.head_bias.row(0);
    if (logits_out) *logits_out = logits.row(0).transpose();

    MatX dlogits;
    std::vector<int> tvec{target};
    const double loss = cross_entropy_with_grad(logits, tvec, dlogits);

    const Scalar s = static_cast<Scalar>(grad_scale);
    grads.head_weight += s * normed.row(0).transpose() * dlogits.row(0);
    grads.head_bias += s * dlogits;
    MatX dfinal = MatX::Zero(normed.rows(), normed.cols());
    dfinal.row(0) = dlogits.row(0) * p.head_weight.transpose();

    MatX dlnf_scale = MatX::Zero(1, normed.cols()), dlnf_bias = MatX::Zero(1, normed.cols());
    MatX dx = layer_norm_backward(dfinal, lnf, p.final_ln_scale, dlnf_scale, dlnf_bias);
    grads.final_ln_scale += s * dlnf_scale;
    grads.final_ln_bias += s * dlnf_bias;

    for (int i = static_cast<int>(p.layers.size()) - 1; i >= 0; --i)
        dx = layer_backward(dx, caches[static_cast<std::size_t>(i)], p.layers[static_cast<std::size_t>(i)],
                            grads.layers[static_cast<std::size_t>(i)], p.heads, grad_scale);

    grads.pos_embed += s * dx;
    grads.cls_token += s * dx.row(0);
    grads.patch_weight += s * patches.transpose() * dx.bottomRows(dx.rows() - 1);
    grads.patch_bias.row(0) += s * dx.bottomRows(dx.rows() - 1).colwise().sum();
    return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

SliceDataset build_slice_dataset(const std::vector<Volume>& subjects, const ViTConfig& cfg) {
    SliceDataset ds;
    std::vector<std::pair<double, int>> age_sex;
    age_sex.reserve(subjects.size());
    for (const auto& v : subjects) age_sex.emplace_back(v.age, v.sex);
    ds.classes = ClassSet::from_training(age_sex, cfg.bin_width);
    for (const auto& v : subjects) {
        const SliceStack stack = extract_slices(v);
        const EvenSample sample = sample_even_slices(stack, std::min(cfg.slices_per_volume, v.S));
        const int cls = ds.classes.index_of(v.age, v.sex);
        for (const auto& s : sample.slices) ds.examples.push_back({s, cls});
    }
    return ds;
}

ViTTrainResult train_vit(const SliceDataset& dataset, const ViTConfig& cfg) {
    cfg.validate();
    if (dataset.examples.empty()) throw std::invalid_argument("train_vit: empty training split");
    if (dataset.classes.size() < 2) throw std::invalid_argument("train_vit: fewer than 2 classes");

    ViTConfig effective = cfg;
    effective.image_h = static_cast<int>(dataset.examples.front().slice.rows());
    effective.image_w = static_cast<int>(dataset.examples.front().slice.cols());
    effective.validate();

    ViTTrainResult result;
    result.classes = dataset.classes;
    result.params = ViTParams::init(effective, dataset.classes.size());
    ViTParams grads = ViTParams::zeros_like(result.params);

    std::vector<MatX*> param_ptrs, grad_ptrs_mut;
    vit_visit(result.params, [&param_ptrs](const std::string&, MatX& t) { param_ptrs.push_back(&t); });
    vit_visit(grads, [&grad_ptrs_mut](const std::string&, MatX& t) { grad_ptrs_mut.push_back(&t); });
    std::vector<const MatX*> grad_ptrs(grad_ptrs_mut.begin(), grad_ptrs_mut.end());

    Adam opt(effective.lr);
    Rng order_rng(mix_seed(effective.seed, 0x564954424154ULL));  // batch order stream
    const int n = static_cast<int>(dataset.examples.size());

    for (int epoch = 1; epoch <= effective.epochs; ++epoch) {
        std::vector<int> order = order_rng.permutation(n);
        double epoch_loss = 0;
        int correct = 0;
        int done = 0;
        while (done < n) {
            const int bs = std::min(effective.batch_size, n - done);
            grads.set_zero();
            for (int b = 0; b < bs; ++b) {
                const auto& ex = dataset.examples[static_cast<std::size_t>(order[static_cast<std::size_t>(done + b)])];
                VecX logits;
                epoch_loss += vit_example_backward(ex.slice, ex.class_id, result.params, grads,
                                                   1.0 / bs, &logits);
                Eigen::Index argmax;
                logits.maxCoeff(&argmax);
                if (static_cast<int>(argmax) == ex.class_id) ++correct;
            }
            opt.step(param_ptrs, grad_ptrs);
            done += bs;
        }
        result.log.push_back({epoch, epoch_loss / n, static_cast<double>(correct) / n});
    }
    result.params.frozen = true;  // classification head detached from further use
    return result;
}

}  // namespace brainrot
