#include <doctest.h>

#include <cmath>

#include "brainrot/errors.hpp"
#include "brainrot/nn.hpp"
#include "brainrot/vit.hpp"
#include "support.hpp"

using namespace brainrot;
using testsupport::random_matrix;

namespace {

ViTConfig toy_config(int d = 16, int depth = 2, int heads = 2, int image = 8, int patch = 4) {
    ViTConfig cfg;
    cfg.patch = patch;
    cfg.embed_dim = d;
    cfg.depth = depth;
    cfg.heads = heads;
    cfg.mlp_ratio = 2.0;
    cfg.image_h = image;
    cfg.image_w = image;
    cfg.batch_size = 4;
    cfg.seed = 17;
    return cfg;
}

// Straight-line evaluation of one pre-LN transformer layer, written
// independently of the library (explicit loops, no shared helpers).
MatX naive_layer(const MatX& x, const ViTLayerParams& l, int heads) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    const int dh = d / heads;
    auto naive_ln = [d](const MatX& in, const MatX& scale, const MatX& bias) {
        MatX out(in.rows(), in.cols());
        for (int r = 0; r < in.rows(); ++r) {
            double mean = 0;
            for (int c = 0; c < d; ++c) mean += in(r, c);
            mean /= d;
            double var = 0;
            for (int c = 0; c < d; ++c) var += (in(r, c) - mean) * (in(r, c) - mean);
            var /= d;
            for (int c = 0; c < d; ++c)
                out(r, c) = (in(r, c) - mean) / std::sqrt(var + 1e-5) * scale(0, c) + bias(0, c);
        }
        return out;
    };

    const MatX xn1 = naive_ln(x, l.ln1_scale, l.ln1_bias);
    MatX q(n, d), k(n, d), v(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) {
            double sq = l.bq(0, c), sk = l.bk(0, c), sv = l.bv(0, c);
            for (int t = 0; t < d; ++t) {
                sq += xn1(r, t) * l.wq(t, c);
                sk += xn1(r, t) * l.wk(t, c);
                sv += xn1(r, t) * l.wv(t, c);
            }
            q(r, c) = sq;
            k(r, c) = sk;
            v(r, c) = sv;
        }
    MatX concat(n, d);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> scores(n);
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double s = 0;
                for (int t = 0; t < dh; ++t) s += q(i, h * dh + t) * k(j, h * dh + t);
                scores[j] = s / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, scores[j]);
            }
            double total = 0;
            for (int j = 0; j < n; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                total += scores[j];
            }
            for (int t = 0; t < dh; ++t) {
                double s = 0;
                for (int j = 0; j < n; ++j) s += scores[j] / total * v(j, h * dh + t);
                concat(i, h * dh + t) = s;
            }
        }
    }
    MatX x_mid = x;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) {
            double s = l.bo(0, c);
            for (int t = 0; t < d; ++t) s += concat(r, t) * l.wo(t, c);
            x_mid(r, c) += s;
        }

    const MatX xn2 = naive_ln(x_mid, l.ln2_scale, l.ln2_bias);
    const int m = static_cast<int>(l.w1.cols());
    MatX out = x_mid;
    for (int r = 0; r < n; ++r) {
        std::vector<double> hidden(m);
        for (int c = 0; c < m; ++c) {
            double s = l.b1(0, c);
            for (int t = 0; t < d; ++t) s += xn2(r, t) * l.w1(t, c);
            hidden[c] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
        }
        for (int c = 0; c < d; ++c) {
            double s = l.b2(0, c);
            for (int t = 0; t < m; ++t) s += hidden[t] * l.w2(t, c);
            out(r, c) += s;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("age_sex_class composes decade bins with sex") {
    CHECK(age_sex_class(54, 0, 10).label == "50-59|M");
    CHECK(age_sex_class(39.999, 1, 10).label == "30-39|F");
    CHECK(age_sex_class(54, 0, 20).label == "40-59|M");
    CHECK(age_sex_class(54, 0, 10).class_id == age_sex_class(59.2, 0, 10).class_id);
    CHECK(age_sex_class(54, 0, 10).class_id != age_sex_class(54, 1, 10).class_id);
    CHECK_THROWS_AS((void)age_sex_class(-1, 0, 10), std::invalid_argument);
}

TEST_CASE("class set is the product of observed bins and both sexes") {
    const std::vector<std::pair<double, int>> cohort = {{21, 0}, {25, 0}, {47, 0}, {83, 0}};
    const ClassSet set = ClassSet::from_training(cohort, 10);
    CHECK(set.size() == 6);  // 3 bins x {M, F}, even though no females occur
    CHECK(set.index_of(21, 0) == 0);
    CHECK(set.index_of(29.9, 1) == 1);
    CHECK(set.index_of(47, 0) == 2);
    CHECK(set.index_of(83, 1) == 5);
    CHECK(set.index_of(35, 0) == -1);  // unobserved bin
    CHECK(set.label_of(0) == "20-29|M");
    CHECK(set.label_of(5) == "80-89|F");
}

TEST_CASE("class count over k bins is 2k") {
    for (int k = 1; k <= 6; ++k) {
        std::vector<std::pair<double, int>> cohort;
        for (int b = 0; b < k; ++b) cohort.push_back({10.0 * b + 3.0, b % 2});
        CHECK(ClassSet::from_training(cohort, 10).size() == 2 * k);
    }
}

TEST_CASE("patchify produces row-major patches that reassemble exactly") {
    SUBCASE("224/16 gives 196 patches of 256 values") {
        const MatX slice = MatX::Random(224, 224);
        const MatX patches = patchify(slice, 16);
        CHECK(patches.rows() == 196);
        CHECK(patches.cols() == 256);
        CHECK((unpatchify(patches, 224, 224, 16) - slice).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("single patch equals the flattened slice") {
        Rng rng(3);
        const MatX slice = random_matrix(rng, 16, 16);
        const MatX patches = patchify(slice, 16);
        REQUIRE(patches.rows() == 1);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) CHECK(patches(0, 16 * y + x) == slice(y, x));
    }
    SUBCASE("non-divisible dims throw") {
        CHECK_THROWS_AS((void)patchify(MatX::Zero(15, 16), 4), std::invalid_argument);
    }
}

TEST_CASE("encoder_forward at depth 0 is the identity") {
    ViTConfig cfg = toy_config(16, 0, 2);
    const ViTParams p = ViTParams::init(cfg, 3);
    Rng rng(5);
    const MatX tokens = random_matrix(rng, 5, 16);
    CHECK((encoder_forward(tokens, p) - tokens).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder_forward preserves token shape") {
    ViTConfig cfg = toy_config(16, 2, 2);
    const ViTParams p = ViTParams::init(cfg, 3);
    Rng rng(6);
    const MatX tokens = random_matrix(rng, 5, 16);
    const MatX out = encoder_forward(tokens, p);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 16);
    CHECK(out.allFinite());
}

TEST_CASE("token width mismatch is rejected") {
    const ViTParams p = ViTParams::init(toy_config(16, 1, 2), 3);
    CHECK_THROWS_AS((void)encoder_forward(MatX::Zero(5, 8), p), std::invalid_argument);
}

TEST_CASE("encoder layer matches a straight-line evaluation") {
    ViTConfig cfg = toy_config(8, 1, 2);
    const ViTParams p = ViTParams::init(cfg, 3);
    Rng rng(12);
    const MatX tokens = random_matrix(rng, 5, 8);
    const MatX ours = encoder_forward(tokens, p);
    const MatX naive = naive_layer(tokens, p.layers[0], 2);
    CHECK((ours - naive).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("encode_slice returns the default 768-wide embedding") {
    ViTConfig cfg;  // stock dims: patch 16, d 768
    cfg.depth = 1;
    cfg.heads = 12;
    cfg.image_h = 32;
    cfg.image_w = 32;
    cfg.seed = 2;
    CHECK(cfg.embed_dim == 768);
    const ViTParams p = ViTParams::init(cfg, 4);
    Rng rng(8);
    const MatX slice = random_matrix(rng, 32, 32);
    const VecX e = encode_slice(slice, p);
    CHECK(e.size() == 768);
    CHECK((encode_slice(slice, p) - e).cwiseAbs().maxCoeff() == 0.0);  // determinism
}

TEST_CASE("perturbing one patch changes the embedding") {
    ViTConfig cfg = toy_config();
    const ViTParams p = ViTParams::init(cfg, 4);
    Rng rng(9);
    const MatX slice = random_matrix(rng, 8, 8);
    MatX poked = slice;
    poked(5, 5) += 0.5;
    CHECK((encode_slice(slice, p) - encode_slice(poked, p)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("cross entropy closed forms") {
    SUBCASE("perfect one-hot prediction costs zero") {
        MatX logits(1, 3);
        logits << 1000.0, 0.0, 0.0;
        CHECK(cross_entropy(logits, std::vector<int>{0}) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("uniform logits over 4 classes cost ln 4") {
        MatX logits = MatX::Constant(1, 4, 0.7);
        CHECK(cross_entropy(logits, std::vector<int>{2}) ==
              doctest::Approx(std::log(4.0)).epsilon(1e-9));
    }
    SUBCASE("batch loss is the mean of the example losses") {
        Rng rng(4);
        MatX logits = random_matrix(rng, 2, 5);
        const double l0 = cross_entropy(logits.topRows(1), std::vector<int>{3});
        const double l1 = cross_entropy(logits.bottomRows(1), std::vector<int>{0});
        CHECK(cross_entropy(logits, std::vector<int>{3, 0}) ==
              doctest::Approx(0.5 * (l0 + l1)).epsilon(1e-12));
    }
    SUBCASE("one-hot overload agrees with index targets") {
        Rng rng(4);
        MatX logits = random_matrix(rng, 3, 4);
        MatX one_hot = MatX::Zero(3, 4);
        one_hot(0, 1) = one_hot(1, 3) = one_hot(2, 0) = 1;
        CHECK(cross_entropy(logits, one_hot) ==
              doctest::Approx(cross_entropy(logits, std::vector<int>{1, 3, 0})).epsilon(1e-12));
    }
}

TEST_CASE("analytic ViT gradients match central differences") {
    ViTConfig cfg = toy_config(16, 2, 2);
    ViTParams p = ViTParams::init(cfg, 4);
    Rng rng(33);
    const MatX slice = random_matrix(rng, 8, 8);
    const int target = 2;

    ViTParams grads = ViTParams::zeros_like(p);
    (void)vit_example_backward(slice, target, p, grads, 1.0);

    std::vector<std::pair<MatX*, const MatX*>> tensors;
    std::vector<MatX*> gptrs;
    vit_visit(grads, [&gptrs](const std::string&, MatX& t) { gptrs.push_back(&t); });
    std::size_t k = 0;
    vit_visit(p, [&tensors, &gptrs, &k](const std::string&, MatX& t) {
        tensors.emplace_back(&t, gptrs[k++]);
    });
    auto loss = [&]() {
        ViTParams sink = ViTParams::zeros_like(p);
        return vit_example_backward(slice, target, p, sink, 0.0);
    };
    CHECK(testsupport::max_grad_rel_err(tensors, loss) < 1e-3);
}

TEST_CASE("toy ViT training learns a separable 2-class problem") {
    // Single age bin, both sexes, strong asymmetry: classes = {bin x M, bin x F}.
    SynthConfig synth;
    synth.seed = 21;
    synth.count = 64;
    synth.S = 8;
    synth.H = 16;
    synth.W = 16;
    synth.age_min = 50;
    synth.age_max = 59;
    synth.noise_sigma = 0.02;
    synth.sex_asymmetry = 0.5;
    std::vector<Volume> subjects;
    for (int i = 0; i < synth.count; ++i) subjects.push_back(generate_subject(synth, i));

    ViTConfig cfg = toy_config(16, 2, 2, 16, 4);
    cfg.slices_per_volume = 4;
    cfg.epochs = 5;
    cfg.lr = 1e-3;
    const SliceDataset ds = build_slice_dataset(subjects, cfg);
    REQUIRE(ds.classes.size() == 2);

    const ViTTrainResult r = train_vit(ds, cfg);
    REQUIRE(r.log.size() == 5);
    CHECK(r.log.back().loss < r.log.front().loss);
    CHECK(r.log.back().accuracy > 0.5);
    CHECK(r.params.frozen);

    // determinism: a rerun yields the identical parameter checksum
    const ViTTrainResult r2 = train_vit(ds, cfg);
    CHECK(vit_checksum(r.params) == vit_checksum(r2.params));

    // non-degeneracy on the trained model: a one-patch perturbation moves the embedding
    const MatX& probe = ds.examples.front().slice;
    MatX poked = probe;
    poked.block(0, 0, 4, 4).array() += 0.25;
    CHECK((encode_slice(probe, r.params) - encode_slice(poked, r.params)).cwiseAbs().maxCoeff() >
          1e-9);
}

TEST_CASE("feature map has the stock 160x768 shape at default width") {
    SynthConfig synth;
    synth.seed = 6;
    synth.count = 1;
    synth.S = 160;
    synth.H = 32;
    synth.W = 32;
    synth.noise_sigma = 0.02;
    const Volume v = generate_subject(synth, 0);

    ViTConfig cfg;  // embed_dim 768, patch 16
    cfg.depth = 1;
    cfg.image_h = 32;
    cfg.image_w = 32;
    cfg.seed = 3;
    const ViTParams p = ViTParams::init(cfg, 4);
    const EmbeddingMatrix em = build_feature_map(v, p);
    CHECK(em.Z.rows() == 160);
    CHECK(em.Z.cols() == 768);
}

TEST_CASE("train_vit rejects degenerate datasets") {
    ViTConfig cfg = toy_config();
    SliceDataset empty;
    empty.classes.entries = {{20, 0}, {20, 1}};
    CHECK_THROWS_AS((void)train_vit(empty, cfg), std::invalid_argument);

    SliceDataset one_class;
    one_class.examples.push_back({MatX::Zero(8, 8), 0});
    one_class.classes.entries = {{20, 0}};
    CHECK_THROWS_AS((void)train_vit(one_class, cfg), std::invalid_argument);
}

TEST_CASE("build_feature_map emits one row per slice in sagittal order") {
    SynthConfig synth;
    synth.seed = 5;
    synth.count = 1;
    synth.S = 6;
    synth.H = 8;
    synth.W = 8;
    synth.noise_sigma = 0.05;
    Volume v = generate_subject(synth, 0);

    ViTConfig cfg = toy_config(16, 1, 2, 8, 4);
    const ViTParams p = ViTParams::init(cfg, 4);
    const EmbeddingMatrix em = build_feature_map(v, p);
    CHECK(em.Z.rows() == 6);
    CHECK(em.Z.cols() == 16);
    CHECK(em.subject_id == v.subject_id);

    // duplicated slice -> identical rows
    v.voxels[3] = v.voxels[1];
    const EmbeddingMatrix em2 = build_feature_map(v, p);
    CHECK((em2.Z.row(3) - em2.Z.row(1)).cwiseAbs().maxCoeff() == 0.0);

    // row determinism: rows depend only on the slice
    CHECK((em2.Z.row(1) - em.Z.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cls attention rows are softmax rows over tokens") {
    ViTConfig cfg = toy_config(16, 2, 2);
    const ViTParams p = ViTParams::init(cfg, 5);
    Rng rng(14);
    const MatX slice = random_matrix(rng, 8, 8);
    const EncodeResult r = encode_slice_full(slice, p);
    REQUIRE(r.cls_attention_heads.rows() == 2);
    REQUIRE(r.cls_attention_heads.cols() == 5);  // CLS + 4 patches
    for (int h = 0; h < 2; ++h) {
        CHECK(r.cls_attention_heads.row(h).sum() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(r.cls_attention_heads.row(h).minCoeff() >= 0.0);
    }
    const VecX alpha = cls_attention(slice, p);
    CHECK(alpha.size() == 4);
    CHECK(alpha.minCoeff() >= 0.0);
}

TEST_CASE("single-head attention average equals the head row") {
    ViTConfig cfg = toy_config(16, 1, 1);
    const ViTParams p = ViTParams::init(cfg, 3);
    Rng rng(15);
    const MatX slice = random_matrix(rng, 8, 8);
    const EncodeResult r = encode_slice_full(slice, p);
    const VecX alpha = cls_attention(slice, p);
    for (int i = 0; i < 4; ++i) CHECK(alpha(i) == doctest::Approx(r.cls_attention_heads(0, i + 1)));
}

TEST_CASE("vit archive round-trips exactly at f32 precision") {
    const auto dir = testsupport::temp_dir("vit_archive");
    ViTConfig cfg = toy_config();
    ViTParams p = ViTParams::init(cfg, 4);
    p.frozen = true;
    save_vit(dir / "vit.brvt", p);
    const ViTParams r = load_vit(dir / "vit.brvt");
    CHECK(r.frozen);
    CHECK(r.patch == p.patch);
    CHECK(r.heads == p.heads);
    CHECK(r.depth() == p.depth());
    CHECK(vit_checksum(r) == vit_checksum(p));  // f32 storage is idempotent after one round trip

    save_vit(dir / "vit2.brvt", r);
    CHECK(testsupport::file_contents_equal(dir / "vit.brvt", dir / "vit2.brvt"));

    // corrupt magic and truncation are format errors
    {
        std::fstream f(dir / "vit2.brvt", std::ios::in | std::ios::out | std::ios::binary);
        f.write("JUNK", 4);
    }
    CHECK_THROWS_AS((void)load_tensor_archive(dir / "vit2.brvt"), FormatError);
    std::filesystem::resize_file(dir / "vit.brvt", std::filesystem::file_size(dir / "vit.brvt") - 9);
    CHECK_THROWS_AS((void)load_tensor_archive(dir / "vit.brvt"), FormatError);
}

TEST_CASE("frozen contract: downstream reads leave the checksum unchanged") {
    ViTConfig cfg = toy_config();
    const ViTParams p = ViTParams::init(cfg, 4);
    const std::uint64_t before = vit_checksum(p);
    Rng rng(2);
    const MatX slice = random_matrix(rng, 8, 8);
    (void)encode_slice(slice, p);
    (void)cls_attention(slice, p);
    (void)encoder_forward(embed_tokens(slice, p), p);
    CHECK(vit_checksum(p) == before);
}
