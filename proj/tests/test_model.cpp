#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "agvas/agmd.hpp"
#include "agvas/encoders.hpp"
#include "agvas/image.hpp"
#include "agvas/kernels.hpp"
#include "agvas/micro_lm.hpp"
#include "agvas/model.hpp"
#include "agvas/spam.hpp"
#include "agvas/synth.hpp"
#include "support.hpp"

using namespace agvas;
using namespace agvas::testing;

namespace {

std::vector<Index> differing_rows(const Matrix& a, const Matrix& b) {
  std::vector<Index> rows;
  for (Index r = 0; r < a.rows(); ++r) {
    if (a.row(r) != b.row(r)) rows.push_back(r);
  }
  return rows;
}

InstructionSample direct_sample(bool with_mask = true) {
  InstructionSample s;
  s.instruction = std::string(kDefaultInstruction);
  s.response = std::string(kDirectResponse);
  if (with_mask) s.mask = "m.pgm";
  s.supervise = AnchorSet::all();
  s.task = TaskType::Direct;
  return s;
}

}  // namespace

// ---------------------------------------------------------------- encoders

TEST_CASE("semantic encoder: determinism, zero image, locality") {
  StubEncoders enc;
  Gen g(1);
  const Image img = random_image(64, g);
  const FeatureMap a = enc.encode_semantic(img), b = enc.encode_semantic(img);
  CHECK(a.data == b.data);
  CHECK(a.tokens() == 64);
  CHECK(a.dim() == 48);

  const FeatureMap z = enc.encode_semantic(Image::Zero(64, 64));
  RowVector zero_stats = RowVector::Zero(3);
  const RowVector expected = enc.lift_semantic(zero_stats);
  for (Index r = 0; r < z.tokens(); ++r) CHECK(z.data.row(r) == expected);

  Image other = img;
  other.block(8, 16, 8, 8) = random_matrix(8, 8, g, 0, 1);  // patch (1, 2)
  const auto rows = differing_rows(a.data, enc.encode_semantic(other).data);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0] == 1 * 8 + 2);
  CHECK_THROWS_AS(enc.encode_semantic(Image::Zero(32, 32)), std::invalid_argument);
}

TEST_CASE("pixel encoder: shape and defect locality") {
  StubEncoders enc;
  const Image img = generate_texture_image("stripes", 3);
  const FeatureMap f = enc.encode_pixel(img);
  CHECK(f.grid_rows == 16);
  CHECK(f.grid_cols == 16);
  CHECK(f.tokens() == 256);
  CHECK(f.dim() == 32);
  CHECK(enc.encode_pixel(img).data == f.data);

  // Changing one 4x4 block touches exactly that block and the neighbours
  // that use it as local context.
  for (Index r : {0, 5, 15}) {
    for (Index c : {0, 9, 15}) {
      Image d = img;
      d.block(r * 4, c * 4, 4, 4).array() = 1.0 - d.block(r * 4, c * 4, 4, 4).array() * 0.5;
      auto changed = differing_rows(f.data, enc.encode_pixel(d).data);
      auto expected = enc.pixel_receptive_field(r, c);
      std::sort(expected.begin(), expected.end());
      CHECK(changed == expected);
    }
  }
  // A real injected defect only changes rows in the union of receptive fields of its blocks.
  const Injection inj = inject_defect(img, DefectType::Hole, 5, "stripes");
  std::vector<Index> allowed;
  for (Index r = 0; r < 16; ++r) {
    for (Index c = 0; c < 16; ++c) {
      if (inj.mask.block(r * 4, c * 4, 4, 4).cast<int>().sum() == 0) continue;
      for (Index k : enc.pixel_receptive_field(r, c)) allowed.push_back(k);
    }
  }
  for (Index row : differing_rows(f.data, enc.encode_pixel(inj.image).data)) {
    CHECK(std::find(allowed.begin(), allowed.end(), row) != allowed.end());
  }
}

TEST_CASE("feature projection: zero weights and width") {
  Rng rng(3);
  FeatureProjection proj("proj.semantic", 48, 64, rng);
  StubEncoders enc;
  Gen g(4);
  const FeatureMap f = enc.encode_semantic(random_image(64, g));
  Tape t;
  CHECK(proj.forward(t, f).cols() == 64);
  CHECK(proj.forward(t, f).rows() == 64);
  FeatureProjection zero = proj;
  zero_parameters(zero);
  Tape t2;
  CHECK(zero.forward(t2, f).value().isZero(0.0));
}

// ---------------------------------------------------------------- vocabulary + LM

TEST_CASE("vocabulary round trips and anchor ids") {
  const Vocabulary v = tiny_vocabulary();
  const std::string s(kDefaultInstruction);
  CHECK(v.decode(v.encode(s)) == s);
  CHECK(v.encode("").empty());
  CHECK(v.decode(std::vector<int>{}).empty());
  const auto ids = v.encode("[NOR][ANO][SEG]");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == v.size() - 3);
  CHECK(ids[1] == v.size() - 2);
  CHECK(ids[2] == v.size() - 1);
  CHECK(v.decode(ids) == "[NOR][ANO][SEG]");
  CHECK(v.encode("zebra")[0] == v.unk_id());
}

TEST_CASE("prefix-causal mask") {
  const Matrix m = prefix_causal_mask(3, 6);
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 6; ++j) {
      const bool open = j <= i || (i < 3 && j < 3);
      CHECK((m(i, j) == 0.0) == open);
      if (!open) CHECK(std::isinf(m(i, j)));
    }
  }
}

TEST_CASE("LM causality under future-token mutation") {
  Rng rng(5);
  LmConfig cfg{16, 2, 4, 32, 64};
  MicroLM lm(cfg, 30, rng);
  Gen g(6);
  const Matrix prefix = random_matrix(5, 16, g);
  std::vector<int> ids = {2, 7, 9, 11, 13, 17, 19};
  Tape t0(false);
  const Matrix base = lm.forward(t0, t0.constant(prefix), ids).logits.value();
  CHECK(base.rows() == static_cast<Index>(ids.size()) + 1);
  for (std::size_t pos = 0; pos < ids.size(); ++pos) {
    std::vector<int> mutated = ids;
    mutated[pos] = (mutated[pos] + 5) % 30;
    Tape t(false);
    const Matrix m = lm.forward(t, t.constant(prefix), mutated).logits.value();
    // Row r predicts token r and has seen tokens < r.
    for (Index r = 0; r <= static_cast<Index>(pos); ++r) CHECK(m.row(r) == base.row(r));
    CHECK(m.row(static_cast<Index>(pos) + 1) != base.row(static_cast<Index>(pos) + 1));
  }
  // Swapping two future tokens.
  std::vector<int> swapped = ids;
  std::swap(swapped[4], swapped[6]);
  Tape t(false);
  const Matrix sw = lm.forward(t, t.constant(prefix), swapped).logits.value();
  CHECK(sw.topRows(5) == base.topRows(5));
}

TEST_CASE("LM prefix boundary and overflow") {
  Rng rng(7);
  LmConfig cfg{16, 1, 2, 32, 12};
  MicroLM lm(cfg, 20, rng);
  Gen g(8);
  Tape t(false);
  auto out = lm.forward(t, t.constant(random_matrix(4, 16, g)), std::vector<int>{});
  CHECK(out.logits.rows() == 1);
  CHECK(out.hidden.rows() == 4);
  CHECK_THROWS_AS(lm.forward(t, t.constant(random_matrix(4, 16, g)), std::vector<int>(9, 3)), ContextOverflow);
  CHECK_NOTHROW(lm.forward(t, t.constant(random_matrix(4, 16, g)), std::vector<int>(8, 3)));
}

TEST_CASE("generation: determinism and zero budget") {
  Rng rng(9);
  MicroLM lm(LmConfig{16, 2, 4, 32, 64}, 25, rng);
  Gen g(10);
  const Matrix prefix = random_matrix(6, 16, g);
  const std::vector<int> prompt = {2, 5, 6};
  CHECK(lm.generate(prefix, prompt, 0, 3).empty());
  const auto a = lm.generate(prefix, prompt, 12, 3);
  CHECK(a == lm.generate(prefix, prompt, 12, 3));
  CHECK(a.size() <= 12);
}

TEST_CASE("vocabulary extension keeps base argmax") {
  Rng rng(11);
  MicroLM lm(LmConfig{16, 2, 4, 32, 64}, 22, rng);
  Gen g(12);
  const Matrix prefix = random_matrix(4, 16, g);
  const std::vector<int> ids = {2, 8, 9, 10};
  Tape t0(false);
  const Matrix before = lm.forward(t0, t0.constant(prefix), ids).logits.value();
  Rng extra(13);
  lm.extend_vocabulary(3, extra);
  CHECK(lm.vocab_size() == 25);
  Tape t1(false);
  const Matrix after = lm.forward(t1, t1.constant(prefix), ids).logits.value();
  CHECK((after.leftCols(22) - before).cwiseAbs().maxCoeff() < 1e-12);
  for (Index r = 0; r < after.rows(); ++r) {
    Index b0 = 0, b1 = 0;
    before.row(r).maxCoeff(&b0);
    after.row(r).leftCols(22).maxCoeff(&b1);
    CHECK(b0 == b1);
  }
}

TEST_CASE("anchor extraction: positions, first occurrence, missing") {
  const Vocabulary v = tiny_vocabulary();
  Gen g(14);
  Tape t;
  const Index prefix = 3;
  std::vector<int> ids = v.encode("Sure, it is [NOR][ANO][SEG].");
  Var hidden = t.constant(random_matrix(prefix + static_cast<Index>(ids.size()), 8, g));
  const AnchorHidden a = extract_anchor_hidden(hidden, prefix, ids, v, AnchorSet::all());
  REQUIRE(a.rows.rows() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const Index pos = a.text_positions[k];
    CHECK(ids[static_cast<std::size_t>(pos)] == v.anchor_id(kAllAnchors[k]));
    CHECK(a.rows.value().row(static_cast<Index>(k)) == hidden.value().row(prefix + pos));
  }

  std::vector<int> dup = v.encode("[SEG] Sure [NOR][ANO][SEG] [SEG]");
  Var h2 = t.constant(random_matrix(prefix + static_cast<Index>(dup.size()), 8, g));
  const AnchorHidden b = extract_anchor_hidden(h2, prefix, dup, v, AnchorSet::all());
  // Exhaustive scan for the first position of each anchor.
  for (std::size_t k = 0; k < 3; ++k) {
    Index first = -1;
    for (std::size_t i = 0; i < dup.size() && first < 0; ++i) {
      if (dup[i] == v.anchor_id(kAllAnchors[k])) first = static_cast<Index>(i);
    }
    CHECK(b.text_positions[k] == first);
  }

  std::vector<int> missing = v.encode("Sure, it is [NOR][ANO].");
  Var h3 = t.constant(random_matrix(prefix + static_cast<Index>(missing.size()), 8, g));
  CHECK_THROWS_AS(extract_anchor_hidden(h3, prefix, missing, v, AnchorSet::all()), AnchorsMissing);
  CHECK_NOTHROW(extract_anchor_hidden(h3, prefix, missing, v, AnchorSet::only(Anchor::Nor).with(Anchor::Ano)));
}

TEST_CASE("token refiner: zero weights, sharing, closed form") {
  Rng rng(15);
  TokenRefiner ref(8, 8, 4, rng);
  Gen g(16);
  Matrix rows = random_matrix(3, 8, g);
  rows.row(2) = rows.row(0);
  Tape t;
  const Matrix out = ref.forward(t, t.constant(rows)).value();
  CHECK(out.cols() == 4);
  CHECK(out.row(0) == out.row(2));
  TokenRefiner zero = ref;
  zero_parameters(zero);
  Tape t2;
  CHECK(zero.forward(t2, t2.constant(rows)).value().isZero(0.0));

  // Closed form: fc2(gelu(fc1(x))).
  auto gelu = [](double x) { return kernels::gelu(x); };
  Matrix hidden = (rows * ref.first().weight().value).rowwise() + ref.first().bias().value.row(0);
  hidden = hidden.unaryExpr(gelu);
  const Matrix expect = (hidden * ref.second().weight().value).rowwise() + ref.second().bias().value.row(0);
  CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("low-rank adapters") {
  Rng rng(17);
  Linear base("lm.block0.attn.q", 64, 64, rng);
  Gen g(18);
  const Matrix x = random_matrix(5, 64, g);
  Tape t0(false);
  const Matrix before = base.forward(t0, t0.constant(x)).value();
  Linear adapted = base;
  Rng r2(19);
  adapted.attach_adapter(4, r2, 8.0);
  adapted.set_base_trainable(false);
  Tape t1(false);
  CHECK(adapted.forward(t1, t1.constant(x)).value() == before);
  Index trainable = 0;
  adapted.visit([&](Parameter& p) {
    if (p.trainable) trainable += p.value.size();
  });
  CHECK(trainable == 512);
  Linear l2 = base;
  CHECK_THROWS_AS(l2.attach_adapter(64, r2, 8.0), std::invalid_argument);
  CHECK_THROWS_AS(l2.attach_adapter(0, r2, 8.0), std::invalid_argument);
}

// ---------------------------------------------------------------- SPAM

TEST_CASE("SPAM: weights, convex combination, permutation invariance") {
  Rng rng(20);
  SemanticPixelAlignment spam(16, 4, rng);
  Gen g(21);
  const Matrix fs = random_matrix(6, 16, g), fp = random_matrix(20, 16, g);
  Tape t;
  auto out = spam.align(t, t.constant(fs), t.constant(fp));
  CHECK(out.aligned.rows() == 6);
  CHECK(out.aligned.cols() == 16);
  REQUIRE(out.weights.size() == 4);
  for (const Var& w : out.weights) {
    for (Index r = 0; r < w.rows(); ++r) CHECK(std::abs(w.value().row(r).sum() - 1.0) < 1e-9);
  }

  // Every pixel row equal to v: the attention mixes identical values, so the
  // pre-residual output is the projection of v.
  const RowVector v = random_matrix(1, 16, g);
  Matrix same(20, 16);
  same.rowwise() = v;
  auto& attn = spam.attention();
  const RowVector vproj = v * attn.v().weight().value + attn.v().bias().value;
  const RowVector expect = vproj * attn.o().weight().value + attn.o().bias().value;
  Tape t2;
  const Matrix pre = spam.align(t2, t2.constant(fs), t2.constant(same)).attended.value();
  for (Index r = 0; r < pre.rows(); ++r) CHECK((pre.row(r) - expect).cwiseAbs().maxCoeff() < 1e-12);

  std::vector<Index> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g);
  Matrix fp_perm(20, 16);
  for (Index i = 0; i < 20; ++i) fp_perm.row(i) = fp.row(perm[static_cast<std::size_t>(i)]);
  Tape t3;
  const Matrix permuted = spam.align(t3, t3.constant(fs), t3.constant(fp_perm)).aligned.value();
  CHECK((permuted - out.aligned.value()).cwiseAbs().maxCoeff() < 1e-12);

  // Zero pixel features: the output is the o-projection of the v-bias.
  Tape t4;
  const Matrix z = spam.align(t4, t4.constant(fs), t4.constant(Matrix::Zero(20, 16))).attended.value();
  const RowVector bias_pattern = attn.v().bias().value * attn.o().weight().value + attn.o().bias().value;
  for (Index r = 0; r < z.rows(); ++r) CHECK((z.row(r) - bias_pattern).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prefix assembly lengths and order") {
  ModelConfig cfg;
  AgVasModel model(cfg, Vocabulary::build(std::vector<std::string>{"Please segment the anomalies in this image.",
                                                                  "Sure, it is"}));
  const ImageFeatures f = model.encode(generate_texture_image("checker", 4));
  Tape t(false);
  Var prefix = model.image_prefix(t, f);
  CHECK(prefix.rows() == 128);
  std::vector<int> text(16, model.vocab().bos_id());
  auto out = model.lm().forward(t, prefix, text);
  CHECK(out.hidden.rows() == 144);
  auto empty = model.lm().forward(t, prefix, std::vector<int>{});
  CHECK(empty.hidden.rows() == 128);

  // Wiring canary: putting the text before the image changes the logits.
  const std::vector<int> ids = encode_prompt(kDefaultInstruction, model.vocab());
  Tape a(false), b(false);
  const Matrix ordered = model.lm().forward(a, a.constant(prefix.value()), ids).logits.value();
  Matrix swapped_prefix = prefix.value();
  swapped_prefix.topRows(64).swap(swapped_prefix.bottomRows(64));
  const Matrix swapped = model.lm().forward(b, b.constant(swapped_prefix), ids).logits.value();
  CHECK((ordered - swapped).cwiseAbs().maxCoeff() > 1e-6);

  ModelConfig ns = cfg;
  ns.variant = Variant::NoSpam;
  AgVasModel no_spam(ns, model.vocab());
  Tape t2(false);
  CHECK(no_spam.image_prefix(t2, f).rows() == 64);
}

// ---------------------------------------------------------------- decoder

TEST_CASE("decoder input, zero-weight reduction and heads") {
  Rng rng(23);
  DecoderConfig cfg;
  AnchorGuidedDecoder dec(cfg, rng);
  Gen g(24);
  const Matrix refined = random_matrix(3, 32, g);
  Tape t;
  Var z0 = dec.build_input(t, t.constant(refined), AnchorSet::all());
  CHECK(z0.rows() == 6);
  CHECK(z0.cols() == 32);
  CHECK(z0.value().topRows(3) == dec.queries().value);
  CHECK(z0.value().bottomRows(3) == refined);

  const Matrix pixels = random_matrix(256, 32, g);
  auto d = dec.decode(t, z0, t.constant(pixels));
  CHECK(d.tokens.rows() == 6);
  CHECK(d.pixels.rows() == 256);
  CHECK(d.pixels.cols() == 32);

  AnchorGuidedDecoder zero = dec;
  zero.visit([](Parameter& p) {
    if (p.name.find(".gain") == std::string::npos && p.name != "agmd.queries" && p.name != "agmd.position") {
      p.value.setZero();
    }
  });
  Tape tz;
  Var z0z = zero.build_input(tz, tz.constant(refined), AnchorSet::all());
  auto dz = zero.decode(tz, z0z, tz.constant(pixels));
  // Zeroed sublayers leave only the post-norms: three per block on the token
  // stream, one per block on the pixel stream, and an identity neck.
  auto normalize = [](Matrix x, int times) {
    for (int k = 0; k < times; ++k) {
      for (Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        x.row(r) = (x.row(r).array() - mu) / std::sqrt(var + 1e-5);
      }
    }
    return x;
  };
  CHECK((dz.tokens.value() - normalize(z0z.value(), 6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((dz.pixels.value() - normalize(pixels, 2)).cwiseAbs().maxCoeff() < 1e-12);

  auto h = dec.heads(d.tokens, d.pixels, AnchorSet::all());
  for (Index i = 0; i < 256; ++i) {
    CHECK(std::abs(h.nor.value()(i, 0) + h.ano.value()(i, 0) - 1.0) < 1e-12);
    CHECK(h.seg.value()(i, 0) >= 0.0);
    CHECK(h.seg.value()(i, 0) <= 1.0);
  }
}

TEST_CASE("decoder pixel permutation equivariance") {
  Rng rng(25);
  DecoderConfig cfg;
  AnchorGuidedDecoder dec(cfg, rng);
  Gen g(26);
  const Matrix refined = random_matrix(3, 32, g), pixels = random_matrix(256, 32, g);
  const Matrix pos = dec.position().value;
  std::vector<Index> perm(256);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g);
  Matrix pp(256, 32), pospp(256, 32);
  for (Index i = 0; i < 256; ++i) {
    pp.row(i) = pixels.row(perm[static_cast<std::size_t>(i)]);
    pospp.row(i) = pos.row(perm[static_cast<std::size_t>(i)]);
  }
  Tape a(false), b(false);
  auto da = dec.decode(a, dec.build_input(a, a.constant(refined), AnchorSet::all()), a.constant(pixels),
                       a.constant(pos));
  auto db = dec.decode(b, dec.build_input(b, b.constant(refined), AnchorSet::all()), b.constant(pp),
                       b.constant(pospp));
  for (Index i = 0; i < 256; ++i) {
    CHECK((db.pixels.value().row(i) - da.pixels.value().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
          1e-12);
  }
  CHECK((da.tokens.value() - db.tokens.value()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("head closed forms on two pixels") {
  Rng rng(27);
  DecoderConfig cfg;
  cfg.dim = 4;
  cfg.heads = 2;
  AnchorGuidedDecoder dec(cfg, rng);
  Matrix z(3, 4);
  z << 0.3, -0.2, 0.5, 0.1,  // nor
      -0.4, 0.6, 0.2, -0.1,   // ano
      0.7, 0.1, -0.3, 0.2;    // seg
  Matrix f(2, 4);
  f << 1.0, 2.0, -1.0, 0.5, -0.5, 0.25, 1.5, -2.0;
  Tape t;
  auto h = dec.heads(t.constant(z), t.constant(f), AnchorSet::all());
  for (Index i = 0; i < 2; ++i) {
    const double ls = f.row(i).dot(z.row(2)), ln = f.row(i).dot(z.row(0)), la = f.row(i).dot(z.row(1));
    CHECK(std::abs(h.seg.value()(i, 0) - 1.0 / (1.0 + std::exp(-ls))) < 1e-12);
    CHECK(std::abs(h.ano.value()(i, 0) - std::exp(la) / (std::exp(la) + std::exp(ln))) < 1e-12);
    CHECK(std::abs(h.nor.value()(i, 0) - std::exp(ln) / (std::exp(la) + std::exp(ln))) < 1e-12);
  }
  Matrix zs = z;
  zs.row(2).setZero();
  zs.row(1) = zs.row(0);
  Tape t2;
  auto h2 = dec.heads(t2.constant(zs), t2.constant(f), AnchorSet::all());
  CHECK((h2.seg.value().array() == 0.5).all());
  CHECK((h2.nor.value().array() == 0.5).all());
  CHECK((h2.ano.value().array() == 0.5).all());

  Tape t3;
  auto only_seg = dec.heads(t3.constant(z.bottomRows(1)), t3.constant(f), AnchorSet::only(Anchor::Seg));
  CHECK(only_seg.seg.valid());
  CHECK(!only_seg.nor.valid());
  CHECK(!only_seg.ano.valid());
}

TEST_CASE("fusion and binarization") {
  DecoderConfig cfg;
  const ProbMaps a = fuse_and_binarize(Matrix::Ones(16, 16), Matrix::Zero(16, 16), cfg);
  CHECK((a.fused.array() == 0.5).all());
  CHECK((a.prob.array() - 0.5).abs().maxCoeff() < 1e-15);
  CHECK(a.mask.cast<int>().sum() == 0);
  CHECK(a.mask.rows() == 64);

  Gen g(28);
  const Matrix p = random_matrix(16, 16, g, 0, 1);
  const ProbMaps b = fuse_and_binarize(p, p, cfg);
  CHECK((b.fused - p).cwiseAbs().maxCoeff() < 1e-15);

  const Matrix s = random_matrix(16, 16, g, 0, 1), an = random_matrix(16, 16, g, 0, 1);
  const ProbMaps c = fuse_and_binarize(s, an, cfg);
  CHECK((c.fused - 0.5 * (s + an)).cwiseAbs().maxCoeff() <= 1e-12);
  for (Index i = 0; i < c.prob.size(); ++i) CHECK((c.mask.data()[i] == 1) == (c.prob.data()[i] > 0.5));

  const ProbMaps only_seg = fuse_and_binarize(s, Matrix(), cfg);
  CHECK(only_seg.fused == s);
  const ProbMaps only_ano = fuse_and_binarize(Matrix(), an, cfg);
  CHECK(only_ano.fused == an);
}

// ---------------------------------------------------------------- composed model

TEST_CASE("composed model: forward shapes, variants, gradients reach every module") {
  const Vocabulary v = tiny_vocabulary();
  Gen g(29);
  for (Variant var : kVariants) {
    ModelConfig cfg = tiny_model_config();
    cfg.variant = var;
    AgVasModel model(cfg, v);
    const ImageFeatures f = model.encode(random_image(16, g));
    InstructionSample s = restrict_anchors(direct_sample(), model.anchors());
    const Mask gm = random_mask(4, 4, g);
    const EncodedSample e = encode_sample(s, v, &gm);
    Tape tape;
    auto fw = model.forward(tape, f, e.text_ids, e.response_begin, true);
    CHECK(fw.heads.seg.valid() == model.anchors().contains(Anchor::Seg));
    CHECK(fw.heads.ano.valid() == model.anchors().contains(Anchor::Ano));
    CHECK(fw.prefix.rows() == (var == Variant::NoSpam ? 16 : 32));

    Tape lt;
    auto parts = model.loss(lt, f, e, LossConfig{});
    CHECK(parts.has_seg);
    lt.backward(parts.total);
    GradStore grads;
    lt.collect_param_grads(grads);
    for (const char* name : {"proj.semantic.weight", "lm.head", "refiner.fc1.weight", "agmd.queries"}) {
      const Parameter* p = nullptr;
      for (const Parameter* q : model.parameters()) {
        if (q->name == name) p = q;
      }
      REQUIRE(p != nullptr);
      REQUIRE(grads.find(*p) != nullptr);
      CHECK(grads.find(*p)->cwiseAbs().maxCoeff() > 0.0);
    }
    bool pixel_proj_grad = false;
    for (const Parameter* q : model.parameters()) {
      if (q->name == "proj.pixel.weight" && grads.find(*q) && grads.find(*q)->cwiseAbs().maxCoeff() > 0) {
        pixel_proj_grad = true;
      }
    }
    CHECK(pixel_proj_grad == (var != Variant::NoSpam));
  }
}

TEST_CASE("composed model: loss routing") {
  const Vocabulary v = tiny_vocabulary();
  AgVasModel model(tiny_model_config(), v);
  Gen g(30);
  const ImageFeatures f = model.encode(random_image(16, g));
  InstructionSample vqa;
  vqa.instruction = "Please segment this image.";
  vqa.response = "No anomalies are found.";
  vqa.task = TaskType::Vqa;
  const EncodedSample e = encode_sample(vqa, v, nullptr);
  CHECK(!e.gt.has_value());
  Tape t;
  auto parts = model.loss(t, f, e, LossConfig{});
  CHECK(!parts.has_seg);
  CHECK(parts.seg == 0.0);
  CHECK(parts.total.value()(0, 0) == parts.text);
}

TEST_CASE("composed model: finite differences on every trainable parameter") {
  const Vocabulary v = tiny_vocabulary();
  Gen g(31);
  for (bool adapters : {false, true}) {
    ModelConfig cfg = tiny_model_config();
    cfg.adapters = adapters;
    AgVasModel model(cfg, v);
    if (adapters) {
      // Fresh adapters have a zero up-projection; move off that point so the
      // down-projection gradient is not identically zero.
      Gen ga(32);
      for (Parameter* p : model.parameters()) {
        if (p->name.ends_with(".lora_up")) p->value = random_matrix(p->value.rows(), p->value.cols(), ga, -0.1, 0.1);
      }
    }
    const ImageFeatures f = model.encode(random_image(16, g));
    const Mask gm = random_mask(4, 4, g);
    const EncodedSample e = encode_sample(direct_sample(), v, &gm);
    // At width 8 the embedding rows have std near 0.1, so the 1e-3 step is a
    // visible fraction of the layer-norm scale. The smaller step shows the
    // error is truncation.
    for (auto [h, bound] : {std::pair{1e-3, 1e-3}, std::pair{1e-4, 1e-5}}) {
      double worst = 0.0;
      std::string worst_name;
      for (const auto& c : model_gradcheck(model, f, e, LossConfig{}, 1, h)) {
        if (c.rel() > worst) {
          worst = c.rel();
          worst_name = c.name;
        }
      }
      INFO("adapters=" << adapters << " h=" << h << " worst " << worst_name);
      CHECK(worst < bound);
    }
  }
}

TEST_CASE("inference: missing anchors give an empty mask") {
  const Vocabulary v = tiny_vocabulary();
  AgVasModel model(tiny_model_config(), v);
  Gen g(33);
  const ImageFeatures f = model.encode(random_image(16, g));
  auto inf = model.infer(f, kDefaultInstruction, 0);
  CHECK(inf.response_ids.empty());
  CHECK(inf.anchors_missing);
  CHECK(inf.maps.mask.cast<int>().sum() == 0);
  CHECK(inf.maps.mask.rows() == 16);
  const auto again = model.infer(f, kDefaultInstruction, 6);
  CHECK(again.response == model.infer(f, kDefaultInstruction, 6).response);
}
