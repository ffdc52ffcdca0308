#include <doctest.h>

#include <cmath>
#include <numeric>

#include "agvas/losses.hpp"
#include "agvas/metrics.hpp"
#include "agvas/similarity.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace agvas;
using namespace agvas::testing;

namespace {

std::vector<double> flat_scores(const EvalRecord& r) { return {r.score.data(), r.score.data() + r.score.size()}; }
std::vector<std::uint8_t> flat_labels(const EvalRecord& r) {
  std::vector<std::uint8_t> l(r.gt.data(), r.gt.data() + r.gt.size());
  return l;
}

}  // namespace

// ---------------------------------------------------------------- losses

TEST_CASE("text loss: uniform logits give ln V") {
  for (int v : {2, 7, 210}) {
    Tape t;
    Var logits = t.constant(Matrix::Constant(5, v, 0.37));
    const std::vector<int> rows = {0, 1, 3}, targets = {1, 0, v - 1};
    CHECK(std::abs(text_loss(logits, rows, targets).value()(0, 0) - std::log(v)) < 1e-12);
  }
  Tape t;
  Var logits = t.constant(Matrix::Zero(2, 3));
  CHECK_THROWS(text_loss(logits, std::vector<int>{}, std::vector<int>{}));
}

TEST_CASE("text loss matches a hand computation and is differentiable") {
  Matrix l(2, 3);
  l << 1.0, 2.0, 0.5, -1.0, 0.0, 3.0;
  Tape t;
  const std::vector<int> rows = {0, 1}, targets = {1, 2};
  const double expect = 0.5 * (-(2.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5))) -
                               (3.0 - std::log(std::exp(-1.0) + 1.0 + std::exp(3.0))));
  CHECK(std::abs(text_loss(t.constant(l), rows, targets).value()(0, 0) - expect) < 1e-12);
  Gen g(1);
  const double err = gradcheck(
      [&](Tape&, const std::vector<Var>& v) { return text_loss(v[0], rows, targets); }, {random_matrix(2, 3, g)});
  CHECK(err < 1e-6);
}

TEST_CASE("BCE and Dice closed forms") {
  Matrix balanced(256, 1);
  for (Index i = 0; i < 256; ++i) balanced(i, 0) = i % 2;
  Tape t;
  Var half = t.constant(Matrix::Constant(256, 1, 0.5));
  CHECK(std::abs(bce_loss(half, balanced).value()(0, 0) - std::log(2.0)) < 1e-12);

  Var zeros = t.constant(Matrix::Zero(256, 1));
  CHECK(dice_loss(zeros, Matrix::Zero(256, 1)).value()(0, 0) == 0.0);
  // P = M gives 1 - (2|M| + 1) / (2|M| + 1) = 0 as well.
  Var exact = t.constant(balanced);
  CHECK(std::abs(dice_loss(exact, balanced).value()(0, 0)) < 1e-15);
  // P = 1 on an empty mask: 1 - 1 / (n + 1).
  Var ones = t.constant(Matrix::Ones(256, 1));
  CHECK(std::abs(dice_loss(ones, Matrix::Zero(256, 1)).value()(0, 0) - (1.0 - 1.0 / 257.0)) < 1e-15);

  // Clamping keeps certain mistakes finite.
  Var wrong = t.constant(Matrix::Ones(4, 1));
  const double b = bce_loss(wrong, Matrix::Zero(4, 1), 1e-7).value()(0, 0);
  CHECK(std::abs(b + std::log(1e-7)) < 1e-9);
}

TEST_CASE("BCE and Dice gradients") {
  Gen g(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = random_extent(g, 1, 30);
    const Matrix target = random_mask(n, 1, g).cast<double>();
    const Matrix p = random_matrix(n, 1, g, 0.05, 0.95);
    // -log p: central-difference truncation is about h^2 / (3 p^2), 1.3e-4 at p = 0.05.
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return bce_loss(v[0], target); }, {p}) < 2e-4);
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return bce_loss(v[0], target); }, {p}, 1e-5) < 1e-7);
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return dice_loss(v[0], target); }, {p}) < 1e-6);
  }
}

TEST_CASE("supervision triple consistency") {
  Gen g(3);
  const Mask m = random_mask(4, 4, g);
  const SupervisionTriple t = SupervisionTriple::from_grid_mask(m);
  CHECK_NOTHROW(t.validate());
  CHECK(t.ano.rows() == 16);
  CHECK((t.nor + t.ano).isOnes(0.0));
  CHECK(t.seg == t.ano);
  SupervisionTriple bad = t;
  bad.nor(0, 0) = t.ano(0, 0);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("seg loss sums present heads only") {
  Gen g(4);
  const SupervisionTriple gt = SupervisionTriple::from_grid_mask(random_mask(4, 4, g));
  Tape t;
  AnchorGuidedDecoder::Heads h;
  h.seg = t.constant(random_matrix(16, 1, g, 0.1, 0.9));
  const Matrix ano = random_matrix(16, 1, g, 0.1, 0.9);
  h.ano = t.constant(ano);
  h.nor = t.constant((1.0 - ano.array()).matrix());
  LossConfig cfg;
  const auto all = seg_loss(h, gt, cfg);
  double expect = 0.0;
  for (int c = 0; c < 3; ++c) expect += 0.5 * all.bce[c].value()(0, 0) + 2.0 * all.dice[c].value()(0, 0);
  CHECK(std::abs(all.total.value()(0, 0) - expect) < 1e-12);

  AnchorGuidedDecoder::Heads seg_only;
  seg_only.seg = h.seg;
  const auto one = seg_loss(seg_only, gt, cfg);
  CHECK(!one.bce[0].valid());
  CHECK(std::abs(one.total.value()(0, 0) - (0.5 * all.bce[2].value()(0, 0) + 2.0 * all.dice[2].value()(0, 0))) < 1e-12);

  CHECK_THROWS_AS(seg_loss(AnchorGuidedDecoder::Heads{}, gt, cfg), std::invalid_argument);
}

TEST_CASE("total loss rejects non-finite parts") {
  CHECK(total_loss(1.5, 2.0) == 3.5);
  CHECK_THROWS_AS(total_loss(std::nan(""), 1.0), NumericError);
  CHECK_THROWS_AS(total_loss(1.0, INFINITY), NumericError);
  LossConfig bad;
  bad.bce_clamp = 0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = LossConfig{};
  bad.lambda_dice = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------- metrics

TEST_CASE("AP and F1-Max match brute force on random instances") {
  Gen g(5);
  for (int trial = 0; trial < 200; ++trial) {
    const EvalRecord r = oracle::random_record(g, true, trial % 2 ? 10 : 1000);
    const auto s = flat_scores(r);
    const auto l = flat_labels(r);
    const auto ap = average_precision(s, l);
    const auto f1 = f1_max(s, l);
    REQUIRE(ap.has_value());
    CHECK(std::abs(*ap - *oracle::average_precision(s, l)) < 1e-9);
    CHECK(std::abs(*f1 - *oracle::f1_max(s, l)) < 1e-9);
  }
}

TEST_CASE("AP and F1 hand cases") {
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  const std::vector<std::uint8_t> l = {1, 0, 1, 0};
  CHECK(std::abs(*average_precision(s, l) - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)) < 1e-15);
  CHECK(std::abs(*f1_max(s, l) - 0.8) < 1e-15);
  // Every score tied: one threshold, precision = base rate.
  const std::vector<double> tied(4, 0.5);
  CHECK(std::abs(*average_precision(tied, l) - 0.5) < 1e-15);
  CHECK(!average_precision(s, std::vector<std::uint8_t>(4, 0)).has_value());
  CHECK(!f1_max(s, std::vector<std::uint8_t>(4, 0)).has_value());
  CHECK(*average_precision(s, std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
}

TEST_CASE("IoU metrics match brute force") {
  Gen g(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EvalRecord> recs;
    const int n = static_cast<int>(random_extent(g, 2, 8));
    for (int i = 0; i < n; ++i) recs.push_back(oracle::random_record(g, i % 2 == 0));
    // Sometimes an empty prediction on a normal image.
    if (trial % 3 == 0) recs[1].pred.setZero();
    CHECK(std::abs(iou_ano(recs).value - oracle::iou_ano(recs)) < 1e-9);
    CHECK(std::abs(iou_nor(recs).value - oracle::iou_nor(recs)) < 1e-9);
  }
}

TEST_CASE("IoU hand cases") {
  auto rec = [](bool ano, Mask pred, Mask gt) {
    EvalRecord r;
    r.is_anomalous = ano;
    r.pred = std::move(pred);
    r.gt = std::move(gt);
    return r;
  };
  Mask one = Mask::Zero(2, 2);
  one(0, 0) = 1;
  std::vector<EvalRecord> normals = {rec(false, Mask::Zero(2, 2), Mask::Zero(2, 2)),
                                     rec(false, Mask::Zero(2, 2), Mask::Zero(2, 2)),
                                     rec(false, one, Mask::Zero(2, 2)),
                                     rec(false, Mask::Zero(2, 2), Mask::Zero(2, 2))};
  CHECK(iou_nor(normals).value == 0.75);
  CHECK(iou_nor(normals).count == 4);
  CHECK_THROWS_AS(iou_ano(normals), std::invalid_argument);

  Mask two = one;
  two(1, 1) = 1;
  std::vector<EvalRecord> anomalous = {rec(true, one, two), rec(true, Mask::Zero(2, 2), Mask::Zero(2, 2))};
  const auto s = iou_ano(anomalous);
  CHECK(s.value == 0.75);
  CHECK(s.empty_union == 1);
  CHECK_THROWS_AS(iou_nor(anomalous), std::invalid_argument);
}

TEST_CASE("dataset evaluation pools pixels per category") {
  Gen g(7);
  std::vector<EvalRecord> recs;
  for (const char* cat : {"b", "a"}) {
    for (int i = 0; i < 6; ++i) {
      EvalRecord r = oracle::random_record(g, i < 4);
      r.category = cat;
      recs.push_back(r);
    }
  }
  const MetricsReport rep = evaluate_dataset(recs);
  REQUIRE(rep.categories.size() == 2);
  CHECK(rep.categories[0].category == "a");
  for (const auto& c : rep.categories) {
    std::vector<double> s;
    std::vector<std::uint8_t> l;
    std::vector<EvalRecord> sub;
    for (const auto& r : recs) {
      if (r.category != c.category) continue;
      auto rs = flat_scores(r);
      auto rl = flat_labels(r);
      s.insert(s.end(), rs.begin(), rs.end());
      l.insert(l.end(), rl.begin(), rl.end());
      sub.push_back(r);
    }
    CHECK(std::abs(*c.ap - *oracle::average_precision(s, l)) < 1e-9);
    CHECK(std::abs(*c.f1_max - *oracle::f1_max(s, l)) < 1e-9);
    CHECK(std::abs(*c.iou_ano - oracle::iou_ano(sub)) < 1e-12);
    CHECK(std::abs(*c.iou_nor - oracle::iou_nor(sub)) < 1e-12);
    CHECK(c.n_ano == 4);
    CHECK(c.n_nor == 2);
  }
  CHECK(std::abs(*rep.mean.ap - 0.5 * (*rep.categories[0].ap + *rep.categories[1].ap)) < 1e-15);

  recs[3].score = Matrix::Zero(8, 8);
  CHECK_THROWS_AS(evaluate_dataset(recs), std::invalid_argument);
}

TEST_CASE("result tuples") {
  CHECK(format_tuple({51.0, 52.7, 44.8}) == "(51.0, 52.7, 44.8)");
  const auto t = parse_tuple("(51.0, 52.7, 44.8)");
  CHECK(t[0] == 51.0);
  CHECK(t[1] == 52.7);
  CHECK(t[2] == 44.8);
  Gen g(8);
  for (int i = 0; i < 100; ++i) {
    const std::array<double, 3> v = {std::round(random_matrix(1, 1, g, 0, 1000)(0, 0)) / 10.0,
                                     std::round(random_matrix(1, 1, g, 0, 1000)(0, 0)) / 10.0,
                                     std::round(random_matrix(1, 1, g, 0, 1000)(0, 0)) / 10.0};
    CHECK(format_tuple(parse_tuple(format_tuple(v))) == format_tuple(v));
  }
}

// ---------------------------------------------------------------- similarity

TEST_CASE("SSIM and Bhattacharyya identities") {
  Gen g(9);
  for (int i = 0; i < 50; ++i) {
    const Image x = random_image(64, g);
    CHECK(std::abs(ssim(x, x) - 1.0) < 1e-9);
    CHECK(std::abs(ssim(x, x) - ssim(x, random_image(64, g))) > 1e-3);
    const RowVector h = intensity_histogram(x);
    CHECK(std::abs(h.sum() - 1.0) < 1e-12);
    CHECK(std::abs(bhattacharyya_histograms(h, h)) < 1e-12);
    CHECK(std::abs(bhattacharyya(x, x)) < 1e-12);
  }
  // Disjoint histograms hit the coefficient floor.
  RowVector p = RowVector::Zero(4), q = RowVector::Zero(4);
  p(0) = 1;
  q(3) = 1;
  CHECK(std::abs(bhattacharyya_histograms(p, q) + std::log(1e-12)) < 1e-9);
  CHECK(ssim(Image::Constant(16, 16, 0.3), Image::Constant(16, 16, 0.3)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(Image::Zero(16, 16), Image::Zero(8, 8)), std::invalid_argument);
}

TEST_CASE("reference selection matches exhaustive scoring") {
  Gen g(10);
  for (int trial = 0; trial < 100; ++trial) {
    const Image q = random_image(32, g);
    std::vector<Image> pool;
    const Index n = random_extent(g, 1, 6);
    for (Index i = 0; i < n; ++i) pool.push_back(random_image(32, g));
    if (trial % 4 == 0) pool.push_back(pool.front());  // a tie resolves to the lower index
    CHECK(select_reference(q, pool) == oracle::select_reference(q, pool));
  }
  CHECK_THROWS_AS(select_reference(Image::Zero(32, 32), std::vector<Image>{}), std::invalid_argument);
  std::vector<Image> pool = {random_image(32, g), random_image(32, g)};
  pool.push_back(pool[1]);
  CHECK(select_reference(pool[1], pool) == 1);
}
