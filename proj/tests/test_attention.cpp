#include "stosa/attention.hpp"
#include "stosa/embeddings.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace stosa;

namespace {

StochasticTables<Mat<double>> random_tables(std::size_t items, std::size_t n, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  return init_tables<double>(items, n, w, rng, 0.5);
}

std::vector<StosaLayer<Mat<double>>> random_layers(int layers, int d, int n, std::uint64_t seed) {
  return test::tiny_model(Variant::Stosa, 10, d, n, layers, 1, seed).stosa().layers;
}

GaussianSequence<double> random_sequence(Eigen::Index n, Eigen::Index w, const std::vector<bool>& mask, Rng& rng) {
  return {test::uniform_mat(n, w, -1, 1, rng), test::uniform_mat(n, w, 0.2, 2, rng), mask};
}

std::vector<bool> random_mask(std::size_t n, Rng& rng) {
  // left padding then real positions, as produced by make_window
  std::uniform_int_distribution<std::size_t> pad(0, n);
  const std::size_t p = pad(rng);
  std::vector<bool> mask(n, true);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(p), false);
  return mask;
}

}  // namespace

// Embedding lookup -----------------------------------------------------------

TEST_CASE("lookup of an all-padding window has no valid positions") {
  auto tables = random_tables(5, 4, 3, 1);
  auto win = make_window(std::vector<ItemId>{2}, 4);
  auto seq = lookup_sequence(tables, win);
  CHECK(std::none_of(seq.mask.begin(), seq.mask.end(), [](bool b) { return b; }));
  CHECK((seq.cov.array() > 0).all());
}

TEST_CASE("lookup with zero tables gives mean 0 and covariance 1") {
  StochasticTables<Mat<double>> z{Mat<double>::Zero(6, 3), Mat<double>::Zero(6, 3), Mat<double>::Zero(4, 3),
                                  Mat<double>::Zero(4, 3)};
  auto seq = lookup_sequence(z, make_window(std::vector<ItemId>{1, 4, 2, 5}, 4));
  CHECK(seq.mean.isZero(0));
  CHECK(seq.cov.isOnes(0));
}

TEST_CASE("lookup of a single item at the last position") {
  auto tables = random_tables(5, 4, 3, 2);
  TrainingWindow win{{0, 0, 0, 3}, {0, 0, 0, 4}, {false, false, false, true}};
  auto seq = lookup_sequence(tables, win);
  CHECK(std::count(seq.mask.begin(), seq.mask.end(), true) == 1);
  for (int c = 0; c < 3; ++c) {
    CHECK(seq.mean(3, c) == tables.item_mean(3, c) + tables.pos_mean(3, c));
    const double raw = tables.item_cov(3, c) + tables.pos_cov(3, c);
    CHECK(seq.cov(3, c) == doctest::Approx(raw > 0 ? raw + 1 : std::exp(raw)).epsilon(1e-14));
  }
}

TEST_CASE("lookup rejects out-of-range ids and mismatched lengths") {
  auto tables = random_tables(5, 4, 3, 3);
  TrainingWindow bad{{0, 0, 1, 6}, {0, 0, 6, 1}, {false, false, true, true}};
  CHECK_THROWS_AS(lookup_sequence(tables, bad), LookupError);
  CHECK_THROWS_AS(lookup_sequence(tables, make_window(std::vector<ItemId>{1, 2}, 5)), ShapeError);
  ad::Tape<double> t;
  StochasticTables<ad::Var> vars{t.constant(tables.item_mean), t.constant(tables.item_cov),
                                 t.constant(tables.pos_mean), t.constant(tables.pos_cov)};
  CHECK_THROWS_AS(ad::lookup_sequence(t, vars, bad), LookupError);
}

TEST_CASE("lookup rows depend only on the item and its position") {
  auto tables = random_tables(9, 6, 4, 4);
  Rng rng(5);
  std::uniform_int_distribution<ItemId> pick(1, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ItemId> a(7), b(7);
    for (auto& x : a) x = pick(rng);
    for (auto& x : b) x = pick(rng);
    b[4] = a[4];  // same item lands on the same window slot
    auto sa = lookup_sequence(tables, make_window(a, 6));
    auto sb = lookup_sequence(tables, make_window(b, 6));
    CHECK(sa.mean.row(4) == sb.mean.row(4));
    CHECK(sa.cov.row(4) == sb.cov.row(4));
    CHECK(lookup_sequence(tables, make_window(a, 6)).mean == sa.mean);
  }
}

TEST_CASE("graph lookup matches value lookup") {
  auto tables = random_tables(7, 5, 3, 6);
  auto win = make_window(std::vector<ItemId>{3, 1, 7, 2}, 5);
  ad::Tape<double> t;
  StochasticTables<ad::Var> vars{t.constant(tables.item_mean), t.constant(tables.item_cov),
                                 t.constant(tables.pos_mean), t.constant(tables.pos_cov)};
  auto g = ad::lookup_sequence(t, vars, win);
  auto v = lookup_sequence(tables, win);
  CHECK(t.value(g.mean) == v.mean);
  CHECK((t.value(g.cov) - v.cov).cwiseAbs().maxCoeff() < 1e-15);
}

// Attention normalization -----------------------------------------------------

TEST_CASE("softmax normalization of distances 0 and 9") {
  Mat<double> dist(2, 2);
  dist << 0, 5, 0, 9;
  auto w = normalize_attention(dist, {true, true}, Normalization::Softmax);
  const double e = std::exp(-9.0);
  CHECK(w(1, 0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));
  CHECK(w(1, 1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
  CHECK(std::abs(w(1, 0) - 0.99988) < 1e-5);
  CHECK(std::abs(w(1, 1) - 0.00012) < 1e-5);
  CHECK(w(0, 0) == 1.0);
  CHECK(w(0, 1) == 0.0);
}

TEST_CASE("distance-ratio normalization of distances 1 and 3") {
  Mat<double> dist(2, 2);
  dist << 2, 7, 1, 3;
  auto w = normalize_attention(dist, {true, true}, Normalization::DistanceRatio);
  CHECK(w(1, 0) == doctest::Approx(0.25));
  CHECK(w(1, 1) == doctest::Approx(0.75));
  CHECK(w(0, 0) == doctest::Approx(1.0));
  CHECK(w(0, 1) == 0.0);
}

TEST_CASE("equal distances give uniform causal weights in both modes") {
  const int n = 6;
  Mat<double> dist = Mat<double>::Constant(n, n, 2.5);
  for (auto mode : {Normalization::Softmax, Normalization::DistanceRatio}) {
    auto w = normalize_attention(dist, std::vector<bool>(n, true), mode);
    for (int t = 0; t < n; ++t)
      for (int k = 0; k < n; ++k) CHECK(w(t, k) == doctest::Approx(k <= t ? 1.0 / (t + 1) : 0.0));
  }
}

TEST_CASE("distance-ratio normalization with all-zero distances is an error") {
  Mat<double> dist = Mat<double>::Zero(3, 3);
  CHECK_THROWS_AS(normalize_attention(dist, {true, true, true}, Normalization::DistanceRatio), NormalizationError);
  CHECK_NOTHROW(normalize_attention(dist, {true, true, true}, Normalization::Softmax));
  CHECK_THROWS_AS(normalize_attention(Mat<double>(Mat<double>::Zero(2, 3)), {true, true}, Normalization::Softmax),
                  ShapeError);
}

TEST_CASE("normalized attention is causal, padding-free and row-stochastic on random masks") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 12;
    auto mask = random_mask(n, rng);
    Mat<double> dist = test::uniform_mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), 0.01, 20, rng);
    for (auto mode : {Normalization::Softmax, Normalization::DistanceRatio}) {
      auto w = normalize_attention(dist, mask, mode);
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 0; k < n; ++k) {
          if (k > t || !mask[k] || !mask[t]) REQUIRE(w(t, k) == 0.0);
          REQUIRE(w(t, k) >= 0.0);
        }
        if (mask[t]) REQUIRE(std::abs(w.row(t).sum() - 1.0) < 1e-6);
      }
    }
  }
}

// Aggregation ----------------------------------------------------------------

TEST_CASE("aggregate examples") {
  Mat<double> onehot(1, 3), vm(3, 2), vc(3, 2);
  onehot << 0, 1, 0;
  vm << 1, 2, 3, 4, 5, 6;
  vc << 0.5, 0.6, 0.7, 0.8, 0.9, 1.0;
  auto [m, c] = aggregate(onehot, vm, vc);
  CHECK(m.row(0) == vm.row(1));
  CHECK(c.row(0) == vc.row(1));

  Mat<double> uniform(1, 2), four(2, 1);
  uniform << 0.5, 0.5;
  four << 4, 4;
  CHECK(aggregate(uniform, four, four).second(0, 0) == doctest::Approx(2.0));

  Mat<double> w(1, 2), means(2, 1), covs(2, 1);
  w << 0.25, 0.75;
  means << 0, 4;
  covs << 1, 1;
  CHECK(aggregate(w, means, covs).first(0, 0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(aggregate(w, vm, vc), ShapeError);
}

TEST_CASE("aggregated covariance of a constant value never exceeds it") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 6;
    Mat<double> dist = test::uniform_mat(n, n, 0, 5, rng);
    auto w = normalize_attention(dist, std::vector<bool>(n, true), Normalization::Softmax);
    const double c = 3.0;
    auto cov = aggregate(w, Mat<double>(Mat<double>::Zero(n, 1)), Mat<double>(Mat<double>::Constant(n, 1, c))).second;
    CHECK(cov(0, 0) == doctest::Approx(c));  // first query attends one key only
    for (int t = 1; t < n; ++t) CHECK(cov(t, 0) < c);
    for (int t = 0; t < n; ++t) CHECK(cov(t, 0) == doctest::Approx(c * w.row(t).squaredNorm()));
  }
}

TEST_CASE("multi-head distances split the columns") {
  Rng rng(23);
  std::vector<bool> mask(5, true);
  auto q = random_sequence(5, 8, mask, rng), k = random_sequence(5, 8, mask, rng);
  auto one = multihead_distance(q, k, 1);
  auto two = multihead_distance(q, k, 2);
  REQUIRE(two.size() == 2);
  CHECK((one[0] - two[0] - two[1]).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(one[0].diagonal().cwiseAbs().minCoeff() > 0.0);  // distinct Q and K inputs
  CHECK_THROWS_AS(multihead_distance(q, k, 3), ShapeError);
}

// Feed-forward block ------------------------------------------------------------

TEST_CASE("ffn block with zero weights is the residual") {
  auto layer = random_layers(1, 8, 4, 31)[0];
  layer.visit([](const char*, Mat<double>& m) { m.setZero(); });
  Rng rng(32);
  auto z = random_sequence(4, 4, std::vector<bool>(4, true), rng);
  z.cov.array() -= 1.0;  // exercise both ELU branches
  auto out = ffn_block(layer, z, LayerOptions<double>{});
  CHECK(out.mean == z.mean);
  CHECK((out.cov - activate_covariance(z.cov)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("ffn block output covariance is positive and deterministic without dropout") {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    auto layer = random_layers(1, 8, 4, 100 + trial)[0];
    auto z = random_sequence(4, 4, std::vector<bool>(4, true), rng);
    z.cov *= 20.0;
    z.cov.array() -= 30.0;
    LayerOptions<double> opt;
    auto a = ffn_block(layer, z, opt);
    auto b = ffn_block(layer, z, opt);
    CHECK((a.cov.array() > 0).all());
    CHECK(a.mean == b.mean);
    CHECK(a.cov == b.cov);
  }
}

// Encoder -------------------------------------------------------------------

TEST_CASE("encoder rejects an empty layer list") {
  Rng rng(40);
  auto x = random_sequence(3, 4, {true, true, true}, rng);
  CHECK_THROWS_AS(encoder_forward<double>({}, x, LayerOptions<double>{}), ConfigError);
}

TEST_CASE("encoder on a single position is the ffn of its self-attended input") {
  auto layers = random_layers(1, 8, 1, 41);
  Rng rng(42);
  auto x = random_sequence(1, 4, {true}, rng);
  auto out = encoder_forward(layers, x, LayerOptions<double>{});
  const auto& w = layers[0];
  // one key: weight 1, so z = V projections of the input
  GaussianSequence<double> z{x.mean * w.wv_mean, activate_covariance(Mat<double>(x.cov * w.wv_cov)), x.mask};
  auto expected = ffn_block(w, z, LayerOptions<double>{});
  CHECK((out.mean - expected.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.cov - expected.cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two stacked layers equal two single-layer calls") {
  auto layers = random_layers(2, 8, 6, 43);
  Rng rng(44);
  for (auto mode : {Normalization::Softmax, Normalization::DistanceRatio}) {
    auto x = random_sequence(6, 4, {false, true, true, true, true, true}, rng);
    LayerOptions<double> opt;
    opt.normalization = mode;
    auto both = encoder_forward(layers, x, opt);
    auto first = encoder_forward(std::vector{layers[0]}, x, opt);
    auto second = encoder_forward(std::vector{layers[1]}, first, opt);
    CHECK(both.mean == second.mean);
    CHECK(both.cov == second.cov);
  }
}

TEST_CASE("encoder output at t ignores inputs after t") {
  Rng rng(45);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 6, heads = trial % 2 ? 2 : 1;
    auto layers = test::tiny_model(Variant::Stosa, 10, 8, n, 2, heads, 500 + trial).stosa().layers;
    auto x = random_sequence(n, 4, std::vector<bool>(n, true), rng);
    LayerOptions<double> opt;
    opt.heads = heads;
    auto base = encoder_forward(layers, x, opt);
    for (int t = 0; t + 1 < n; ++t) {
      auto y = x;
      y.mean.row(t + 1).array() += 0.7;
      y.cov.row(t + 1).array() *= 1.9;
      auto out = encoder_forward(layers, y, opt);
      REQUIRE(out.mean.topRows(t + 1) == base.mean.topRows(t + 1));
      REQUIRE(out.cov.topRows(t + 1) == base.cov.topRows(t + 1));
      REQUIRE(out.mean.row(t + 1) != base.mean.row(t + 1));
    }
  }
}

TEST_CASE("encoder covariance is positive after every layer") {
  Rng rng(46);
  for (int trial = 0; trial < 20; ++trial) {
    auto layers = random_layers(3, 8, 5, 600 + trial);
    auto x = random_sequence(5, 4, random_mask(5, rng), rng);
    auto y = x;
    for (auto& layer : layers) {
      y = encoder_forward(std::vector{layer}, y, LayerOptions<double>{});
      CHECK((y.cov.array() > 0).all());
    }
  }
}

TEST_CASE("dropout with a seeded generator is reproducible and scales kept entries") {
  ad::Tape<double> t;
  Mat<double> ones = Mat<double>::Ones(20, 20);
  Rng a(7), b(7);
  auto va = t.value(ad::dropout(t, t.constant(ones), 0.5, &a));
  auto vb = t.value(ad::dropout(t, t.constant(ones), 0.5, &b));
  CHECK(va == vb);
  CHECK(((va.array() == 0.0) || (va.array() == 2.0)).all());
  CHECK((va.array() == 0.0).count() > 100);
  CHECK(t.value(ad::dropout(t, t.constant(ones), 0.0, &a)) == ones);
  CHECK(t.value(ad::dropout(t, t.constant(ones), 0.5, nullptr)) == ones);
}
