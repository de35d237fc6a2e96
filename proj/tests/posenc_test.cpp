#include "flatner/posenc.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/autograd.hpp"
#include "flatner/common.hpp"
#include "flatner/lattice.hpp"

using flatner::Array;
using flatner::build_lattice;
using flatner::Cell;
using flatner::distance_quad;
using flatner::DistanceQuad;
using flatner::FlatLattice;
using flatner::Modality;
using flatner::ObjectAnnotation;
using flatner::ObjectKind;
using flatner::Rng;
using flatner::Tape;
using flatner::validation_error;
using flatner::Var;

namespace {

Cell word_at(int pos) { return {0, Modality::WORD, pos, pos}; }
Cell visual(int head, int tail) { return {0, Modality::VISUAL, head, tail}; }

FlatLattice mixed_lattice() {
  return build_lattice({1, 2, 3, 4, 5},
                       {{0, ObjectKind::WHOLE_IMAGE, 0, 0},
                        {1, ObjectKind::NOUN_PHRASE, 2, 4},
                        {2, ObjectKind::GENERAL_WORD, 0, 0}});
}

Array<double> random_wr(std::size_t d, Rng& rng) {
  Array<double> w({d, 4 * d});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.5, 0.5);
  return w;
}

// R rows for a lattice under a fixed projection, as a plain value matrix.
Array<double> encode(const FlatLattice& lat, const Array<double>& wr) {
  Tape<double> t;
  Var w = t.leaf(wr, false);
  flatner::SinusoidCache<double> cache(wr.rows());
  auto enc = flatner::relative_encoding(t, lat, w, cache);
  return t.val(flatner::materialize_encoding(t, enc));
}

}  // namespace

TEST(DistanceQuad, WordWordCollapse) {
  const DistanceQuad q = distance_quad(word_at(3), word_at(5));
  EXPECT_EQ(q, (DistanceQuad{-2, -2, -2, -2}));
}

TEST(DistanceQuad, VisualVersusWord) {
  const DistanceQuad q = distance_quad(visual(2, 4), word_at(3));
  EXPECT_EQ(q, (DistanceQuad{-1, -1, 1, 1}));
}

TEST(DistanceQuad, SelfPairs) {
  // Point cells (head == tail) are at zero distance from themselves. A
  // spanning cell against itself still sees its own extent on the cross
  // terms: head-vs-tail is not zero when head != tail.
  EXPECT_EQ(distance_quad(word_at(7), word_at(7)), (DistanceQuad{0, 0, 0, 0}));
  EXPECT_EQ(distance_quad(visual(2, 4), visual(2, 4)), (DistanceQuad{0, -2, 2, 0}));
}

TEST(DistanceQuad, AntisymmetryIdentities) {
  const auto lat = mixed_lattice();
  for (const Cell& ci : lat.cells)
    for (const Cell& cj : lat.cells) {
      const DistanceQuad fwd = distance_quad(ci, cj);
      const DistanceQuad rev = distance_quad(cj, ci);
      EXPECT_EQ(fwd.hh, -rev.hh);
      EXPECT_EQ(fwd.tt, -rev.tt);
      EXPECT_EQ(fwd.ht, -rev.th);
      EXPECT_EQ(fwd.th, -rev.ht);
    }
}

TEST(DistanceQuad, SpanExtentRelation) {
  const auto lat = mixed_lattice();
  for (const Cell& ci : lat.cells)
    for (const Cell& cj : lat.cells) {
      const DistanceQuad q = distance_quad(ci, cj);
      EXPECT_EQ(q.hh - q.ht, cj.tail - cj.head);
      EXPECT_GE(q.hh - q.ht, 0);
    }
}

TEST(Sinusoid, ZeroPosition) {
  const auto v = flatner::sinusoid<double>(0, 8);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(v[2 * k], 0.0);
    EXPECT_EQ(v[2 * k + 1], 1.0);
  }
}

TEST(Sinusoid, UnitPositionFirstComponent) {
  const auto v = flatner::sinusoid<double>(1, 16);
  EXPECT_DOUBLE_EQ(v[0], 0.8414709848078965);
  EXPECT_DOUBLE_EQ(v[1], std::cos(1.0));
}

TEST(Sinusoid, NegationParity) {
  const auto plus = flatner::sinusoid<double>(9, 12);
  const auto minus = flatner::sinusoid<double>(-9, 12);
  for (std::size_t k = 0; 2 * k < 12; ++k) {
    EXPECT_DOUBLE_EQ(minus[2 * k], -plus[2 * k]);
    EXPECT_DOUBLE_EQ(minus[2 * k + 1], plus[2 * k + 1]);
  }
}

TEST(Sinusoid, Bounded) {
  for (int pos : {-128, -17, -1, 0, 1, 23, 127})
    for (double x : flatner::sinusoid<double>(pos, 32)) {
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
}

TEST(Sinusoid, OddDimensionRejected) {
  EXPECT_THROW(flatner::sinusoid<double>(1, 7), validation_error);
  EXPECT_THROW(flatner::SinusoidCache<double>(5), validation_error);
}

TEST(Sinusoid, CacheReturnsSameValues) {
  flatner::SinusoidCache<double> cache(8);
  const auto& a = cache.get(-3);
  const auto direct = flatner::sinusoid<double>(-3, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a[i], direct[i]);
  EXPECT_EQ(&cache.get(-3), &a);
}

TEST(RelativeEncoding, ZeroWeightGivesZero) {
  const auto lat = mixed_lattice();
  const auto r = encode(lat, Array<double>({6, 24}));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], 0.0);
}

TEST(RelativeEncoding, NonNegativeAfterRelu) {
  Rng rng(31);
  const auto r = encode(mixed_lattice(), random_wr(6, rng));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_GE(r[i], 0.0);
}

TEST(RelativeEncoding, TranslationInvarianceBitwise) {
  Rng rng(32);
  const auto wr = random_wr(6, rng);
  const auto lat = mixed_lattice();
  FlatLattice shifted = lat;
  for (auto& c : shifted.cells) {
    c.head += 7;
    c.tail += 7;
  }
  const auto a = encode(lat, wr);
  const auto b = encode(shifted, wr);
  EXPECT_TRUE(a == b);
}

TEST(RelativeEncoding, DirectionalDistinguishability) {
  // A pair at distance +k must encode differently from the pair at -k;
  // otherwise attention cannot tell left from right.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(flatner::derive_seed(40, "posenc-test") + seed);
    const std::size_t d = 8;
    const auto wr = random_wr(d, rng);
    Tape<double> t;
    Var w = t.leaf(wr, false);
    flatner::SinusoidCache<double> cache(d);
    for (int k = 1; k <= 5; ++k) {
      FlatLattice pair;
      pair.n = 0;
      pair.m = 0;
      pair.cells = {word_at(1), word_at(1 + k)};
      auto enc = flatner::relative_encoding(t, pair, w, cache);
      const auto& r = t.val(flatner::materialize_encoding(t, enc));
      // Row 0*2+1 is R(cell0, cell1) at distance -k; row 1*2+0 is +k.
      bool differ = false;
      for (std::size_t c = 0; c < d; ++c)
        if (r.at(1, c) != r.at(2, c)) differ = true;
      EXPECT_TRUE(differ) << "seed " << seed << " k " << k;
    }
  }
}

TEST(RelativeEncoding, DeduplicatesRepeatedQuads) {
  const auto lat = build_lattice({1, 2, 3, 4, 5, 6, 7, 8}, {});
  Tape<double> t;
  Var w = t.leaf(Array<double>({4, 16}, 0.1), false);
  flatner::SinusoidCache<double> cache(4);
  auto enc = flatner::relative_encoding(t, lat, w, cache);
  const std::size_t len = lat.size();
  EXPECT_EQ(enc.length, len);
  EXPECT_EQ(enc.pair_index.size(), len * len);
  // Word-only lattice: quads depend only on position difference, so there
  // are exactly 2L-1 distinct values.
  EXPECT_EQ(t.val(enc.unique).rows(), 2 * len - 1);
  // Same-diagonal pairs share a row.
  EXPECT_EQ(enc.pair_index[0 * len + 1], enc.pair_index[3 * len + 4]);
}

TEST(RelativeEncoding, MaterializedRowsFollowPairIndex) {
  Rng rng(33);
  const auto lat = mixed_lattice();
  Tape<double> t;
  Var w = t.leaf(random_wr(6, rng), false);
  flatner::SinusoidCache<double> cache(6);
  auto enc = flatner::relative_encoding(t, lat, w, cache);
  const auto& uniq = t.val(enc.unique);
  const auto& full = t.val(flatner::materialize_encoding(t, enc));
  ASSERT_EQ(full.rows(), lat.size() * lat.size());
  for (std::size_t p = 0; p < enc.pair_index.size(); ++p)
    for (std::size_t c = 0; c < 6; ++c)
      EXPECT_EQ(full.at(p, c), uniq.at(enc.pair_index[p], c));
}

TEST(RelativeEncoding, GradientFlowsToProjection) {
  Rng rng(34);
  const auto lat = mixed_lattice();
  const auto wr = random_wr(4, rng);
  auto loss_value = [&](const Array<double>& w) {
    Tape<double> t;
    Var wv = t.leaf(w, true);
    flatner::SinusoidCache<double> cache(4);
    auto enc = flatner::relative_encoding(t, lat, wv, cache);
    return t.val(t.sum_all(flatner::materialize_encoding(t, enc)))[0];
  };
  Tape<double> t;
  Var wv = t.leaf(wr, true);
  flatner::SinusoidCache<double> cache(4);
  auto enc = flatner::relative_encoding(t, lat, wv, cache);
  t.backward(t.sum_all(flatner::materialize_encoding(t, enc)));
  const auto analytic = t.grad(wv);
  const double h = 1e-6;
  double max_rel = 0;
  for (std::size_t i = 0; i < wr.size(); ++i) {
    Array<double> plus = wr, minus = wr;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (loss_value(plus) - loss_value(minus)) / (2 * h);
    max_rel = std::max(max_rel, std::abs(analytic[i] - fd) /
                                    std::max({std::abs(analytic[i]), std::abs(fd), 1e-6}));
  }
  EXPECT_LT(max_rel, 1e-4);
}

TEST(RelativeEncoding, WeightShapeValidated) {
  Tape<double> t;
  flatner::SinusoidCache<double> cache(6);
  Var bad = t.leaf(Array<double>({6, 20}, 0.0), false);
  EXPECT_THROW(flatner::relative_encoding(t, mixed_lattice(), bad, cache), validation_error);
  Var ok_w = t.leaf(Array<double>({4, 16}, 0.0), false);
  EXPECT_THROW(flatner::relative_encoding(t, mixed_lattice(), ok_w, cache), validation_error);
}
