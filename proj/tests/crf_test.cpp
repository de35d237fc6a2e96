#include "flatner/crf.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/common.hpp"
#include "flatner/gradcheck.hpp"
#include "flatner/params.hpp"
#include "flatner/tags.hpp"

using flatner::Array;
using flatner::CrfVars;
using flatner::Rng;
using flatner::Tape;
using flatner::validation_error;
using flatner::Var;

namespace {

struct Instance {
  Array<double> emissions, trans, start, stop;
};

Instance random_instance(std::size_t n, std::size_t k, Rng& rng, double scale = 2.0) {
  Instance in{Array<double>({n, k}), Array<double>({k, k}), Array<double>({1, k}),
              Array<double>({1, k})};
  auto fill = [&](Array<double>& a) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-scale, scale);
  };
  fill(in.emissions);
  fill(in.trans);
  fill(in.start);
  fill(in.stop);
  return in;
}

double graph_log_partition(const Instance& in, bool no_transitions = false) {
  Tape<double> t;
  Var e = t.leaf(in.emissions, false);
  CrfVars vars{t.leaf(in.trans, false), t.leaf(in.start, false), t.leaf(in.stop, false),
               no_transitions};
  return t.val(crf_log_partition(t, e, vars))[0];
}

double graph_sequence_score(const Instance& in, const std::vector<int>& y) {
  Tape<double> t;
  Var e = t.leaf(in.emissions, false);
  CrfVars vars{t.leaf(in.trans, false), t.leaf(in.start, false), t.leaf(in.stop, false), false};
  return t.val(crf_sequence_score(t, e, vars, y))[0];
}

}  // namespace

TEST(LabelSet, BioLayout) {
  auto s = flatner::LabelSet::bio({"PER", "LOC"});
  ASSERT_EQ(s.size(), 5u);
  EXPECT_EQ(s.id("O"), 0);
  EXPECT_EQ(s.id("B-PER"), 1);
  EXPECT_EQ(s.id("I-PER"), 2);
  EXPECT_EQ(s.id("B-LOC"), 3);
  EXPECT_EQ(s.id("I-LOC"), 4);
  EXPECT_EQ(s.name(3), "B-LOC");
  EXPECT_THROW(s.id("B-ORG"), validation_error);
  EXPECT_THROW(s.name(5), validation_error);
}

TEST(LabelSet, BoundaryLayout) {
  auto s = flatner::LabelSet::boundary();
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.id("B"), 0);
  EXPECT_EQ(s.id("E"), 1);
  EXPECT_EQ(s.id("O"), 2);
}

TEST(LabelSet, WellFormedness) {
  EXPECT_TRUE(flatner::well_formed_bio({"O", "B-PER", "I-PER", "O"}));
  EXPECT_TRUE(flatner::well_formed_bio({"B-LOC"}));
  EXPECT_TRUE(flatner::well_formed_bio({}));
  EXPECT_FALSE(flatner::well_formed_bio({"I-PER"}));
  EXPECT_FALSE(flatner::well_formed_bio({"O", "I-LOC"}));
  EXPECT_FALSE(flatner::well_formed_bio({"B-PER", "I-LOC"}));
  EXPECT_EQ(flatner::first_bio_violation({"B-PER", "I-PER", "I-LOC"}), 2);
  EXPECT_THROW(flatner::parse_bio("PER"), validation_error);
  EXPECT_THROW(flatner::parse_bio("B_PER"), validation_error);
}

TEST(Crf, ZeroParamsScoreZero) {
  Instance in{Array<double>({3, 2}), Array<double>({2, 2}), Array<double>({1, 2}),
              Array<double>({1, 2})};
  for (const auto& y : std::vector<std::vector<int>>{{0, 0, 0}, {1, 0, 1}, {1, 1, 1}}) {
    EXPECT_EQ(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, y), 0.0);
    EXPECT_EQ(graph_sequence_score(in, y), 0.0);
  }
}

TEST(Crf, SingleTokenScore) {
  Instance in{Array<double>::matrix(1, 3, {0.5, -1.0, 2.0}), Array<double>({3, 3}, 9.0),
              Array<double>::matrix(1, 3, {0.1, 0.2, 0.3}),
              Array<double>::matrix(1, 3, {-0.4, 0.0, 0.4})};
  // Transitions never fire for n=1, whatever they contain.
  EXPECT_DOUBLE_EQ(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, {2}),
                   2.0 + 0.3 + 0.4);
  EXPECT_DOUBLE_EQ(graph_sequence_score(in, {2}), 2.0 + 0.3 + 0.4);
}

TEST(Crf, HandSummedScore) {
  Rng rng(21);
  Instance in = random_instance(4, 3, rng);
  const std::vector<int> y{2, 0, 0, 1};
  // Term-by-term reference, written out rather than looped.
  const double expect = in.start[2] + in.emissions.at(0, 2) + in.trans.at(2, 0) +
                        in.emissions.at(1, 0) + in.trans.at(0, 0) + in.emissions.at(2, 0) +
                        in.trans.at(0, 1) + in.emissions.at(3, 1) + in.stop[1];
  EXPECT_NEAR(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, y), expect, 1e-12);
  EXPECT_NEAR(graph_sequence_score(in, y), expect, 1e-12);
}

TEST(Crf, LabelOutOfRangeRejected) {
  Instance in{Array<double>({2, 2}), Array<double>({2, 2}), Array<double>({1, 2}),
              Array<double>({1, 2})};
  EXPECT_THROW(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, {0, 2}),
               validation_error);
  EXPECT_THROW(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, {-1, 0}),
               validation_error);
  EXPECT_THROW(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, {0}),
               validation_error);
}

TEST(Crf, LogPartitionZeroParams) {
  Instance in{Array<double>({2, 2}), Array<double>({2, 2}), Array<double>({1, 2}),
              Array<double>({1, 2})};
  EXPECT_NEAR(graph_log_partition(in), std::log(4.0), 1e-12);
}

TEST(Crf, LogPartitionSingleToken) {
  Instance in{Array<double>::matrix(1, 2, {0.7, -0.2}), Array<double>({2, 2}, 5.0),
              Array<double>::matrix(1, 2, {0.1, 0.3}), Array<double>::matrix(1, 2, {0.2, -0.1})};
  const double a = 0.7 + 0.1 + 0.2;
  const double b = -0.2 + 0.3 - 0.1;
  const double mx = std::max(a, b);
  EXPECT_NEAR(graph_log_partition(in), mx + std::log(std::exp(a - mx) + std::exp(b - mx)), 1e-12);
}

TEST(Crf, OracleSelfConsistency) {
  Rng rng(22);
  Instance in = random_instance(3, 3, rng);
  auto bf = crf_brute_force(in.emissions, in.trans, in.start, in.stop);
  EXPECT_GE(bf.log_z, bf.best_score);
}

TEST(Crf, BruteForceTooLargeRejected) {
  Instance in{Array<double>({8, 10}), Array<double>({10, 10}), Array<double>({1, 10}),
              Array<double>({1, 10})};
  EXPECT_THROW(crf_brute_force(in.emissions, in.trans, in.start, in.stop), validation_error);
}

// Acceptance gate: forward recursion and Viterbi agree with exhaustive
// enumeration on 200 random small instances.
TEST(Crf, OracleEquivalence200Cases) {
  Rng rng(777);
  const auto t0 = std::chrono::steady_clock::now();
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t k = 1 + rng.below(5);
    Instance in = random_instance(n, k, rng);
    auto bf = crf_brute_force(in.emissions, in.trans, in.start, in.stop);
    EXPECT_NEAR(graph_log_partition(in), bf.log_z, 1e-8) << "case " << c << " n=" << n
                                                         << " k=" << k;
    auto vit = viterbi(in.emissions, in.trans, in.start, in.stop);
    EXPECT_NEAR(vit.score, bf.best_score, 1e-9) << "case " << c;
    // The decoded path must actually realize the optimum.
    EXPECT_NEAR(sequence_score_plain(in.emissions, in.trans, in.start, in.stop, vit.labels),
                bf.best_score, 1e-9)
        << "case " << c;
    ASSERT_EQ(vit.labels.size(), n);
    for (int l : vit.labels) {
      EXPECT_GE(l, 0);
      EXPECT_LT(l, static_cast<int>(k));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 10.0);
}

TEST(Crf, ViterbiTieBreaksTowardLowestLabel) {
  // All-zero parameters make every sequence tie; the decoder must pick all 0s.
  Instance in{Array<double>({3, 2}), Array<double>({2, 2}), Array<double>({1, 2}),
              Array<double>({1, 2})};
  auto vit = viterbi(in.emissions, in.trans, in.start, in.stop);
  EXPECT_EQ(vit.labels, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(vit.score, 0.0);
}

TEST(Crf, ViterbiStrongEmissions) {
  Array<double> e({4, 2});
  for (std::size_t t = 0; t < 4; ++t) {
    e.at(t, 0) = 10.0;
    e.at(t, 1) = -10.0;
  }
  Instance in{e, Array<double>({2, 2}), Array<double>({1, 2}), Array<double>({1, 2})};
  auto vit = viterbi(in.emissions, in.trans, in.start, in.stop);
  EXPECT_EQ(vit.labels, (std::vector<int>{0, 0, 0, 0}));
}

TEST(Crf, ViterbiSingleTokenArgmax) {
  Instance in{Array<double>::matrix(1, 3, {0.0, 5.0, 1.0}), Array<double>({3, 3}),
              Array<double>::matrix(1, 3, {0.0, 0.0, 7.0}),
              Array<double>::matrix(1, 3, {1.0, 0.0, 0.0})};
  auto vit = viterbi(in.emissions, in.trans, in.start, in.stop);
  EXPECT_EQ(vit.labels, (std::vector<int>{2}));
  EXPECT_DOUBLE_EQ(vit.score, 8.0);
}

TEST(Crf, EmissionShiftInvariance) {
  Rng rng(23);
  Instance in = random_instance(5, 3, rng);
  Instance shifted = in;
  const double c = 1.7;
  for (std::size_t i = 0; i < shifted.emissions.size(); ++i) shifted.emissions[i] += c;
  const std::vector<int> y{0, 2, 1, 1, 0};
  const double n = 5;
  EXPECT_NEAR(graph_log_partition(shifted), graph_log_partition(in) + n * c, 1e-9);
  EXPECT_NEAR(graph_sequence_score(shifted, y), graph_sequence_score(in, y) + n * c, 1e-12);
  EXPECT_EQ(viterbi(shifted.emissions, shifted.trans, shifted.start, shifted.stop).labels,
            viterbi(in.emissions, in.trans, in.start, in.stop).labels);
}

TEST(Crf, NllZeroParamsIsNLogK) {
  Instance in{Array<double>({4, 3}), Array<double>({3, 3}), Array<double>({1, 3}),
              Array<double>({1, 3})};
  Tape<double> t;
  Var e = t.leaf(in.emissions, false);
  CrfVars vars{t.leaf(in.trans, false), t.leaf(in.start, false), t.leaf(in.stop, false), false};
  Var nll = crf_nll(t, e, vars, {0, 1, 2, 0});
  EXPECT_NEAR(t.val(nll)[0], 4.0 * std::log(3.0), 1e-12);
}

TEST(Crf, NllGivesValidProbability) {
  Rng rng(24);
  for (int c = 0; c < 20; ++c) {
    Instance in = random_instance(1 + rng.below(5), 2 + rng.below(3), rng);
    std::vector<int> y(in.emissions.rows());
    for (auto& l : y) l = static_cast<int>(rng.below(in.emissions.cols()));
    Tape<double> t;
    Var e = t.leaf(in.emissions, false);
    CrfVars vars{t.leaf(in.trans, false), t.leaf(in.start, false), t.leaf(in.stop, false), false};
    const double nll = t.val(crf_nll(t, e, vars, y))[0];
    EXPECT_GE(nll, -1e-9);
    const double p = std::exp(-nll);
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0 + 1e-12);
  }
}

TEST(Crf, LogPartitionDominatesEveryScore) {
  Rng rng(25);
  Instance in = random_instance(3, 3, rng);
  const double log_z = graph_log_partition(in);
  std::vector<int> y(3);
  for (y[0] = 0; y[0] < 3; ++y[0])
    for (y[1] = 0; y[1] < 3; ++y[1])
      for (y[2] = 0; y[2] < 3; ++y[2])
        EXPECT_GE(log_z + 1e-9, sequence_score_plain(in.emissions, in.trans, in.start, in.stop, y));
}

TEST(Crf, NllGradientMatchesFiniteDifferences) {
  Rng rng(26);
  const std::size_t n = 4, k = 3, d = 5;
  Array<double> h({n, d});
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.uniform(-1, 1);
  const std::vector<int> y{1, 0, 2, 2};

  flatner::ParamStore<double> params;
  auto rand_param = [&](flatner::Shape s) {
    Array<double> a(s);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-0.5, 0.5);
    return a;
  };
  params.add("crf.w", rand_param({k, d}));
  params.add("crf.b", rand_param({1, k}));
  params.add("crf.trans", rand_param({k, k}));
  params.add("crf.start", rand_param({1, k}));
  params.add("crf.stop", rand_param({1, k}));

  auto loss_of = [&](const flatner::ParamStore<double>& p, flatner::ParamStore<double>* grads) {
    Tape<double> t;
    Var hv = t.leaf(h, false);
    Var w = t.leaf(p.get("crf.w"), true);
    Var b = t.leaf(p.get("crf.b"), true);
    CrfVars vars{t.leaf(p.get("crf.trans"), true), t.leaf(p.get("crf.start"), true),
                 t.leaf(p.get("crf.stop"), true), false};
    Var nll = crf_nll(t, crf_emissions(t, hv, w, b), vars, y);
    if (grads) {
      t.backward(nll);
      grads->add("crf.w", t.grad(w));
      grads->add("crf.b", t.grad(b));
      grads->add("crf.trans", t.grad(vars.trans));
      grads->add("crf.start", t.grad(vars.start));
      grads->add("crf.stop", t.grad(vars.stop));
    }
    return t.val(nll)[0];
  };

  flatner::ParamStore<double> analytic;
  loss_of(params, &analytic);
  auto report = flatner::grad_check<double>(
      params, analytic, [&](const flatner::ParamStore<double>& p) { return loss_of(p, nullptr); });
  EXPECT_TRUE(report.pass(1e-4)) << report.render();
}

TEST(Crf, NoTransitionsIsPerTokenSoftmax) {
  Rng rng(27);
  Instance in = random_instance(4, 3, rng);
  const std::vector<int> y{2, 1, 0, 1};
  Tape<double> t;
  Var e = t.leaf(in.emissions, false);
  CrfVars vars{t.leaf(in.trans, false), t.leaf(in.start, false), t.leaf(in.stop, false), true};
  const double log_z = t.val(crf_log_partition(t, e, vars))[0];
  const double score = t.val(crf_sequence_score(t, e, vars, y))[0];
  double want_z = 0, want_s = 0;
  for (std::size_t tt = 0; tt < 4; ++tt) {
    double mx = in.emissions.at(tt, 0);
    for (std::size_t j = 1; j < 3; ++j) mx = std::max(mx, in.emissions.at(tt, j));
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += std::exp(in.emissions.at(tt, j) - mx);
    want_z += mx + std::log(s);
    want_s += in.emissions.at(tt, y[tt]);
  }
  EXPECT_NEAR(log_z, want_z, 1e-12);
  EXPECT_NEAR(score, want_s, 1e-12);
}
