#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/autograd.hpp"
#include "flatner/common.hpp"

namespace flatner {

// Linear-chain CRF over per-token emission scores. The score of a label
// sequence y is
//   sum_t emissions[t][y_t] + sum_{t>0} trans[y_{t-1}][y_t]
//   + start[y_0] + stop[y_{n-1}]
// Shapes: emissions n x K, trans K x K (row = from, col = to), start/stop 1 x K.

namespace detail {

template <typename T>
void check_crf_shapes(const Array<T>& emissions, const Array<T>& trans, const Array<T>& start,
                      const Array<T>& stop) {
  require(emissions.ndim() == 2 && emissions.rows() >= 1,
          cat("crf: emissions must be n x K with n >= 1, got ", shape_str(emissions.shape())));
  const std::size_t k = emissions.cols();
  require(k >= 1, "crf: label set must be nonempty");
  require(trans.ndim() == 2 && trans.rows() == k && trans.cols() == k,
          cat("crf: transitions must be ", k, " x ", k, ", got ", shape_str(trans.shape())));
  require(start.size() == k && stop.size() == k,
          cat("crf: start/stop must have ", k, " entries, got ", shape_str(start.shape()), " and ",
              shape_str(stop.shape())));
}

template <typename T>
void check_labels(const std::vector<int>& y, std::size_t n, std::size_t k) {
  require(y.size() == n, cat("crf: ", y.size(), " labels for ", n, " tokens"));
  for (std::size_t t = 0; t < n; ++t)
    require(y[t] >= 0 && static_cast<std::size_t>(y[t]) < k,
            cat("crf: label ", y[t], " at position ", t, " outside [0, ", k, ")"));
}

}  // namespace detail

// ---- Test oracles and decoding on plain arrays (no autodiff) ----

template <typename T>
T sequence_score_plain(const Array<T>& emissions, const Array<T>& trans, const Array<T>& start,
                       const Array<T>& stop, const std::vector<int>& y) {
  detail::check_crf_shapes(emissions, trans, start, stop);
  const std::size_t n = emissions.rows(), k = emissions.cols();
  detail::check_labels<T>(y, n, k);
  T score = start[y[0]] + stop[y[n - 1]];
  for (std::size_t t = 0; t < n; ++t) {
    score += emissions.at(t, y[t]);
    if (t > 0) score += trans.at(y[t - 1], y[t]);
  }
  return score;
}

template <typename T>
struct BruteForceResult {
  T log_z = 0;
  T best_score = 0;
  std::vector<int> best;
};

// Exhaustive enumeration of all K^n sequences. Reference implementation for
// testing the forward recursion and Viterbi; refuses instances where the
// enumeration would not be exact and fast.
template <typename T>
BruteForceResult<T> crf_brute_force(const Array<T>& emissions, const Array<T>& trans,
                                    const Array<T>& start, const Array<T>& stop) {
  detail::check_crf_shapes(emissions, trans, start, stop);
  const std::size_t n = emissions.rows(), k = emissions.cols();
  double total = 1;
  for (std::size_t t = 0; t < n; ++t) {
    total *= static_cast<double>(k);
    require(total <= 1e6, cat("crf_brute_force: K^n exceeds 1e6 for K=", k, ", n=", n));
  }
  BruteForceResult<T> res;
  res.best_score = -std::numeric_limits<T>::infinity();
  std::vector<T> scores;
  scores.reserve(static_cast<std::size_t>(total));
  std::vector<int> y(n, 0);
  while (true) {
    const T s = sequence_score_plain(emissions, trans, start, stop, y);
    scores.push_back(s);
    if (s > res.best_score) {
      res.best_score = s;
      res.best = y;
    }
    std::size_t t = n;
    while (t-- > 0) {
      if (++y[t] < static_cast<int>(k)) break;
      y[t] = 0;
      if (t == 0) {
        T mx = res.best_score;
        T sum = 0;
        for (T v : scores) sum += std::exp(v - mx);
        res.log_z = mx + std::log(sum);
        return res;
      }
    }
  }
}

template <typename T>
struct ViterbiResult {
  std::vector<int> labels;
  T score = 0;
};

// Max-product decoding. Ties are broken toward the lowest label index, both
// for backpointers and for the final state.
template <typename T>
ViterbiResult<T> viterbi(const Array<T>& emissions, const Array<T>& trans, const Array<T>& start,
                         const Array<T>& stop) {
  detail::check_crf_shapes(emissions, trans, start, stop);
  const std::size_t n = emissions.rows(), k = emissions.cols();
  std::vector<T> dp(k);
  std::vector<std::vector<int>> back(n, std::vector<int>(k, 0));
  for (std::size_t y = 0; y < k; ++y) dp[y] = start[y] + emissions.at(0, y);
  std::vector<T> next(k);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < k; ++y) {
      T best = dp[0] + trans.at(0, y);
      int arg = 0;
      for (std::size_t p = 1; p < k; ++p) {
        const T cand = dp[p] + trans.at(p, y);
        if (cand > best) {
          best = cand;
          arg = static_cast<int>(p);
        }
      }
      next[y] = best + emissions.at(t, y);
      back[t][y] = arg;
    }
    dp = next;
  }
  ViterbiResult<T> res;
  res.labels.assign(n, 0);
  T best = dp[0] + stop[0];
  int arg = 0;
  for (std::size_t y = 1; y < k; ++y) {
    const T cand = dp[y] + stop[y];
    if (cand > best) {
      best = cand;
      arg = static_cast<int>(y);
    }
  }
  res.score = best;
  res.labels[n - 1] = arg;
  for (std::size_t t = n - 1; t > 0; --t) res.labels[t - 1] = back[t][res.labels[t]];
  return res;
}

// ---- Differentiable graph construction ----

// Tape handles for the CRF parameters. With no_transitions set, the pairwise
// and boundary terms are dropped from the score entirely, which reduces the
// model to an independent per-token softmax (the literal single-argument
// reading of the scoring function).
struct CrfVars {
  Var trans;
  Var start;
  Var stop;
  bool no_transitions = false;
};

// H (n x d) -> emission scores (n x K) via W (K x d) and b (1 x K).
template <typename T>
Var crf_emissions(Tape<T>& tape, Var h, Var w, Var b) {
  return tape.add_rowvec(tape.matmul(h, w, false, true), b);
}

template <typename T>
Var crf_sequence_score(Tape<T>& tape, Var emissions, const CrfVars& vars,
                       const std::vector<int>& y) {
  const Array<T>& e = tape.val(emissions);
  const std::size_t n = e.rows(), k = e.cols();
  detail::check_labels<T>(y, n, k);
  std::vector<std::size_t> emit_idx(n);
  for (std::size_t t = 0; t < n; ++t) emit_idx[t] = t * k + static_cast<std::size_t>(y[t]);
  Var score = tape.sum_all(tape.pick(emissions, emit_idx));
  if (vars.no_transitions) return score;
  if (n > 1) {
    std::vector<std::size_t> trans_idx(n - 1);
    for (std::size_t t = 1; t < n; ++t)
      trans_idx[t - 1] = static_cast<std::size_t>(y[t - 1]) * k + static_cast<std::size_t>(y[t]);
    score = tape.add(score, tape.sum_all(tape.pick(vars.trans, trans_idx)));
  }
  score = tape.add(score, tape.sum_all(tape.pick(vars.start, {static_cast<std::size_t>(y[0])})));
  score =
      tape.add(score, tape.sum_all(tape.pick(vars.stop, {static_cast<std::size_t>(y[n - 1])})));
  return score;
}

// Forward recursion in log space:
//   alpha_1[y]     = emissions[0][y] + start[y]
//   alpha_{t+1}[y] = logsumexp_{y'} (alpha_t[y'] + trans[y'][y]) + emissions[t+1][y]
//   logZ           = logsumexp_y (alpha_n[y] + stop[y])
template <typename T>
Var crf_log_partition(Tape<T>& tape, Var emissions, const CrfVars& vars) {
  const Array<T>& e = tape.val(emissions);
  require(e.rows() >= 1, "crf: empty sentence");
  const std::size_t n = e.rows(), k = e.cols();
  if (vars.no_transitions) {
    // Independent positions: logZ = sum_t logsumexp_y emissions[t][y].
    return tape.sum_all(tape.logsumexp_over_cols(emissions));
  }
  const Array<T>& tr = tape.val(vars.trans);
  require(tr.rows() == k && tr.cols() == k,
          cat("crf: transitions ", shape_str(tr.shape()), " for K=", k));
  Var alpha = tape.reshape(
      tape.add(tape.slice_rows(emissions, 0, 1), tape.reshape(vars.start, {1, k})), {k, 1});
  for (std::size_t t = 1; t < n; ++t) {
    Var scores = tape.add_colvec(vars.trans, alpha);
    Var lse = tape.logsumexp_over_rows(scores);
    alpha = tape.reshape(tape.add(lse, tape.slice_rows(emissions, t, 1)), {k, 1});
  }
  Var final_scores = tape.add(alpha, tape.reshape(vars.stop, {k, 1}));
  return tape.logsumexp_over_rows(final_scores);
}

// Negative log-likelihood of the gold sequence; nonnegative up to rounding.
template <typename T>
Var crf_nll(Tape<T>& tape, Var emissions, const CrfVars& vars, const std::vector<int>& y) {
  return tape.sub(crf_log_partition(tape, emissions, vars),
                  crf_sequence_score(tape, emissions, vars, y));
}

}  // namespace flatner
