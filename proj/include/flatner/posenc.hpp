#pragma once

#include <cmath>
#include <cstddef>
#include <unordered_map>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/autograd.hpp"
#include "flatner/common.hpp"
#include "flatner/lattice.hpp"

namespace flatner {

// The four head/tail distances between two cells. For word-word pairs all
// four coincide; the off-diagonal components encode span extent.
struct DistanceQuad {
  int hh = 0;
  int ht = 0;
  int th = 0;
  int tt = 0;

  bool operator==(const DistanceQuad&) const = default;
};

inline DistanceQuad distance_quad(const Cell& ci, const Cell& cj) {
  return {ci.head - cj.head, ci.head - cj.tail, ci.tail - cj.head, ci.tail - cj.tail};
}

// Fixed sinusoid expansion of a signed position: even components
// sin(pos / 10000^(2k/d)), odd components cos of the same argument.
template <typename T>
std::vector<T> sinusoid(int pos, std::size_t d) {
  require(d >= 2 && d % 2 == 0, cat("sinusoid: dimension must be even and >= 2, got ", d));
  std::vector<T> out(d);
  for (std::size_t k = 0; 2 * k < d; ++k) {
    const double freq =
        std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(d));
    const double arg = static_cast<double>(pos) / freq;
    out[2 * k] = static_cast<T>(std::sin(arg));
    out[2 * k + 1] = static_cast<T>(std::cos(arg));
  }
  return out;
}

// Distances repeat heavily across a lattice, so sinusoids are memoized by
// position value.
template <typename T>
class SinusoidCache {
 public:
  explicit SinusoidCache(std::size_t d) : d_(d) {
    require(d >= 2 && d % 2 == 0, cat("sinusoid: dimension must be even and >= 2, got ", d));
  }

  std::size_t dim() const { return d_; }

  const std::vector<T>& get(int pos) {
    auto it = cache_.find(pos);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(pos, sinusoid<T>(pos, d_)).first->second;
  }

 private:
  std::size_t d_;
  std::unordered_map<int, std::vector<T>> cache_;
};

// Relative position encoding for one lattice, deduplicated by distance quad:
// row k of `unique` is ReLU(W_r concat(P_hh, P_ht, P_th, P_tt)) for the k-th
// distinct quad, and pair_index[i*L + j] points each ordered cell pair at its
// row. Downstream code expands per-pair tensors with gather ops, which keeps
// the W_r gradient path intact.
struct RelativeEncoding {
  Var unique;                   // U x d, post-ReLU
  std::vector<int> pair_index;  // L*L entries into `unique`
  std::size_t length = 0;       // L
};

template <typename T>
RelativeEncoding relative_encoding(Tape<T>& tape, const FlatLattice& lat, Var w_r,
                                   SinusoidCache<T>& cache) {
  const Array<T>& w = tape.val(w_r);
  require(w.ndim() == 2 && w.cols() == 4 * w.rows(),
          cat("relative encoding: weight must be d x 4d, got ", shape_str(w.shape())));
  const std::size_t d = w.rows();
  require(cache.dim() == d, cat("relative encoding: sinusoid dim ", cache.dim(), " for d=", d));
  const std::size_t len = lat.size();

  struct QuadKey {
    DistanceQuad q;
    bool operator==(const QuadKey&) const = default;
  };
  struct QuadHash {
    std::size_t operator()(const QuadKey& k) const {
      std::uint64_t h = 1469598103934665603ull;
      for (int v : {k.q.hh, k.q.ht, k.q.th, k.q.tt}) {
        h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
        h *= 1099511628211ull;
      }
      return static_cast<std::size_t>(h);
    }
  };

  std::unordered_map<QuadKey, int, QuadHash> seen;
  std::vector<DistanceQuad> quads;
  RelativeEncoding enc;
  enc.length = len;
  enc.pair_index.resize(len * len);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < len; ++j) {
      const DistanceQuad q = distance_quad(lat.cells[i], lat.cells[j]);
      auto [it, inserted] = seen.emplace(QuadKey{q}, static_cast<int>(quads.size()));
      if (inserted) quads.push_back(q);
      enc.pair_index[i * len + j] = it->second;
    }

  Array<T> stacked({quads.size(), 4 * d});
  for (std::size_t u = 0; u < quads.size(); ++u) {
    T* row = stacked.data() + u * 4 * d;
    const auto& q = quads[u];
    int parts[4] = {q.hh, q.ht, q.th, q.tt};
    for (int p = 0; p < 4; ++p) {
      const std::vector<T>& s = cache.get(parts[p]);
      std::copy(s.begin(), s.end(), row + static_cast<std::size_t>(p) * d);
    }
  }
  enc.unique = tape.relu(tape.matmul(tape.constant(std::move(stacked)), w_r, false, true));
  return enc;
}

// Dense L*L x d view of the encoding (row i*L+j holds R[i][j]); used by tests
// and inspection, not by the attention fast path.
template <typename T>
Var materialize_encoding(Tape<T>& tape, const RelativeEncoding& enc) {
  return tape.gather_rows(enc.unique, enc.pair_index);
}

}  // namespace flatner
