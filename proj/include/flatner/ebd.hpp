#pragma once

#include <string>
#include <vector>

#include "flatner/autograd.hpp"
#include "flatner/common.hpp"
#include "flatner/tags.hpp"

namespace flatner {

// Boundary alphabet ids, matching LabelSet::boundary() order.
inline constexpr int kBoundaryB = 0;
inline constexpr int kBoundaryE = 1;
inline constexpr int kBoundaryO = 2;

// Strips a BIO sequence down to entity boundaries: the first token of each
// entity becomes B, the last token of a multi-token entity becomes E, and
// everything else (interior tokens included) becomes O. A single-token
// entity keeps only its head mark. Entity types never influence the result.
inline std::vector<int> decompose_boundaries(const std::vector<std::string>& bio) {
  const int bad = first_bio_violation(bio);
  if (bad >= 0)
    throw validation_error(cat("boundary decomposition needs well-formed BIO; position ", bad,
                               " is ", bio[static_cast<std::size_t>(bad)]));
  std::vector<int> out(bio.size(), kBoundaryO);
  std::size_t i = 0;
  while (i < bio.size()) {
    auto [kind, type] = parse_bio(bio[i]);
    if (kind != 'B') {
      ++i;
      continue;
    }
    std::size_t last = i;
    while (last + 1 < bio.size()) {
      auto [nk, nt] = parse_bio(bio[last + 1]);
      if (nk != 'I' || nt != type) break;
      ++last;
    }
    out[i] = kBoundaryB;
    if (last > i) out[last] = kBoundaryE;
    i = last + 1;
  }
  return out;
}

inline std::vector<int> decompose_boundaries(const std::vector<int>& bio_ids,
                                             const LabelSet& labels) {
  return decompose_boundaries(labels.names(bio_ids));
}

// Training objective: main-task NLL plus lambda times the boundary-task NLL.
// At lambda = 0 the main loss is returned untouched, so the combined graph is
// the exact graph a boundary-free build would produce.
template <typename T>
Var joint_loss(Tape<T>& tape, Var nll_main, Var nll_ebd, double lambda) {
  require(lambda >= 0.0, cat("joint loss: lambda must be nonnegative, got ", lambda));
  if (lambda == 0.0) return nll_main;
  return tape.add(nll_main, tape.scale(nll_ebd, static_cast<T>(lambda)));
}

}  // namespace flatner
