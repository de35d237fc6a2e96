#pragma once

#include <algorithm>
#include <compare>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "flatner/common.hpp"
#include "flatner/tags.hpp"

namespace flatner {

// A typed entity occupying tokens first..last, 1-based inclusive.
struct EntitySpan {
  int first = 0;
  int last = 0;
  std::string type;

  auto operator<=>(const EntitySpan&) const = default;
};

// BIO decoding with one repair rule for ill-formed input: an I-X that does
// not continue an open X entity starts a new X span. On well-formed input
// this is plain maximal-run decoding. Returns spans sorted and deduplicated.
inline std::vector<EntitySpan> extract_spans(const std::vector<std::string>& labels) {
  std::vector<EntitySpan> spans;
  std::string open;  // type of the entity currently being built
  int start = 0;
  auto close = [&](int end) {
    if (!open.empty()) spans.push_back({start, end, open});
    open.clear();
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto [kind, type] = parse_bio(labels[i]);
    const int pos = static_cast<int>(i) + 1;
    if (kind == 'O') {
      close(pos - 1);
    } else if (kind == 'B' || type != open) {
      close(pos - 1);
      open = type;
      start = pos;
    }
  }
  close(static_cast<int>(labels.size()));
  std::sort(spans.begin(), spans.end());
  return spans;
}

// Inverse of extract_spans for a disjoint, in-range span set.
inline std::vector<std::string> spans_to_bio(const std::vector<EntitySpan>& spans,
                                             std::size_t n) {
  std::vector<std::string> labels(n, "O");
  std::vector<EntitySpan> sorted = spans;
  std::sort(sorted.begin(), sorted.end());
  int prev_end = 0;
  for (const auto& s : sorted) {
    require(s.first >= 1 && s.last <= static_cast<int>(n) && s.first <= s.last,
            cat("span [", s.first, ", ", s.last, "] invalid for ", n, " tokens"));
    require(s.first > prev_end, cat("overlapping spans at token ", s.first));
    labels[static_cast<std::size_t>(s.first) - 1] = "B-" + s.type;
    for (int t = s.first + 1; t <= s.last; ++t)
      labels[static_cast<std::size_t>(t) - 1] = "I-" + s.type;
    prev_end = s.last;
  }
  return labels;
}

// Exact-match counts for one slice (a type, or everything pooled).
struct MatchCounts {
  std::size_t tp = 0;
  std::size_t pred = 0;
  std::size_t gold = 0;

  // Empty denominators score zero by convention.
  double precision() const { return pred ? static_cast<double>(tp) / pred : 0.0; }
  double recall() const { return gold ? static_cast<double>(tp) / gold : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

struct MetricsReport {
  MatchCounts overall;                          // micro over all types
  std::map<std::string, MatchCounts> per_type;  // keyed by type name

  std::string render_table() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "type" << std::right << std::setw(9) << "P"
       << std::setw(9) << "R" << std::setw(9) << "F1" << std::setw(7) << "gold" << std::setw(7)
       << "pred" << "\n";
    auto row = [&os](const std::string& name, const MatchCounts& c) {
      os << std::left << std::setw(10) << name << std::right << std::fixed
         << std::setprecision(4) << std::setw(9) << c.precision() << std::setw(9) << c.recall()
         << std::setw(9) << c.f1() << std::setw(7) << c.gold << std::setw(7) << c.pred << "\n";
    };
    for (const auto& [type, counts] : per_type) row(type, counts);
    row("ALL", overall);
    return os.str();
  }

  std::string render_kv() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    auto block = [&os](const std::string& key, const MatchCounts& c) {
      os << key << ".precision\t" << c.precision() << "\n";
      os << key << ".recall\t" << c.recall() << "\n";
      os << key << ".f1\t" << c.f1() << "\n";
      os << key << ".gold\t" << c.gold << "\n";
      os << key << ".pred\t" << c.pred << "\n";
    };
    for (const auto& [type, counts] : per_type) block("type." + type, counts);
    block("overall", overall);
    return os.str();
  }
};

// Micro-averaged exact-match scoring over parallel per-document span sets.
// A prediction counts as a true positive only when boundaries and type all
// agree with a gold span.
inline MetricsReport score(const std::vector<std::vector<EntitySpan>>& gold,
                           const std::vector<std::vector<EntitySpan>>& pred) {
  require(gold.size() == pred.size(),
          cat("score: ", gold.size(), " gold documents vs ", pred.size(), " predicted"));
  auto as_set = [](std::vector<EntitySpan> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  MetricsReport report;
  for (std::size_t doc = 0; doc < gold.size(); ++doc) {
    const auto g = as_set(gold[doc]);
    const auto p = as_set(pred[doc]);
    for (const auto& s : g) {
      ++report.per_type[s.type].gold;
      ++report.overall.gold;
    }
    for (const auto& s : p) {
      ++report.per_type[s.type].pred;
      ++report.overall.pred;
      if (std::binary_search(g.begin(), g.end(), s)) {
        ++report.per_type[s.type].tp;
        ++report.overall.tp;
      }
    }
  }
  return report;
}

}  // namespace flatner
