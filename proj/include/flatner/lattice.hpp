#pragma once

#include <array>
#include <cstddef>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "flatner/common.hpp"

namespace flatner {

enum class Modality { WORD, SPECIAL, VISUAL };

enum class ObjectKind { WHOLE_IMAGE, NOUN_PHRASE, GENERAL_WORD };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::WORD: return "word";
    case Modality::SPECIAL: return "special";
    case Modality::VISUAL: return "visual";
  }
  return "?";
}

inline const char* object_kind_name(ObjectKind k) {
  switch (k) {
    case ObjectKind::WHOLE_IMAGE: return "whole";
    case ObjectKind::NOUN_PHRASE: return "phrase";
    case ObjectKind::GENERAL_WORD: return "general";
  }
  return "?";
}

inline ObjectKind object_kind_from_name(const std::string& s) {
  if (s == "whole") return ObjectKind::WHOLE_IMAGE;
  if (s == "phrase") return ObjectKind::NOUN_PHRASE;
  if (s == "general") return ObjectKind::GENERAL_WORD;
  throw validation_error(cat("unknown object kind: ", s));
}

// Rows of the special-token embedding table.
inline constexpr int kClsRow = 0;
inline constexpr int kSepRow = 1;
inline constexpr int kPadRow = 2;
inline constexpr std::size_t kSpecialRows = 3;

struct ObjectAnnotation {
  int object_id = 0;  // row in the object embedding table
  ObjectKind kind = ObjectKind::WHOLE_IMAGE;
  // 1-based word span, meaningful only for NOUN_PHRASE.
  int span_first = 0;
  int span_last = 0;
};

// One lattice slot. head/tail are word positions: 0 for the leading marker,
// 1..n for words, n+1 for the trailing marker. Visual cells carry the word
// span they are grounded to, not their own slot index.
struct Cell {
  int content = 0;
  Modality modality = Modality::WORD;
  int head = 0;
  int tail = 0;
};

struct FlatLattice {
  std::vector<Cell> cells;  // order: marker, w_1..w_n, marker, o_1..o_m
  std::size_t n = 0;        // word count
  std::size_t m = 0;        // object count

  std::size_t size() const { return cells.size(); }
  std::size_t word_begin() const { return 1; }
};

inline FlatLattice build_lattice(const std::vector<int>& token_ids,
                                 const std::vector<ObjectAnnotation>& objects) {
  require(!token_ids.empty(), "lattice: empty sentence");
  const int n = static_cast<int>(token_ids.size());
  FlatLattice lat;
  lat.n = token_ids.size();
  lat.m = objects.size();
  lat.cells.reserve(lat.n + lat.m + 2);
  lat.cells.push_back({kClsRow, Modality::SPECIAL, 0, 0});
  for (int i = 0; i < n; ++i)
    lat.cells.push_back({token_ids[i], Modality::WORD, i + 1, i + 1});
  lat.cells.push_back({kSepRow, Modality::SPECIAL, n + 1, n + 1});
  for (const auto& obj : objects) {
    Cell c{obj.object_id, Modality::VISUAL, 1, n};
    if (obj.kind == ObjectKind::NOUN_PHRASE) {
      require(obj.span_first >= 1 && obj.span_last <= n && obj.span_first <= obj.span_last,
              cat("lattice: object span [", obj.span_first, ", ", obj.span_last,
                  "] invalid for sentence of ", n, " words"));
      c.head = obj.span_first;
      c.tail = obj.span_last;
    }
    lat.cells.push_back(c);
  }
  return lat;
}

// Disjoint, exhaustive index selectors by modality.
struct ModalitySelectors {
  std::vector<std::size_t> word;
  std::vector<std::size_t> special;
  std::vector<std::size_t> visual;
};

inline ModalitySelectors modality_mask(const FlatLattice& lat) {
  ModalitySelectors sel;
  for (std::size_t i = 0; i < lat.cells.size(); ++i) {
    switch (lat.cells[i].modality) {
      case Modality::WORD: sel.word.push_back(i); break;
      case Modality::SPECIAL: sel.special.push_back(i); break;
      case Modality::VISUAL: sel.visual.push_back(i); break;
    }
  }
  return sel;
}

// (content, modality, head, tail) rows; with lattice_from_rows they form a
// lossless round trip.
inline std::vector<std::array<int, 4>> lattice_rows(const FlatLattice& lat) {
  std::vector<std::array<int, 4>> rows;
  rows.reserve(lat.cells.size());
  for (const auto& c : lat.cells)
    rows.push_back({c.content, static_cast<int>(c.modality), c.head, c.tail});
  return rows;
}

inline FlatLattice lattice_from_rows(const std::vector<std::array<int, 4>>& rows) {
  FlatLattice lat;
  for (const auto& r : rows) {
    require(r[1] >= 0 && r[1] <= 2, cat("lattice row: bad modality code ", r[1]));
    Cell c{r[0], static_cast<Modality>(r[1]), r[2], r[3]};
    require(c.head <= c.tail, cat("lattice row: head ", c.head, " > tail ", c.tail));
    lat.cells.push_back(c);
    if (c.modality == Modality::WORD) ++lat.n;
    if (c.modality == Modality::VISUAL) ++lat.m;
  }
  require(lat.cells.size() == lat.n + lat.m + 2, "lattice rows: expected exactly two markers");
  require(lat.cells.front().modality == Modality::SPECIAL &&
              lat.cells[lat.n + 1].modality == Modality::SPECIAL,
          "lattice rows: markers out of place");
  for (std::size_t i = 1; i <= lat.n; ++i)
    require(lat.cells[i].modality == Modality::WORD &&
                lat.cells[i].head == static_cast<int>(i) && lat.cells[i].tail == static_cast<int>(i),
            cat("lattice rows: word cell ", i, " out of place"));
  return lat;
}

// Aligned text table for the inspect-lattice command. The callback supplies a
// display name for each cell's content id.
template <typename NameFn>
std::string render_lattice(const FlatLattice& lat, NameFn content_name) {
  std::ostringstream os;
  os << std::left << std::setw(5) << "idx" << std::setw(18) << "content" << std::setw(9)
     << "kind" << std::setw(6) << "head" << std::setw(6) << "tail" << "\n";
  for (std::size_t i = 0; i < lat.cells.size(); ++i) {
    const Cell& c = lat.cells[i];
    os << std::left << std::setw(5) << i << std::setw(18) << content_name(c) << std::setw(9)
       << modality_name(c.modality) << std::setw(6) << c.head << std::setw(6) << c.tail << "\n";
  }
  return os.str();
}

}  // namespace flatner
