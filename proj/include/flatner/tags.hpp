#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "flatner/common.hpp"

namespace flatner {

// A fixed label alphabet with stable integer ids. Two instantiations are
// used: BIO labels over the entity types (O first, then B-X/I-X per type in
// the configured order) and the boundary alphabet {B, E, O}.
class LabelSet {
 public:
  static LabelSet bio(const std::vector<std::string>& types) {
    require(!types.empty(), "label set needs at least one entity type");
    LabelSet s;
    s.types_ = types;
    s.push("O");
    for (const auto& t : types) {
      require(!t.empty() && t.find('-') == std::string::npos, cat("bad entity type name: ", t));
      s.push("B-" + t);
      s.push("I-" + t);
    }
    return s;
  }

  static LabelSet boundary() {
    LabelSet s;
    s.push("B");
    s.push("E");
    s.push("O");
    return s;
  }

  std::size_t size() const { return labels_.size(); }

  int id(const std::string& label) const {
    auto it = index_.find(label);
    require(it != index_.end(), cat("unknown label: ", label));
    return it->second;
  }

  bool has(const std::string& label) const { return index_.find(label) != index_.end(); }

  const std::string& name(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < labels_.size(),
            cat("label id ", id, " outside [0, ", labels_.size(), ")"));
    return labels_[id];
  }

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& types() const { return types_; }

  std::vector<int> ids(const std::vector<std::string>& labels) const {
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(id(l));
    return out;
  }

  std::vector<std::string> names(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(name(i));
    return out;
  }

 private:
  void push(const std::string& label) {
    index_[label] = static_cast<int>(labels_.size());
    labels_.push_back(label);
  }

  std::vector<std::string> labels_;
  std::vector<std::string> types_;
  std::unordered_map<std::string, int> index_;
};

// Split "B-PER" into ('B', "PER"); "O" into ('O', ""). Rejects anything else.
inline std::pair<char, std::string> parse_bio(const std::string& label) {
  if (label == "O") return {'O', ""};
  if (label.size() >= 3 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-')
    return {label[0], label.substr(2)};
  throw validation_error(cat("malformed BIO label: ", label));
}

// Well-formed means every I-X continues a run opened by B-X or I-X of the
// same type. Returns the index of the first violation, or -1 if clean.
inline int first_bio_violation(const std::vector<std::string>& labels) {
  std::string open;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [kind, type] = parse_bio(labels[i]);
    if (kind == 'I' && type != open) return static_cast<int>(i);
    open = kind == 'O' ? "" : type;
  }
  return -1;
}

inline bool well_formed_bio(const std::vector<std::string>& labels) {
  return first_bio_violation(labels) < 0;
}

}  // namespace flatner
