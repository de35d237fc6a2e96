#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "flatner/common.hpp"

namespace flatner {

// String-to-id table with a reserved unknown row at id 0. Insertion order is
// the id order, so building it from a corpus in reading order is
// reproducible.
class Vocab {
 public:
  static constexpr int kUnknown = 0;

  Vocab() { add("<unk>"); }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    index_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnknown : it->second;
  }

  bool has(const std::string& token) const { return index_.find(token) != index_.end(); }

  const std::string& name(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(),
            cat("vocab id ", id, " outside [0, ", tokens_.size(), ")"));
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

  // One JSON-encoded token per line; safe for arbitrary characters.
  std::vector<std::string> to_lines() const {
    std::vector<std::string> lines;
    lines.reserve(tokens_.size() - 1);
    for (std::size_t i = 1; i < tokens_.size(); ++i)
      lines.push_back(nlohmann::json(tokens_[i]).dump());
    return lines;
  }

  static Vocab from_lines(const std::vector<std::string>& lines) {
    Vocab v;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      nlohmann::json j = nlohmann::json::parse(lines[i], nullptr, false);
      require(j.is_string(), cat("vocab line ", i + 1, " is not a JSON string: ", lines[i]));
      const std::string token = j.get<std::string>();
      require(!v.has(token), cat("vocab line ", i + 1, " duplicates token ", lines[i]));
      v.add(token);
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace flatner
