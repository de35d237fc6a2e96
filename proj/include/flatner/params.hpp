#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/common.hpp"

namespace flatner {

// Named parameter tensors in a stable insertion order. The order defines the
// serialization layout, so it must be deterministic across runs.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Array<T> value) {
    require(!name.empty(), "param name must not be empty");
    require(index_.find(name) == index_.end(), cat("duplicate param: ", name));
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(value));
  }

  bool has(const std::string& name) const { return index_.find(name) != index_.end(); }

  const Array<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), cat("unknown param: ", name));
    return entries_[it->second].second;
  }

  Array<T>& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), cat("unknown param: ", name));
    return entries_[it->second].second;
  }

  std::size_t count() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  const std::vector<std::pair<std::string, Array<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Array<T>>>& entries() { return entries_; }

  bool all_finite() const {
    for (const auto& e : entries_)
      if (!e.second.all_finite()) return false;
    return true;
  }

  bool operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first != o.entries_[i].first || !(entries_[i].second == o.entries_[i].second))
        return false;
    return true;
  }

 private:
  std::vector<std::pair<std::string, Array<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace flatner
