#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/common.hpp"
#include "flatner/params.hpp"

namespace flatner {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts need byte swapping");

// Checkpoint layout, all text until the payload marker:
//
//   flatner-checkpoint v1
//   precision f32|f64
//   [section-name]
//   ...free-form lines owned by the caller...
//   [params]
//   <name> <dim0> <dim1> ...
//   [payload]
//   <raw little-endian floats, concatenated in [params] order>
//
// Sections before [params] carry config, label sets and vocabularies; this
// module treats them as opaque ordered lines so the format has one writer
// and one parser.

using CheckpointSections = std::vector<std::pair<std::string, std::vector<std::string>>>;

namespace detail {

template <typename T>
constexpr const char* precision_name() {
  if constexpr (sizeof(T) == 4)
    return "f32";
  else
    return "f64";
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const CheckpointSections& sections) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), cat("cannot open checkpoint for writing: ", path));
  out << "flatner-checkpoint v1\n";
  out << "precision " << detail::precision_name<T>() << "\n";
  for (const auto& [name, lines] : sections) {
    require(name != "params" && name != "payload", cat("reserved section name: ", name));
    out << "[" << name << "]\n";
    for (const auto& line : lines) out << line << "\n";
  }
  out << "[params]\n";
  for (const auto& [name, value] : params.entries()) {
    require(name.find(' ') == std::string::npos && name.find('\n') == std::string::npos,
            cat("param name unsafe for manifest: ", name));
    out << name;
    for (std::size_t e : value.shape()) out << " " << e;
    out << "\n";
  }
  out << "[payload]\n";
  for (const auto& [name, value] : params.entries())
    out.write(reinterpret_cast<const char*>(value.data()),
              static_cast<std::streamsize>(value.size() * sizeof(T)));
  require(out.good(), cat("write failed: ", path));
}

// Reads only the header line pair, so callers can pick the right precision
// before instantiating the typed loader.
inline std::string checkpoint_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), cat("cannot open checkpoint: ", path));
  std::string magic, prec_key, prec;
  std::getline(in, magic);
  require(magic == "flatner-checkpoint v1", cat(path, ": not a checkpoint (bad magic)"));
  in >> prec_key >> prec;
  require(prec_key == "precision" && (prec == "f32" || prec == "f64"),
          cat(path, ": malformed precision line"));
  return prec;
}

template <typename T>
struct LoadedCheckpoint {
  ParamStore<T> params;
  CheckpointSections sections;

  const std::vector<std::string>& section(const std::string& name) const {
    for (const auto& [n, lines] : sections)
      if (n == name) return lines;
    throw validation_error(cat("checkpoint has no [", name, "] section"));
  }

  bool has_section(const std::string& name) const {
    for (const auto& [n, lines] : sections)
      if (n == name) return true;
    return false;
  }
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  const std::string prec = checkpoint_precision(path);
  require(prec == detail::precision_name<T>(),
          cat(path, ": precision is ", prec, ", loader expects ", detail::precision_name<T>()));
  std::ifstream in(path, std::ios::binary);
  require(in.good(), cat("cannot open checkpoint: ", path));
  std::string line;
  std::getline(in, line);  // magic
  std::getline(in, line);  // precision
  LoadedCheckpoint<T> ck;
  std::vector<std::pair<std::string, Shape>> manifest;
  std::string current;
  bool in_params = false;
  while (std::getline(in, line)) {
    if (line == "[payload]") {
      require(in_params, cat(path, ": [payload] before [params]"));
      break;
    }
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      in_params = current == "params";
      if (!in_params) ck.sections.emplace_back(current, std::vector<std::string>{});
      continue;
    }
    require(!current.empty(), cat(path, ": content before first section: ", line));
    if (!in_params) {
      ck.sections.back().second.push_back(line);
      continue;
    }
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    Shape shape;
    std::size_t extent;
    while (ls >> extent) shape.push_back(extent);
    require(!name.empty() && !shape.empty(), cat(path, ": malformed manifest line: ", line));
    manifest.emplace_back(name, shape);
  }
  require(in_params, cat(path, ": missing [params] section"));
  for (const auto& [name, shape] : manifest) {
    Array<T> value(shape);
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(T)));
    require(in.gcount() == static_cast<std::streamsize>(value.size() * sizeof(T)),
            cat(path, ": payload truncated at param ", name));
    ck.params.add(name, std::move(value));
  }
  char extra;
  require(!in.read(&extra, 1), cat(path, ": trailing bytes after payload"));
  return ck;
}

}  // namespace flatner
