#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "flatner/common.hpp"
#include "flatner/lattice.hpp"
#include "flatner/tags.hpp"
#include "flatner/vocab.hpp"

namespace flatner {

// One annotated object. The concept is a string here; encoding to an
// embedding row happens against a Vocab at model-input time.
struct SampleObject {
  std::string concept_name;
  ObjectKind kind = ObjectKind::WHOLE_IMAGE;
  // 1-based token span, only meaningful for NOUN_PHRASE.
  int span_first = 0;
  int span_last = 0;

  bool operator==(const SampleObject&) const = default;
};

struct Sample {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
  std::vector<SampleObject> objects;

  bool operator==(const Sample&) const = default;
};

struct Corpus {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test;
};

// ---------------------------------------------------------------------------
// Synthetic corpus generation.
//
// The vocabulary is split into namespaces: context tokens ("ctx<i>") never
// belong to entities, and each entity surface owns its tokens ("e<k>w<j>"),
// so gold labels are a function of the tokens alone -- except for ambiguous
// surfaces, which carry two possible types. Their occurrences alternate
// between the two gold types, and every ambiguous occurrence gets a
// NOUN_PHRASE object whose concept ("cue_<TYPE>") names the true type. That
// makes the image necessary and sufficient for typing ambiguous mentions.
// ---------------------------------------------------------------------------
struct GeneratorSpec {
  std::uint64_t seed = 1;
  std::vector<std::string> types{"PER", "LOC", "ORG", "MISC"};
  std::size_t context_vocab = 200;
  std::size_t surfaces_per_type = 12;
  double ambiguity_fraction = 0.0;  // fraction of surfaces with two gold types
  double p_entity = 0.35;           // chance to start an entity at a slot
  double p_phrase_cue = 0.5;        // cue probability for unambiguous entities
  double p_general = 0.5;           // chance to emit the per-type general objects
  bool visual_bias = false;         // plant cue-shaped objects on non-entities
  double decoy_rate = 0.8;          // per-sample decoy probability in bias mode
  std::size_t max_decoys = 2;
  std::size_t len_min = 8;
  std::size_t len_max = 14;
  std::size_t train_size = 300;
  std::size_t dev_size = 60;
  std::size_t test_size = 60;

  void validate() const {
    require(!types.empty(), "generator: no entity types");
    for (const auto& t : types)
      require(!t.empty() && t.find('-') == std::string::npos, cat("generator: bad type ", t));
    for (double p : {ambiguity_fraction, p_entity, p_phrase_cue, p_general, decoy_rate})
      require(p >= 0.0 && p <= 1.0, cat("generator: probability ", p, " outside [0, 1]"));
    require(context_vocab >= 1, "generator: empty context vocabulary");
    require(surfaces_per_type >= 1, "generator: empty entity lexicon");
    require(len_min >= 1 && len_max >= len_min, "generator: bad sentence length range");
    require(train_size >= 1, "generator: empty train split");
    if (ambiguity_fraction > 0.0) {
      require(types.size() >= 2, "generator: ambiguity needs at least two types");
      const auto total = static_cast<double>(surfaces_per_type * types.size());
      require(ambiguity_fraction * total >= 1.0,
              cat("generator: lexicon of ", surfaces_per_type * types.size(),
                  " surfaces too small for ambiguity fraction ", ambiguity_fraction));
    }
  }
};

namespace detail {

struct Surface {
  std::vector<std::string> tokens;
  std::vector<std::string> types;  // one entry, or two for ambiguous surfaces
  std::size_t next_type = 0;       // corpus-wide alternation state
};

struct Lexicon {
  std::vector<Surface> surfaces;
  std::vector<std::size_t> order;  // round-robin draw order
  std::size_t cursor = 0;
  Rng order_rng;

  explicit Lexicon(const GeneratorSpec& spec)
      : order_rng(derive_seed(spec.seed, "data.lexicon")) {
    const std::size_t total = spec.surfaces_per_type * spec.types.size();
    const auto n_ambig =
        static_cast<std::size_t>(std::llround(spec.ambiguity_fraction * static_cast<double>(total)));
    for (std::size_t k = 0; k < total; ++k) {
      Surface s;
      const std::size_t len = k % 3 + 1;
      for (std::size_t j = 0; j < len; ++j) s.tokens.push_back(cat("e", k, "w", j));
      if (k < n_ambig) {
        s.types = {spec.types[k % spec.types.size()],
                   spec.types[(k + 1) % spec.types.size()]};
      } else {
        s.types = {spec.types[k % spec.types.size()]};
      }
      surfaces.push_back(std::move(s));
    }
    order.resize(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    order_rng.shuffle(order);
  }

  // Surfaces are dealt round-robin (reshuffled each pass), so occurrence
  // counts stay balanced and every ambiguous surface realizes both types.
  Surface& next() {
    if (cursor == order.size()) {
      cursor = 0;
      order_rng.shuffle(order);
    }
    return surfaces[order[cursor++]];
  }
};

inline std::string majority_type(const GeneratorSpec& spec,
                                 const std::map<std::string, std::size_t>& counts) {
  std::string best = "none";
  std::size_t best_count = 0;
  for (const auto& t : spec.types) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > best_count) {
      best = t;
      best_count = it->second;
    }
  }
  return best;
}

inline Sample generate_sample(const GeneratorSpec& spec, Lexicon& lex, Rng& rng) {
  Sample sample;
  const std::size_t target = spec.len_min + rng.below(spec.len_max - spec.len_min + 1);
  std::size_t decoys_left = 0;
  if (spec.visual_bias && spec.max_decoys > 0 && rng.bernoulli(spec.decoy_rate))
    decoys_left = 1 + rng.below(spec.max_decoys);
  std::map<std::string, std::size_t> type_counts;
  while (sample.tokens.size() < target) {
    const std::size_t room = target - sample.tokens.size();
    if (rng.bernoulli(spec.p_entity)) {
      Surface& s = lex.next();
      if (s.tokens.size() <= room) {
        const std::string& type = s.types[s.next_type % s.types.size()];
        ++s.next_type;
        const int first = static_cast<int>(sample.tokens.size()) + 1;
        for (std::size_t j = 0; j < s.tokens.size(); ++j) {
          sample.tokens.push_back(s.tokens[j]);
          sample.labels.push_back((j == 0 ? "B-" : "I-") + type);
        }
        const int last = static_cast<int>(sample.tokens.size());
        ++type_counts[type];
        // Ambiguous mentions always get their disambiguating cue; the rest
        // are cued at random so cues do not mark entity-ness by themselves.
        if (s.types.size() > 1 || rng.bernoulli(spec.p_phrase_cue))
          sample.objects.push_back({"cue_" + type, ObjectKind::NOUN_PHRASE, first, last});
        continue;
      }
    }
    // Bias-mode decoy: a negation marker plus a real entity surface, labeled
    // O, carrying the cue object the surface would have as a mention. The
    // text resolves the span (marker + surface); the image argues, wrongly,
    // for an entity.
    if (decoys_left > 0 && rng.bernoulli(spec.p_entity)) {
      const Surface& s = lex.surfaces[rng.below(lex.surfaces.size())];
      if (s.tokens.size() + 1 <= room) {
        --decoys_left;
        sample.tokens.push_back("non");
        sample.labels.push_back("O");
        const int first = static_cast<int>(sample.tokens.size()) + 1;
        for (const auto& tok : s.tokens) {
          sample.tokens.push_back(tok);
          sample.labels.push_back("O");
        }
        const int last = static_cast<int>(sample.tokens.size());
        const std::string& type = s.types[rng.below(s.types.size())];
        sample.objects.push_back({"cue_" + type, ObjectKind::NOUN_PHRASE, first, last});
        continue;
      }
    }
    sample.tokens.push_back(cat("ctx", rng.below(spec.context_vocab)));
    sample.labels.push_back("O");
  }

  sample.objects.push_back({"scene_" + majority_type(spec, type_counts),
                            ObjectKind::WHOLE_IMAGE, 0, 0});
  if (rng.bernoulli(spec.p_general))
    for (const auto& t : spec.types)
      sample.objects.push_back({"gen_" + t, ObjectKind::GENERAL_WORD, 0, 0});
  return sample;
}

}  // namespace detail

inline Corpus generate_corpus(const GeneratorSpec& spec) {
  spec.validate();
  detail::Lexicon lex(spec);
  Corpus corpus;
  auto fill = [&](std::vector<Sample>& out, const char* stream, std::size_t count) {
    Rng rng(derive_seed(spec.seed, stream));
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(detail::generate_sample(spec, lex, rng));
  };
  fill(corpus.train, "data.train", spec.train_size);
  fill(corpus.dev, "data.dev", spec.dev_size);
  fill(corpus.test, "data.test", spec.test_size);

  // Post-condition: every ambiguous surface realized at least two types.
  std::unordered_map<std::string, std::vector<std::string>> seen;  // first token -> types
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test})
    for (const auto& s : *split)
      for (std::size_t i = 0; i < s.labels.size(); ++i)
        if (s.labels[i][0] == 'B') {
          auto& types = seen[s.tokens[i]];
          const std::string type = s.labels[i].substr(2);
          if (std::find(types.begin(), types.end(), type) == types.end()) types.push_back(type);
        }
  for (const auto& surface : lex.surfaces)
    if (surface.types.size() > 1) {
      const auto it = seen.find(surface.tokens[0]);
      require(it != seen.end() && it->second.size() >= 2,
              cat("generator: ambiguous surface ", surface.tokens[0],
                  " did not realize two types; increase split sizes"));
    }
  return corpus;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per line.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json sample_to_json(const Sample& s) {
  nlohmann::ordered_json j;
  j["tokens"] = s.tokens;
  j["labels"] = s.labels;
  j["objects"] = nlohmann::ordered_json::array();
  for (const auto& o : s.objects) {
    nlohmann::ordered_json jo;
    jo["concept"] = o.concept_name;
    jo["kind"] = object_kind_name(o.kind);
    if (o.kind == ObjectKind::NOUN_PHRASE) jo["span"] = {o.span_first, o.span_last};
    j["objects"].push_back(std::move(jo));
  }
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("tokens") && j.contains("labels") && j.contains("objects"),
          "record needs tokens, labels and objects fields");
  Sample s;
  require(j["tokens"].is_array() && !j["tokens"].empty(), "tokens must be a non-empty array");
  for (const auto& t : j["tokens"]) {
    require(t.is_string(), "tokens must be strings");
    s.tokens.push_back(t.get<std::string>());
  }
  require(j["labels"].is_array() && j["labels"].size() == s.tokens.size(),
          cat("expected ", s.tokens.size(), " labels, got ", j["labels"].size()));
  for (const auto& l : j["labels"]) {
    require(l.is_string(), "labels must be strings");
    s.labels.push_back(l.get<std::string>());
  }
  const int bad = first_bio_violation(s.labels);
  require(bad < 0, cat("labels are not well-formed BIO at token ", bad + 1));
  require(j["objects"].is_array(), "objects must be an array");
  const int n = static_cast<int>(s.tokens.size());
  for (const auto& jo : j["objects"]) {
    require(jo.is_object() && jo.contains("concept") && jo.contains("kind"),
            "object needs concept and kind fields");
    require(jo["concept"].is_string() && !jo["concept"].get<std::string>().empty(),
            "object concept must be a non-empty string");
    SampleObject o;
    o.concept_name = jo["concept"].get<std::string>();
    require(jo["kind"].is_string(), "object kind must be a string");
    o.kind = object_kind_from_name(jo["kind"].get<std::string>());
    if (o.kind == ObjectKind::NOUN_PHRASE) {
      require(jo.contains("span") && jo["span"].is_array() && jo["span"].size() == 2 &&
                  jo["span"][0].is_number_integer() && jo["span"][1].is_number_integer(),
              "phrase object needs span: [first, last]");
      o.span_first = jo["span"][0].get<int>();
      o.span_last = jo["span"][1].get<int>();
      require(o.span_first >= 1 && o.span_last <= n && o.span_first <= o.span_last,
              cat("object span [", o.span_first, ", ", o.span_last, "] invalid for ", n,
                  " tokens"));
    } else {
      require(!jo.contains("span"), "span is only valid on phrase objects");
    }
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline void write_corpus(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), cat("cannot open ", path, " for writing"));
  for (const auto& s : samples) out << sample_to_json(s).dump() << "\n";
  require(out.good(), cat("write failed: ", path));
}

inline std::vector<Sample> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), cat("cannot open ", path));
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw validation_error(cat(path, ":", line_no, ": invalid JSON"));
    try {
      samples.push_back(sample_from_json(j));
    } catch (const validation_error& e) {
      throw validation_error(cat(path, ":", line_no, ": ", e.what()));
    }
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Model-input encoding and batching.
// ---------------------------------------------------------------------------

// Over-length samples are cut at max_tokens; phrase objects reaching past the
// cut are dropped. Returns whether anything was cut.
inline bool truncate_sample(Sample& s, std::size_t max_tokens) {
  require(max_tokens >= 1, "max_tokens must be positive");
  if (s.tokens.size() <= max_tokens) return false;
  s.tokens.resize(max_tokens);
  s.labels.resize(max_tokens);
  std::vector<SampleObject> kept;
  for (auto& o : s.objects)
    if (o.kind != ObjectKind::NOUN_PHRASE || o.span_last <= static_cast<int>(max_tokens))
      kept.push_back(std::move(o));
  s.objects = std::move(kept);
  return true;
}

inline Vocab build_word_vocab(const std::vector<Sample>& samples) {
  Vocab v;
  for (const auto& s : samples)
    for (const auto& t : s.tokens) v.add(t);
  return v;
}

inline Vocab build_object_vocab(const std::vector<Sample>& samples) {
  Vocab v;
  for (const auto& s : samples)
    for (const auto& o : s.objects) v.add(o.concept_name);
  return v;
}

// Lattice construction from a sample; unknown tokens and concepts map to the
// reserved row 0. With strip_objects the lattice is text-only.
inline FlatLattice lattice_for_sample(const Sample& s, const Vocab& words, const Vocab& objects,
                                      bool strip_objects = false) {
  std::vector<int> token_ids;
  token_ids.reserve(s.tokens.size());
  for (const auto& t : s.tokens) token_ids.push_back(words.id(t));
  std::vector<ObjectAnnotation> anns;
  if (!strip_objects)
    for (const auto& o : s.objects)
      anns.push_back({objects.id(o.concept_name), o.kind, o.span_first, o.span_last});
  return build_lattice(token_ids, anns);
}

// Seeded index batching: shuffle (optional) then chunk in order.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t count,
                                                          std::size_t batch_size,
                                                          Rng* shuffle_rng) {
  require(batch_size >= 1, "batch size must be positive");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  if (shuffle_rng) shuffle_rng->shuffle(idx);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < count; at += batch_size) {
    const std::size_t end = std::min(count, at + batch_size);
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(at),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Corpus statistics.
// ---------------------------------------------------------------------------

struct SplitStats {
  std::size_t samples = 0;
  std::size_t tokens = 0;
  std::map<std::string, std::size_t> entities;  // per type
  std::size_t objects_whole = 0;
  std::size_t objects_phrase = 0;
  std::size_t objects_general = 0;
};

inline SplitStats split_stats(const std::vector<Sample>& samples) {
  SplitStats st;
  st.samples = samples.size();
  for (const auto& s : samples) {
    st.tokens += s.tokens.size();
    for (const auto& l : s.labels)
      if (l[0] == 'B') ++st.entities[l.substr(2)];
    for (const auto& o : s.objects) {
      if (o.kind == ObjectKind::WHOLE_IMAGE) ++st.objects_whole;
      if (o.kind == ObjectKind::NOUN_PHRASE) ++st.objects_phrase;
      if (o.kind == ObjectKind::GENERAL_WORD) ++st.objects_general;
    }
  }
  return st;
}

inline std::string stats_report(const Corpus& corpus) {
  std::ostringstream os;
  const std::vector<std::pair<std::string, const std::vector<Sample>*>> splits{
      {"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}};
  std::vector<std::string> types;
  for (const auto& [name, split] : splits)
    for (const auto& [type, n] : split_stats(*split).entities)
      if (std::find(types.begin(), types.end(), type) == types.end()) types.push_back(type);
  std::sort(types.begin(), types.end());

  os << std::left << std::setw(10) << "split" << std::right << std::setw(9) << "samples"
     << std::setw(9) << "tokens";
  for (const auto& t : types) os << std::setw(9) << t;
  os << std::setw(9) << "whole" << std::setw(9) << "phrase" << std::setw(9) << "general" << "\n";
  for (const auto& [name, split] : splits) {
    const SplitStats st = split_stats(*split);
    os << std::left << std::setw(10) << name << std::right << std::setw(9) << st.samples
       << std::setw(9) << st.tokens;
    for (const auto& t : types) {
      const auto it = st.entities.find(t);
      os << std::setw(9) << (it == st.entities.end() ? 0 : it->second);
    }
    os << std::setw(9) << st.objects_whole << std::setw(9) << st.objects_phrase << std::setw(9)
       << st.objects_general << "\n";
  }
  return os.str();
}

}  // namespace flatner
