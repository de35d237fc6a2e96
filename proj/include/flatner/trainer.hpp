#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "flatner/adam.hpp"
#include "flatner/array.hpp"
#include "flatner/autograd.hpp"
#include "flatner/checkpoint.hpp"
#include "flatner/common.hpp"
#include "flatner/crf.hpp"
#include "flatner/data.hpp"
#include "flatner/ebd.hpp"
#include "flatner/eval.hpp"
#include "flatner/model.hpp"
#include "flatner/params.hpp"
#include "flatner/posenc.hpp"
#include "flatner/tags.hpp"
#include "flatner/vocab.hpp"

namespace flatner {

// Everything a training run needs, in one flat bag of keys so a config file
// maps onto it directly. Model width knobs mirror ModelConfig; vocabulary
// sizes and the label count are filled in from the corpus at train time.
struct TrainConfig {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_word = 16;
  std::size_t d_visual = 16;
  std::size_t ffn_inner = 0;  // 0 picks 4*d
  double dropout = 0.2;
  bool no_rel = false;
  bool no_ebd = false;
  bool no_objects = false;
  bool no_transitions = false;
  bool share_word_input = false;

  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t max_len = 128;
  double lr = 2e-4;
  double lambda = 0.25;
  double clip_norm = 0.0;  // 0 disables gradient clipping
  double stop_f1 = 0.0;    // end training once dev F1 reaches this (0 disables)
  std::uint64_t seed = 1;
  std::string precision = "f32";

  void validate() const {
    require(epochs >= 1, "train: epochs must be positive");
    require(batch_size >= 1, "train: batch size must be positive");
    require(max_len >= 1, "train: max_len must be positive");
    require(lr > 0.0, cat("train: learning rate must be positive, got ", lr));
    require(lambda >= 0.0, cat("train: lambda must be nonnegative, got ", lambda));
    require(clip_norm >= 0.0, "train: clip_norm must be nonnegative");
    require(stop_f1 >= 0.0 && stop_f1 <= 1.0, "train: stop_f1 must be in [0, 1]");
    require(precision == "f32" || precision == "f64",
            cat("train: precision must be f32 or f64, got ", precision));
  }

  ModelConfig model(std::size_t vocab_words, std::size_t vocab_objects,
                    std::size_t num_labels) const {
    ModelConfig m;
    m.d = d;
    m.heads = heads;
    m.layers = layers;
    m.d_word = d_word;
    m.d_visual = d_visual;
    m.ffn_inner = ffn_inner;
    m.dropout = dropout;
    m.vocab_words = vocab_words;
    m.vocab_objects = vocab_objects;
    m.num_labels = num_labels;
    m.no_rel = no_rel;
    m.no_ebd = no_ebd;
    m.no_objects = no_objects;
    m.no_transitions = no_transitions;
    m.share_word_input = share_word_input;
    m.validate();
    return m;
  }
};

// Entity type names present in a sample set, alphabetical for stable ids.
inline std::vector<std::string> collect_types(const std::vector<Sample>& samples) {
  std::set<std::string> types;
  for (const auto& s : samples)
    for (const auto& l : s.labels)
      if (l != "O") types.insert(parse_bio(l).second);
  require(!types.empty(), "corpus has no entities; cannot derive a label set");
  return {types.begin(), types.end()};
}

// A sample encoded against fixed vocabularies, ready to become a tape graph.
struct EncodedSample {
  FlatLattice lattice;       // objects already stripped under no_objects
  FlatLattice text_lattice;  // words only, for the boundary tower
  std::vector<int> labels;
  std::vector<int> boundaries;
};

inline EncodedSample encode_sample(const Sample& s, const Vocab& words, const Vocab& objects,
                                   const LabelSet& labels, bool strip_objects, bool want_ebd) {
  EncodedSample enc;
  enc.lattice = lattice_for_sample(s, words, objects, strip_objects);
  enc.labels = labels.ids(s.labels);
  if (want_ebd) {
    enc.text_lattice = lattice_for_sample(s, words, objects, true);
    enc.boundaries = decompose_boundaries(s.labels);
  }
  return enc;
}

namespace detail {

template <typename T>
struct CrfHandles {
  Var w, b;
  CrfVars vars;
};

template <typename T>
CrfHandles<T> crf_handles(const Leaves<T>& leaves, const std::string& prefix,
                          bool no_transitions) {
  return {leaves.get(prefix + "crf.w"), leaves.get(prefix + "crf.b"),
          CrfVars{leaves.get(prefix + "crf.trans"), leaves.get(prefix + "crf.start"),
                  leaves.get(prefix + "crf.stop"), no_transitions}};
}

// One sample's joint loss on the given tape. The boundary tower runs only
// when the auxiliary loss actually contributes, so a lambda = 0 run builds
// exactly the graph a no_ebd build would.
template <typename T>
Var sample_loss(Tape<T>& tape, const ModelConfig& cfg, const Leaves<T>& leaves,
                const EncodedSample& s, SinusoidCache<T>& sinusoids, double lambda, bool train,
                Rng* drop_main, Rng* drop_ebd) {
  const TowerWiring main_wiring{"main.", false};
  Var h = tower_forward(tape, cfg, leaves, main_wiring, s.lattice, sinusoids, train, drop_main);
  const auto main_crf = crf_handles(leaves, "main.", cfg.no_transitions);
  Var nll_main =
      crf_nll(tape, crf_emissions(tape, h, main_crf.w, main_crf.b), main_crf.vars, s.labels);
  const bool want_ebd = !cfg.no_ebd && lambda > 0.0;
  if (!want_ebd) return nll_main;
  const TowerWiring ebd_wiring{"ebd.", cfg.share_word_input};
  Var ht =
      tower_forward(tape, cfg, leaves, ebd_wiring, s.text_lattice, sinusoids, train, drop_ebd);
  const auto ebd_crf = crf_handles(leaves, "ebd.", cfg.no_transitions);
  Var nll_ebd =
      crf_nll(tape, crf_emissions(tape, ht, ebd_crf.w, ebd_crf.b), ebd_crf.vars, s.boundaries);
  return joint_loss(tape, nll_main, nll_ebd, lambda);
}

template <typename T>
void clip_gradients(ParamStore<T>& grads, double clip_norm) {
  if (clip_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& [name, g] : grads.entries())
    for (std::size_t i = 0; i < g.size(); ++i) sq += static_cast<double>(g[i]) * g[i];
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const T factor = static_cast<T>(clip_norm / norm);
  for (auto& [name, g] : grads.entries())
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= factor;
}

}  // namespace detail

// Greedy-free decoding: Viterbi over the trained scores. Under
// no_transitions the pairwise and boundary terms are zero, which makes
// Viterbi the per-token argmax.
template <typename T>
std::vector<int> predict_label_ids(const ParamStore<T>& params, const ModelConfig& cfg,
                                   const EncodedSample& s, SinusoidCache<T>& sinusoids) {
  Tape<T> tape;
  Leaves<T> leaves(tape, params);
  const TowerWiring main_wiring{"main.", false};
  Var h = tower_forward(tape, cfg, leaves, main_wiring, s.lattice, sinusoids, false, nullptr);
  const auto crf = detail::crf_handles(leaves, "main.", cfg.no_transitions);
  const Array<T>& emissions = tape.val(crf_emissions(tape, h, crf.w, crf.b));
  const std::size_t k = emissions.cols();
  if (cfg.no_transitions) {
    const Array<T> zeros_kk({k, k}), zeros_k({1, k});
    return viterbi(emissions, zeros_kk, zeros_k, zeros_k).labels;
  }
  return viterbi(emissions, tape.val(crf.vars.trans), tape.val(crf.vars.start),
                 tape.val(crf.vars.stop))
      .labels;
}

// Dropout-free evaluation of one split: decode every sample, score spans.
template <typename T>
MetricsReport evaluate(const ParamStore<T>& params, const ModelConfig& cfg, const Vocab& words,
                       const Vocab& objects, const LabelSet& labels,
                       const std::vector<Sample>& split, std::size_t max_len) {
  SinusoidCache<T> sinusoids(cfg.d);
  std::vector<std::vector<EntitySpan>> gold, pred;
  gold.reserve(split.size());
  pred.reserve(split.size());
  for (const Sample& raw : split) {
    Sample s = raw;
    truncate_sample(s, max_len);
    const auto enc = encode_sample(s, words, objects, labels, cfg.no_objects, false);
    const auto ids = predict_label_ids(params, cfg, enc, sinusoids);
    gold.push_back(extract_spans(s.labels));
    pred.push_back(extract_spans(labels.names(ids)));
  }
  return score(gold, pred);
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-sample joint loss
  double dev_p = 0.0;
  double dev_r = 0.0;
  double dev_f1 = 0.0;
};

template <typename T>
struct TrainResult {
  ParamStore<T> best_params;
  std::size_t best_epoch = 0;
  double best_dev_f1 = -1.0;
  std::vector<EpochLog> log;
  double first_batch_loss = 0.0;
  std::size_t truncated_samples = 0;

  ModelConfig model;  // with vocabulary sizes and label count filled in
  Vocab words;
  Vocab objects;
  std::vector<std::string> types;
};

// The full loop: derive label set and vocabularies from the train split,
// initialize, run Adam over shuffled batches, log dev metrics per epoch, and
// keep the parameters of the best dev-F1 epoch (earliest on ties).
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const Corpus& corpus, std::ostream* log_out = nullptr) {
  cfg.validate();
  require(!corpus.train.empty(), "train: empty training split");

  TrainResult<T> result;
  Corpus data = corpus;
  for (auto* split : {&data.train, &data.dev, &data.test})
    for (Sample& s : *split)
      if (truncate_sample(s, cfg.max_len)) ++result.truncated_samples;
  if (result.truncated_samples > 0 && log_out)
    *log_out << "# truncated " << result.truncated_samples << " over-length samples to "
             << cfg.max_len << " tokens\n";

  result.types = collect_types(data.train);
  const LabelSet labels = LabelSet::bio(result.types);
  result.words = build_word_vocab(data.train);
  result.objects = build_object_vocab(data.train);
  result.model = cfg.model(result.words.size(), result.objects.size(), labels.size());
  const bool want_ebd = !cfg.no_ebd && cfg.lambda > 0.0;

  std::vector<EncodedSample> train_set;
  train_set.reserve(data.train.size());
  for (const Sample& s : data.train)
    train_set.push_back(
        encode_sample(s, result.words, result.objects, labels, cfg.no_objects, want_ebd));

  ParamStore<T> params = init_params<T>(result.model, cfg.seed);
  AdamState<T> adam = AdamState<T>::init(params);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng drop_main(derive_seed(cfg.seed, "dropout.main"));
  Rng drop_ebd(derive_seed(cfg.seed, "dropout.ebd"));
  SinusoidCache<T> sinusoids(result.model.d);

  if (log_out) *log_out << "epoch\ttrain_loss\tdev_P\tdev_R\tdev_F1\n";
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    const auto batches = make_batches(train_set.size(), cfg.batch_size, &shuffle_rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape<T> tape;
      Leaves<T> leaves(tape, params);
      Var batch_loss{-1};
      for (std::size_t idx : batches[b]) {
        Var one = detail::sample_loss(tape, result.model, leaves, train_set[idx], sinusoids,
                                      cfg.lambda, true, &drop_main, want_ebd ? &drop_ebd : nullptr);
        batch_loss = batch_loss.id < 0 ? one : tape.add(batch_loss, one);
      }
      const double loss_value = static_cast<double>(tape.val(batch_loss)[0]);
      if (!std::isfinite(loss_value))
        throw numeric_error(cat("train: non-finite loss at epoch ", epoch, " batch ", b + 1));
      if (epoch == 1 && b == 0) result.first_batch_loss = loss_value;
      loss_sum += loss_value;
      tape.backward(batch_loss);
      ParamStore<T> grads = leaves.grads(tape);
      detail::clip_gradients(grads, cfg.clip_norm);
      adam_step(params, grads, adam, adam_cfg);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train_set.size());
    if (!data.dev.empty()) {
      const MetricsReport dev = evaluate(params, result.model, result.words, result.objects,
                                         labels, data.dev, cfg.max_len);
      entry.dev_p = dev.overall.precision();
      entry.dev_r = dev.overall.recall();
      entry.dev_f1 = dev.overall.f1();
    }
    result.log.push_back(entry);
    if (log_out)
      *log_out << entry.epoch << "\t" << entry.train_loss << "\t" << entry.dev_p << "\t"
               << entry.dev_r << "\t" << entry.dev_f1 << "\n";
    if (entry.dev_f1 > result.best_dev_f1) {
      result.best_dev_f1 = entry.dev_f1;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    if (cfg.stop_f1 > 0.0 && entry.dev_f1 >= cfg.stop_f1) break;
  }
  if (result.best_epoch == 0) {  // no dev split: keep the final parameters
    result.best_params = params;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint wiring: parameters plus the sections needed to rebuild the
// model for evaluation (architecture keys, entity types, both vocabularies).
// ---------------------------------------------------------------------------

inline std::vector<std::string> model_config_lines(const ModelConfig& m) {
  std::vector<std::string> lines;
  auto kv = [&lines](const std::string& k, auto v) { lines.push_back(cat(k, " = ", v)); };
  kv("d", m.d);
  kv("heads", m.heads);
  kv("layers", m.layers);
  kv("d_word", m.d_word);
  kv("d_visual", m.d_visual);
  kv("ffn_inner", m.ffn_inner);
  kv("dropout", m.dropout);
  kv("vocab_words", m.vocab_words);
  kv("vocab_objects", m.vocab_objects);
  kv("num_labels", m.num_labels);
  kv("no_rel", static_cast<int>(m.no_rel));
  kv("no_ebd", static_cast<int>(m.no_ebd));
  kv("no_objects", static_cast<int>(m.no_objects));
  kv("no_transitions", static_cast<int>(m.no_transitions));
  kv("share_word_input", static_cast<int>(m.share_word_input));
  return lines;
}

inline ModelConfig model_config_from_lines(const std::vector<std::string>& lines) {
  ModelConfig m;
  for (const auto& line : lines) {
    const auto eq = line.find(" = ");
    require(eq != std::string::npos, cat("bad model line: ", line));
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    std::size_t pos = 0;
    auto as_size = [&]() {
      const unsigned long long v = std::stoull(value, &pos);
      require(pos == value.size(), cat("bad number for ", key, ": ", value));
      return static_cast<std::size_t>(v);
    };
    auto as_flag = [&]() {
      require(value == "0" || value == "1", cat("bad flag for ", key, ": ", value));
      return value == "1";
    };
    if (key == "d") m.d = as_size();
    else if (key == "heads") m.heads = as_size();
    else if (key == "layers") m.layers = as_size();
    else if (key == "d_word") m.d_word = as_size();
    else if (key == "d_visual") m.d_visual = as_size();
    else if (key == "ffn_inner") m.ffn_inner = as_size();
    else if (key == "dropout") m.dropout = std::stod(value);
    else if (key == "vocab_words") m.vocab_words = as_size();
    else if (key == "vocab_objects") m.vocab_objects = as_size();
    else if (key == "num_labels") m.num_labels = as_size();
    else if (key == "no_rel") m.no_rel = as_flag();
    else if (key == "no_ebd") m.no_ebd = as_flag();
    else if (key == "no_objects") m.no_objects = as_flag();
    else if (key == "no_transitions") m.no_transitions = as_flag();
    else if (key == "share_word_input") m.share_word_input = as_flag();
    else throw validation_error(cat("unknown model key: ", key));
  }
  m.validate();
  return m;
}

template <typename T>
void save_trained(const std::string& path, const TrainResult<T>& result) {
  CheckpointSections sections;
  sections.emplace_back("model", model_config_lines(result.model));
  sections.emplace_back("types", result.types);
  sections.emplace_back("words", result.words.to_lines());
  sections.emplace_back("objects", result.objects.to_lines());
  save_checkpoint(path, result.best_params, sections);
}

template <typename T>
struct TrainedModel {
  ParamStore<T> params;
  ModelConfig model;
  Vocab words;
  Vocab objects;
  std::vector<std::string> types;

  LabelSet label_set() const { return LabelSet::bio(types); }
};

template <typename T>
TrainedModel<T> load_trained(const std::string& path) {
  const LoadedCheckpoint<T> ck = load_checkpoint<T>(path);
  TrainedModel<T> out;
  out.model = model_config_from_lines(ck.section("model"));
  out.types = ck.section("types");
  out.words = Vocab::from_lines(ck.section("words"));
  out.objects = Vocab::from_lines(ck.section("objects"));
  out.params = ck.params;
  require(out.model.vocab_words == out.words.size(),
          cat("checkpoint word vocabulary has ", out.words.size(), " entries, model expects ",
              out.model.vocab_words));
  require(out.model.vocab_objects == out.objects.size(),
          cat("checkpoint object vocabulary has ", out.objects.size(), " entries, model expects ",
              out.model.vocab_objects));
  require(out.model.num_labels == LabelSet::bio(out.types).size(),
          "checkpoint types do not match the model's label count");

  // Shape check against a freshly assembled parameter layout.
  const ParamStore<T> expected = init_params<T>(out.model, 0);
  require(expected.count() == out.params.count(),
          cat("checkpoint has ", out.params.count(), " tensors, model expects ",
              expected.count()));
  for (const auto& [name, value] : expected.entries()) {
    require(out.params.has(name), cat("checkpoint is missing tensor ", name));
    require(out.params.get(name).same_shape(value),
            cat("checkpoint tensor ", name, " has shape ",
                shape_str(out.params.get(name).shape()), ", model expects ",
                shape_str(value.shape())));
  }
  return out;
}

}  // namespace flatner
