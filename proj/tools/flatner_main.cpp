// Command-line driver: gen-data | train | eval | decode | inspect-lattice |
// gradcheck. Exit codes: 0 success, 1 usage error, 2 data/validation error,
// 3 numeric failure. Every command accepts --seed and --config; a config
// file supplies long-option values (INI keys = option names), and explicit
// flags override it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flatner/flatner.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigHelp = "INI file with long-option names as keys";

flatner::Corpus read_corpus_dir(const std::string& dir) {
  flatner::Corpus corpus;
  const auto load = [&](const char* name, std::vector<flatner::Sample>& out, bool required) {
    const fs::path p = fs::path(dir) / name;
    if (fs::exists(p))
      out = flatner::read_corpus(p.string());
    else if (required)
      throw flatner::validation_error(flatner::cat("missing corpus file: ", p.string()));
  };
  load("train.jsonl", corpus.train, true);
  load("dev.jsonl", corpus.dev, false);
  load("test.jsonl", corpus.test, false);
  return corpus;
}

const std::vector<flatner::Sample>& pick_split(const flatner::Corpus& corpus,
                                               const std::string& name) {
  if (name == "train") return corpus.train;
  if (name == "dev") return corpus.dev;
  if (name == "test") return corpus.test;
  throw flatner::validation_error(flatner::cat("unknown split: ", name));
}

void add_gen_data(CLI::App& app) {
  auto spec = std::make_shared<flatner::GeneratorSpec>();
  auto out_dir = std::make_shared<std::string>();
  CLI::App* cmd = app.add_subcommand("gen-data", "generate a synthetic corpus");
  cmd->set_config("--config", "", kConfigHelp);
  cmd->add_option("--out", *out_dir, "output directory")->required();
  cmd->add_option("--seed", spec->seed, "generator seed")->capture_default_str();
  cmd->add_option("--types", spec->types, "entity type names")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--context-vocab", spec->context_vocab, "non-entity vocabulary size")
      ->capture_default_str();
  cmd->add_option("--surfaces-per-type", spec->surfaces_per_type, "entity surfaces per type")
      ->capture_default_str();
  cmd->add_option("--ambiguity", spec->ambiguity_fraction,
                  "fraction of surfaces shared by two types")
      ->capture_default_str();
  cmd->add_option("--p-entity", spec->p_entity, "per-slot entity emission probability")
      ->capture_default_str();
  cmd->add_option("--p-phrase-cue", spec->p_phrase_cue,
                  "object-cue probability for unambiguous entities")
      ->capture_default_str();
  cmd->add_option("--p-general", spec->p_general, "general-word object probability")
      ->capture_default_str();
  cmd->add_flag("--visual-bias", spec->visual_bias, "plant salient objects on non-entity tokens");
  cmd->add_option("--decoy-rate", spec->decoy_rate, "per-sample decoy probability")
      ->capture_default_str();
  cmd->add_option("--max-decoys", spec->max_decoys, "decoy objects per sample at most")
      ->capture_default_str();
  cmd->add_option("--len-min", spec->len_min, "minimum sentence length")->capture_default_str();
  cmd->add_option("--len-max", spec->len_max, "maximum sentence length")->capture_default_str();
  cmd->add_option("--train-size", spec->train_size, "training samples")->capture_default_str();
  cmd->add_option("--dev-size", spec->dev_size, "development samples")->capture_default_str();
  cmd->add_option("--test-size", spec->test_size, "test samples")->capture_default_str();
  cmd->callback([spec, out_dir] {
    const flatner::Corpus corpus = flatner::generate_corpus(*spec);
    fs::create_directories(*out_dir);
    flatner::write_corpus((fs::path(*out_dir) / "train.jsonl").string(), corpus.train);
    flatner::write_corpus((fs::path(*out_dir) / "dev.jsonl").string(), corpus.dev);
    flatner::write_corpus((fs::path(*out_dir) / "test.jsonl").string(), corpus.test);
    const std::string stats = flatner::stats_report(corpus);
    std::ofstream stats_out(fs::path(*out_dir) / "stats.txt");
    stats_out << stats;
    std::cout << stats;
  });
}

struct TrainArgs {
  flatner::TrainConfig cfg;
  std::string data_dir;
  std::string out_path;
};

template <typename T>
void run_train(const TrainArgs& args) {
  const flatner::Corpus corpus = read_corpus_dir(args.data_dir);
  const flatner::TrainResult<T> result = flatner::train<T>(args.cfg, corpus, &std::cout);
  flatner::save_trained(args.out_path, result);
  std::cout << "# best epoch " << result.best_epoch << " dev_F1 " << result.best_dev_f1 << "\n";
  std::cout << "# saved " << args.out_path << "\n";
}

void add_train(CLI::App& app) {
  auto args = std::make_shared<TrainArgs>();
  CLI::App* cmd = app.add_subcommand("train", "train and save the best-dev checkpoint");
  cmd->set_config("--config", "", kConfigHelp);
  flatner::TrainConfig& cfg = args->cfg;
  cmd->add_option("--data", args->data_dir, "corpus directory (train/dev/test.jsonl)")
      ->required();
  cmd->add_option("--out", args->out_path, "checkpoint output path")->required();
  cmd->add_option("--seed", cfg.seed, "training seed")->capture_default_str();
  cmd->add_option("--d", cfg.d, "model width")->capture_default_str();
  cmd->add_option("--heads", cfg.heads, "attention heads")->capture_default_str();
  cmd->add_option("--layers", cfg.layers, "transformer layers")->capture_default_str();
  cmd->add_option("--d-word", cfg.d_word, "word embedding width")->capture_default_str();
  cmd->add_option("--d-visual", cfg.d_visual, "object embedding width")->capture_default_str();
  cmd->add_option("--ffn-inner", cfg.ffn_inner, "feed-forward inner width (0 = 4*d)")
      ->capture_default_str();
  cmd->add_option("--dropout", cfg.dropout, "dropout rate")->capture_default_str();
  cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--batch-size", cfg.batch_size, "samples per batch")->capture_default_str();
  cmd->add_option("--max-len", cfg.max_len, "maximum tokens per sample")->capture_default_str();
  cmd->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--lambda", cfg.lambda, "boundary-task loss weight")->capture_default_str();
  cmd->add_option("--clip-norm", cfg.clip_norm, "global gradient-norm clip (0 = off)")
      ->capture_default_str();
  cmd->add_option("--stop-f1", cfg.stop_f1, "end training once dev F1 reaches this (0 = off)")
      ->capture_default_str();
  cmd->add_option("--precision", cfg.precision, "f32 or f64")->capture_default_str();
  cmd->add_flag("--no-rel", cfg.no_rel, "ablate relative position encoding");
  cmd->add_flag("--no-ebd", cfg.no_ebd, "ablate the boundary-detection tower");
  cmd->add_flag("--no-objects", cfg.no_objects, "ablate visual objects");
  cmd->add_flag("--no-transitions", cfg.no_transitions, "ablate CRF transitions");
  cmd->add_flag("--share-word-input", cfg.share_word_input,
                "boundary tower reuses the main word-input stack");
  cmd->callback([args] {
    args->cfg.validate();
    if (args->cfg.precision == "f64")
      run_train<double>(*args);
    else
      run_train<float>(*args);
  });
}

struct EvalArgs {
  std::string ckpt;
  std::string data_dir;
  std::string split = "test";
  std::size_t max_len = 128;
  bool kv = false;
};

template <typename T>
void run_eval(const EvalArgs& args) {
  const auto trained = flatner::load_trained<T>(args.ckpt);
  const flatner::Corpus corpus = read_corpus_dir(args.data_dir);
  const auto& split = pick_split(corpus, args.split);
  flatner::require(!split.empty(), flatner::cat("split ", args.split, " is empty"));
  const flatner::MetricsReport report =
      flatner::evaluate(trained.params, trained.model, trained.words, trained.objects,
                        trained.label_set(), split, args.max_len);
  std::cout << (args.kv ? report.render_kv() : report.render_table());
}

void add_eval(CLI::App& app) {
  auto args = std::make_shared<EvalArgs>();
  auto seed = std::make_shared<std::uint64_t>(1);
  CLI::App* cmd = app.add_subcommand("eval", "score a checkpoint on a corpus split");
  cmd->set_config("--config", "", kConfigHelp);
  cmd->add_option("--ckpt", args->ckpt, "checkpoint path")->required();
  cmd->add_option("--data", args->data_dir, "corpus directory")->required();
  cmd->add_option("--split", args->split, "train, dev or test")->capture_default_str();
  cmd->add_option("--max-len", args->max_len, "maximum tokens per sample")
      ->capture_default_str();
  cmd->add_flag("--kv", args->kv, "print key-value metrics instead of the table");
  cmd->add_option("--seed", *seed, "accepted for interface uniformity; evaluation is exact");
  cmd->callback([args] {
    if (flatner::checkpoint_precision(args->ckpt) == "f64")
      run_eval<double>(*args);
    else
      run_eval<float>(*args);
  });
}

struct DecodeArgs {
  std::string ckpt;
  std::string in_path;
  std::string out_path;
  std::size_t max_len = 128;
};

template <typename T>
void run_decode(const DecodeArgs& args, std::ostream& out) {
  const auto trained = flatner::load_trained<T>(args.ckpt);
  const flatner::LabelSet labels = trained.label_set();
  flatner::SinusoidCache<T> sinusoids(trained.model.d);
  for (flatner::Sample s : flatner::read_corpus(args.in_path)) {
    flatner::truncate_sample(s, args.max_len);
    const auto enc = flatner::encode_sample(s, trained.words, trained.objects, labels,
                                            trained.model.no_objects, false);
    const auto ids = flatner::predict_label_ids(trained.params, trained.model, enc, sinusoids);
    nlohmann::ordered_json j = flatner::sample_to_json(s);
    j["pred_labels"] = labels.names(ids);
    out << j.dump() << "\n";
  }
}

void add_decode(CLI::App& app) {
  auto args = std::make_shared<DecodeArgs>();
  auto seed = std::make_shared<std::uint64_t>(1);
  CLI::App* cmd = app.add_subcommand("decode", "label a corpus file with a checkpoint");
  cmd->set_config("--config", "", kConfigHelp);
  cmd->add_option("--ckpt", args->ckpt, "checkpoint path")->required();
  cmd->add_option("--in", args->in_path, "input corpus file (jsonl)")->required();
  cmd->add_option("--out", args->out_path, "output path (default standard output)");
  cmd->add_option("--max-len", args->max_len, "maximum tokens per sample")
      ->capture_default_str();
  cmd->add_option("--seed", *seed, "accepted for interface uniformity; decoding is exact");
  cmd->callback([args] {
    const auto run = [&](std::ostream& out) {
      if (flatner::checkpoint_precision(args->ckpt) == "f64")
        run_decode<double>(*args, out);
      else
        run_decode<float>(*args, out);
    };
    if (args->out_path.empty()) {
      run(std::cout);
    } else {
      std::ofstream out(args->out_path);
      flatner::require(out.good(), flatner::cat("cannot open output: ", args->out_path));
      run(out);
    }
  });
}

struct InspectArgs {
  std::string in_path;
  std::size_t index = 0;
  bool distances = false;
};

void run_inspect(const InspectArgs& args) {
  const auto samples = flatner::read_corpus(args.in_path);
  flatner::require(args.index < samples.size(),
                   flatner::cat("sample index ", args.index, " outside corpus of ",
                                samples.size(), " samples"));
  const flatner::Sample& s = samples[args.index];
  const flatner::Vocab words = flatner::build_word_vocab(samples);
  const flatner::Vocab objects = flatner::build_object_vocab(samples);
  const flatner::FlatLattice lat = flatner::lattice_for_sample(s, words, objects, false);

  const auto kind_name = [](flatner::ObjectKind k) {
    switch (k) {
      case flatner::ObjectKind::WHOLE_IMAGE: return "whole";
      case flatner::ObjectKind::NOUN_PHRASE: return "phrase";
      default: return "general";
    }
  };
  std::cout << "cell\tkind\tcontent\thead\ttail\n";
  for (std::size_t i = 0; i < lat.size(); ++i) {
    const flatner::Cell& c = lat.cells[i];
    std::string kind, content;
    if (c.modality == flatner::Modality::WORD) {
      kind = "word";
      content = s.tokens[i - lat.word_begin()];
    } else if (c.modality == flatner::Modality::SPECIAL) {
      kind = "marker";
      content = c.head == 0 ? "<s>" : "</s>";
    } else {
      const auto& obj = s.objects[i - (lat.n + 2)];
      kind = kind_name(obj.kind);
      content = obj.concept_name;
    }
    std::cout << i << "\t" << kind << "\t" << content << "\t" << c.head << "\t" << c.tail
              << "\n";
  }
  if (args.distances) {
    std::cout << "pair\thh\tht\tth\ttt\n";
    for (std::size_t i = 0; i < lat.size(); ++i)
      for (std::size_t j = 0; j < lat.size(); ++j) {
        const auto q = flatner::distance_quad(lat.cells[i], lat.cells[j]);
        std::cout << i << "," << j << "\t" << q.hh << "\t" << q.ht << "\t" << q.th << "\t"
                  << q.tt << "\n";
      }
  }
}

void add_inspect(CLI::App& app) {
  auto args = std::make_shared<InspectArgs>();
  auto seed = std::make_shared<std::uint64_t>(1);
  CLI::App* cmd = app.add_subcommand("inspect-lattice", "print a sample's lattice cells");
  cmd->set_config("--config", "", kConfigHelp);
  cmd->add_option("--in", args->in_path, "corpus file (jsonl)")->required();
  cmd->add_option("--index", args->index, "sample index")->capture_default_str();
  cmd->add_flag("--distances", args->distances, "also print all pairwise distance quads");
  cmd->add_option("--seed", *seed, "accepted for interface uniformity; inspection is exact");
  cmd->callback([args] { run_inspect(*args); });
}

struct GradcheckArgs {
  std::size_t d = 16;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t words = 4;
  std::size_t objects = 2;
  double lambda = 0.25;
  double step = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 1;
  bool no_rel = false;
  bool no_transitions = false;
  bool share_word_input = false;
};

int run_gradcheck(const GradcheckArgs& args) {
  flatner::ModelConfig cfg;
  cfg.d = args.d;
  cfg.heads = args.heads;
  cfg.layers = args.layers;
  cfg.d_word = std::max<std::size_t>(2, args.d / 2);
  cfg.d_visual = cfg.d_word;
  cfg.dropout = 0.0;
  cfg.vocab_words = 9;
  cfg.vocab_objects = 6;
  cfg.num_labels = 5;
  cfg.no_rel = args.no_rel;
  cfg.no_transitions = args.no_transitions;
  cfg.share_word_input = args.share_word_input;
  cfg.validate();

  flatner::Rng rng(flatner::derive_seed(args.seed, "gradcheck.sample"));
  std::vector<int> tokens(args.words);
  for (int& t : tokens) t = static_cast<int>(rng.below(cfg.vocab_words));
  std::vector<flatner::ObjectAnnotation> anns;
  for (std::size_t k = 0; k < args.objects; ++k) {
    flatner::ObjectAnnotation a;
    a.object_id = static_cast<int>(rng.below(cfg.vocab_objects));
    if (k % 2 == 0) {
      a.kind = flatner::ObjectKind::WHOLE_IMAGE;
    } else {
      a.kind = flatner::ObjectKind::NOUN_PHRASE;
      a.span_first = 1 + static_cast<int>(rng.below(args.words));
      a.span_last =
          a.span_first + static_cast<int>(rng.below(args.words - a.span_first + 1));
    }
    anns.push_back(a);
  }
  flatner::EncodedSample enc;
  enc.lattice = flatner::build_lattice(tokens, anns);
  enc.text_lattice = flatner::build_lattice(tokens, {});
  for (std::size_t i = 0; i < args.words; ++i) {
    enc.labels.push_back(static_cast<int>(rng.below(cfg.num_labels)));
    enc.boundaries.push_back(static_cast<int>(rng.below(flatner::kBoundaryLabels)));
  }

  const flatner::ParamStore<double> params = flatner::init_params<double>(cfg, args.seed);
  const auto loss_of = [&](const flatner::ParamStore<double>& p,
                           flatner::ParamStore<double>* grads) {
    flatner::Tape<double> tape;
    flatner::Leaves<double> leaves(tape, p);
    flatner::SinusoidCache<double> sinusoids(cfg.d);
    const flatner::Var loss = flatner::detail::sample_loss(tape, cfg, leaves, enc, sinusoids,
                                                           args.lambda, false, nullptr, nullptr);
    if (grads) {
      tape.backward(loss);
      *grads = leaves.grads(tape);
    }
    return static_cast<double>(tape.val(loss)[0]);
  };

  flatner::ParamStore<double> analytic;
  loss_of(params, &analytic);
  const flatner::GradCheckReport report = flatner::grad_check<double>(
      params, analytic, [&](const flatner::ParamStore<double>& p) { return loss_of(p, nullptr); },
      args.step);
  std::cout << report.render();
  const bool ok = report.pass(args.tol);
  std::cout << (ok ? "PASS" : "FAIL") << " tol=" << args.tol << "\n";
  return ok ? 0 : 3;
}

void add_gradcheck(CLI::App& app, int& rc) {
  auto args = std::make_shared<GradcheckArgs>();
  CLI::App* cmd =
      app.add_subcommand("gradcheck", "finite-difference check of the full joint gradient");
  cmd->set_config("--config", "", kConfigHelp);
  cmd->add_option("--d", args->d, "model width")->capture_default_str();
  cmd->add_option("--layers", args->layers, "transformer layers")->capture_default_str();
  cmd->add_option("--heads", args->heads, "attention heads")->capture_default_str();
  cmd->add_option("--words", args->words, "sentence length")->capture_default_str();
  cmd->add_option("--objects", args->objects, "object count")->capture_default_str();
  cmd->add_option("--lambda", args->lambda, "boundary-task loss weight")->capture_default_str();
  cmd->add_option("--step", args->step, "finite-difference step")->capture_default_str();
  cmd->add_option("--tol", args->tol, "max relative error accepted")->capture_default_str();
  cmd->add_option("--seed", args->seed, "parameter and sample seed")->capture_default_str();
  cmd->add_flag("--no-rel", args->no_rel, "ablate relative position encoding");
  cmd->add_flag("--no-transitions", args->no_transitions, "ablate CRF transitions");
  cmd->add_flag("--share-word-input", args->share_word_input,
                "boundary tower reuses the main word-input stack");
  cmd->callback([args, &rc] { rc = run_gradcheck(*args); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flat-lattice multimodal named entity recognition toolkit"};
  app.require_subcommand(1);
  int rc = 0;
  add_gen_data(app);
  add_train(app);
  add_eval(app);
  add_decode(app);
  add_inspect(app);
  add_gradcheck(app, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const flatner::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
