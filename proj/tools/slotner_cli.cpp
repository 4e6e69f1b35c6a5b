// slotner: train, evaluate and run slot-filling taggers from the command line.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error. Diagnostics go to
// stderr; stdout carries only the requested data.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slotner/slotner.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace slotner;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(buf.str())));
  return std::string("fnv1a64:") + hex;
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) { j_["command"] = command; }

  void config(const ordered_json& c) { j_["config"] = c; }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void input(const std::string& role, const fs::path& p) {
    j_["inputs"][role] = {{"path", p.string()}, {"digest", file_digest(p)}};
  }
  void artifact(const fs::path& p) { j_["artifacts"].push_back(p.string()); }
  void set(const std::string& key, ordered_json v) { j_[key] = std::move(v); }

  // Written next to the primary artifact as <artifact>.manifest.json.
  void write(const fs::path& primary) {
    j_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_atomically(primary.string() + ".manifest.json", j_.dump(2) + "\n");
  }

 private:
  ordered_json j_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Options shared by commands that build a RunConfig: a config file first,
// then individual flags on top.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string regime;
  std::string vectors;
  std::optional<std::size_t> max_epochs, hidden_dim, word_dim, batch_size, patience;
  std::optional<double> learning_rate;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (or a run manifest)");
    cmd->add_option("--seed", seed, "Seed for every random draw");
    cmd->add_option("--variant", variant, "Model name, e.g. BI-LSTM-CHAR-CRF-CE");
    cmd->add_option("--regime", regime, "Embedding regime: SG300, G50W, G300W, G300C, custom");
    cmd->add_option("--vectors", vectors, "Pre-trained vector file for G* regimes");
    cmd->add_option("--max-epochs", max_epochs);
    cmd->add_option("--hidden-dim", hidden_dim);
    cmd->add_option("--word-dim", word_dim);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--patience", patience);
    cmd->add_option("--learning-rate", learning_rate);
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    nlohmann::json overrides = nlohmann::json::object();
    if (!variant.empty()) overrides["variant"] = variant;
    if (!regime.empty()) overrides["embedding_regime"] = regime;
    if (!vectors.empty()) overrides["vectors"] = vectors;
    if (seed) overrides["seed"] = *seed;
    if (max_epochs) overrides["max_epochs"] = *max_epochs;
    if (hidden_dim) overrides["hidden_dim"] = *hidden_dim;
    if (word_dim) overrides["word_dim"] = *word_dim;
    if (batch_size) overrides["batch_size"] = *batch_size;
    if (patience) overrides["patience"] = *patience;
    if (learning_rate) overrides["learning_rate"] = *learning_rate;
    // The variant name resets the three flags, so it must not clobber a
    // config file's explicit flags unless given on the command line.
    return parse_config(overrides, c);
  }
};

// ---------------------------------------------------------------------------

// A train manifest passed as --config also supplies the corpus path.
std::string corpus_from_manifest(const std::string& config_path) {
  if (config_path.empty()) return {};
  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open config '" + config_path + "'");
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_object() && j.contains("inputs") && j["inputs"].contains("corpus")) {
    return j["inputs"]["corpus"].value("path", "");
  }
  return {};
}

int cmd_train(std::string corpus_path, const std::string& out_path, const ConfigFlags& flags, bool quiet) {
  const RunConfig config = flags.resolve();
  if (corpus_path.empty()) corpus_path = corpus_from_manifest(flags.config_path);
  if (corpus_path.empty()) throw ValidationError("train needs --corpus (or a train manifest as --config)");
  const Corpus corpus = load_corpus(corpus_path);
  for (const auto& w : corpus.warnings) std::cerr << "warning: " << w << '\n';
  if (is_pretrained_file_regime(config.variant.embedding_regime) &&
      (config.vectors.empty() || !fs::exists(config.vectors))) {
    throw ValidationError("pre-trained vectors for regime " + to_string(config.variant.embedding_regime) +
                          " not found at '" + config.vectors + "'");
  }
  Manifest manifest("train");
  manifest.config(config_to_json(config));
  manifest.seed(config.train.seed);
  manifest.input("corpus", corpus_path);
  if (!config.vectors.empty() && is_pretrained_file_regime(config.variant.embedding_regime)) {
    manifest.input("vectors", config.vectors);
  }

  auto [train_part, dev_part] = carve_dev(corpus, config.train.dev_fraction, config.train.seed);
  TaggerModel model = create_tagger(config.variant, train_part, config.train.seed, config.vectors, corpus.label_set);
  if (!quiet) {
    std::cerr << "training " << model.variant.name() << " (" << to_string(model.variant.embedding_regime) << ") on "
              << train_part.size() << " turns, dev " << dev_part.size() << '\n';
  }
  const TrainResult result = train(model, train_part, dev_part, config.train, [&](const EpochRecord& e) {
    if (!quiet) {
      std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " dev_macro_f1 " << e.dev_macro_f1
                << (e.improved ? " *" : "") << '\n';
    }
  });

  const fs::path out(out_path);
  save_model(model, out);
  const fs::path history = out.string() + ".history.json";
  write_atomically(history, history_to_json(result).dump(2) + "\n");
  manifest.artifact(out);
  manifest.artifact(history);
  manifest.set("best_epoch", result.best_epoch);
  manifest.set("best_dev_macro_f1", result.best_dev_macro_f1);
  manifest.write(out);
  if (!quiet) std::cerr << "best epoch " << result.best_epoch << ", dev macro-F1 " << result.best_dev_macro_f1 << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& corpus_path, bool json, bool exclude_absent) {
  const TaggerModel model = load_model(model_path);
  const Corpus corpus = load_corpus(corpus_path);
  EvalOptions opts;
  opts.exclude_absent_types = exclude_absent;
  const EvalReport report = evaluate(model, corpus, opts);
  if (json) {
    std::cout << report_to_json(report).dump() << '\n';
    return kExitOk;
  }
  std::printf("%-16s %9s %9s %9s %6s %6s\n", "type", "precision", "recall", "f1", "gold", "pred");
  for (const auto& [type, s] : report.per_type) {
    std::printf("%-16s %9.4f %9.4f %9.4f %6zu %6zu%s\n", type.c_str(), s.precision, s.recall, s.f1, s.gold_count,
                s.pred_count, s.absent ? "  (absent)" : "");
  }
  std::printf("macro_f1 %.6f\ntoken_macro_f1 %.6f\ntoken_accuracy %.6f\n", report.macro_f1, report.token_macro_f1,
              report.token_accuracy);
  return kExitOk;
}

int cmd_tag(const std::string& model_path, const std::string& input_path, bool json) {
  const TaggerModel model = load_model(model_path);
  std::ifstream file;
  if (!input_path.empty()) {
    file.open(input_path);
    if (!file) throw IoError("cannot open input '" + input_path + "'");
  }
  std::istream& in = input_path.empty() ? std::cin : file;
  NoGradGuard no_grad;
  bool any_error = false;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    const auto system = tab == std::string::npos ? std::vector<std::string>{} : split_ws(line.substr(0, tab));
    const auto user = split_ws(tab == std::string::npos ? line : line.substr(tab + 1));
    if (user.empty()) {
      any_error = true;
      std::cerr << "line " << line_no << ": empty user utterance\n";
      if (json) {
        std::cout << ordered_json{{"line", line_no}, {"error", "empty user utterance"}}.dump() << '\n';
      } else {
        std::cout << '\n';
      }
      continue;
    }
    const auto tags = tag_names(model, predict(model, system, user));
    const auto spans = extract_spans(tags);
    if (json) {
      ordered_json j;
      j["line"] = line_no;
      j["user_tokens"] = user;
      j["tags"] = tags;
      j["spans"] = ordered_json::array();
      for (const auto& s : spans) {
        std::string text;
        for (std::size_t i = s.start; i <= s.end; ++i) text += (i > s.start ? " " : "") + user[i];
        j["spans"].push_back({{"type", s.type}, {"start", s.start}, {"end", s.end}, {"text", text}});
      }
      std::cout << j.dump() << '\n';
    } else {
      for (std::size_t i = 0; i < user.size(); ++i) std::cout << (i ? " " : "") << user[i] << '/' << tags[i];
      std::cout << '\t';
      for (std::size_t k = 0; k < spans.size(); ++k) {
        std::cout << (k ? " " : "") << spans[k].type << ':' << spans[k].start << '-' << spans[k].end;
      }
      std::cout << '\n';
    }
  }
  return any_error ? kExitValidation : kExitOk;
}

int cmd_sgns(const std::string& corpus_path, const std::string& out_path, SgnsConfig sg, std::size_t min_count) {
  const Corpus corpus = load_corpus(corpus_path);
  Manifest manifest("sgns");
  manifest.input("corpus", corpus_path);
  manifest.seed(sg.seed);
  manifest.config({{"dim", sg.dim},
                   {"window", sg.window},
                   {"negatives", sg.negatives},
                   {"epochs", sg.epochs},
                   {"learning_rate", sg.learning_rate},
                   {"min_count", min_count},
                   {"seed", sg.seed}});
  const Vocabulary vocab = build_vocab(normalized_tokens(corpus), min_count);
  const SgnsModel model = train_sgns(normalized_sentences(corpus), vocab, sg);
  write_vectors(out_path, vocab, model.center);
  manifest.artifact(out_path);
  manifest.write(out_path);
  return kExitOk;
}

int cmd_inspect(const std::string& corpus_path, bool json) {
  const Corpus corpus = load_corpus(corpus_path);
  const CorpusStats s = corpus_stats(corpus);
  if (json) {
    std::cout << stats_to_json(s).dump() << '\n';
    return kExitOk;
  }
  std::cout << "turns " << s.turns << "\nuser_tokens " << s.user_tokens << "\nempty_context_turns "
            << s.empty_context_turns << "\nentity_types " << s.unique_values_per_type.size() << "\nlabels";
  for (const auto& l : s.labels) std::cout << ' ' << l;
  std::cout << "\n\n" << "type\tspans\tunique_values\n";
  for (const auto& [type, n] : s.spans_per_type) {
    std::cout << type << '\t' << n << '\t' << s.unique_values_per_type.at(type) << '\n';
  }
  std::cout << "\nunique_values " << s.unique_values << "\nunique_prefixed_tokens " << s.unique_prefixed_tokens
            << "\niob_warnings " << s.iob_warnings << "\n\nlang\tturns\n";
  for (const auto& [lang, n] : s.turns_per_language) std::cout << lang << '\t' << n << '\n';
  return kExitOk;
}

struct GridFlags {
  std::string corpus, train, test, out, variants = "all", regimes = "SG300,G50W,G300W,G300C", reference = "en";
  std::string g50w, g300w, g300c;
  std::size_t jobs = 1;
};

int cmd_run_grid(const GridFlags& g, const ConfigFlags& flags, bool json) {
  RunConfig config = flags.resolve();
  Corpus train_corpus, test_corpus;
  Manifest manifest("run-grid");
  if (!g.corpus.empty()) {
    if (!g.train.empty() || !g.test.empty()) throw ValidationError("use either --corpus or --train/--test");
    const Corpus all = load_corpus(g.corpus);
    const std::size_t count = config.train_count.value_or(all.size() - all.size() / 8);
    auto split = split_corpus(all, count, config.train.seed);
    train_corpus = std::move(split.first);
    test_corpus = std::move(split.second);
    config.train_count = count;
    manifest.input("corpus", g.corpus);
  } else {
    if (g.train.empty() || g.test.empty()) throw ValidationError("run-grid needs --corpus or both --train and --test");
    train_corpus = load_corpus(g.train);
    test_corpus = load_corpus(g.test);
    manifest.input("train", g.train);
    manifest.input("test", g.test);
  }

  GridRequest request;
  request.base = config;
  request.jobs = g.jobs;
  request.reference_table = g.reference;
  if (g.reference != "en" && g.reference != "enhi") throw ValidationError("--reference must be en or enhi");
  if (g.variants != "all") {
    request.variants.clear();
    for (const auto& name : split_commas(g.variants)) request.variants.push_back(parse_variant_name(name));
  }
  request.regimes.clear();
  for (const auto& name : split_commas(g.regimes)) request.regimes.push_back(parse_regime(name));
  if (request.variants.empty() || request.regimes.empty()) throw ValidationError("empty variant or regime list");
  if (!g.g50w.empty()) request.vectors[EmbeddingRegime::G50W] = g.g50w;
  if (!g.g300w.empty()) request.vectors[EmbeddingRegime::G300W] = g.g300w;
  if (!g.g300c.empty()) request.vectors[EmbeddingRegime::G300C] = g.g300c;
  if (!config.vectors.empty() && request.vectors.empty() && is_pretrained_file_regime(config.variant.embedding_regime)) {
    request.vectors[config.variant.embedding_regime] = config.vectors;
  }

  const GridResult result = run_grid(train_corpus, test_corpus, request, [](const GridCell& c) {
    std::cerr << c.variant << " / " << regime_column_name(c.regime) << ": "
              << (c.macro_f1 ? format_percent(*c.macro_f1 * 100.0) : "error: " + c.error) << '\n';
  });
  const std::string tsv = grid_to_tsv(result, true);
  if (json) {
    std::cout << grid_to_json(result).dump() << '\n';
  } else {
    std::cout << tsv;
  }
  if (!g.out.empty()) {
    write_atomically(g.out, tsv);
    const fs::path json_out = g.out + ".json";
    write_atomically(json_out, grid_to_json(result).dump(2) + "\n");
    manifest.config(config_to_json(config));
    manifest.seed(config.train.seed);
    manifest.set("variants", result.variants);
    manifest.artifact(g.out);
    manifest.artifact(json_out);
    manifest.write(g.out);
  }
  return kExitOk;
}

int cmd_gen_synthetic(const std::string& kind, std::size_t turns, std::uint64_t seed, const std::string& out) {
  Corpus c;
  if (kind == "context") {
    c = generate_context_corpus(turns, seed);
  } else if (kind == "plain") {
    c = generate_unambiguous_corpus(turns, seed);
  } else if (kind == "blended") {
    c = blend_corpora(generate_context_corpus(turns / 2, seed), generate_unambiguous_corpus(turns - turns / 2, seed),
                      seed);
  } else {
    throw ValidationError("--kind must be context, plain or blended");
  }
  if (out.empty()) {
    write_corpus(c, std::cout);
    return kExitOk;
  }
  Manifest manifest("gen-synthetic");
  manifest.config({{"kind", kind}, {"turns", turns}, {"seed", seed}});
  manifest.seed(seed);
  save_corpus(c, out);
  manifest.artifact(out);
  manifest.write(out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural slot-filling tagger for task-oriented dialogue"};
  app.require_subcommand(1);
  bool json = false;

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a tagger and write a checkpoint");
  std::string corpus_path, out_path, model_path, input_path;
  bool quiet = false;
  ConfigFlags flags;
  train_cmd->add_option("--corpus", corpus_path, "Training corpus (JSON Lines); defaults to the one in a manifest");
  train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");
  flags.add_to(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  bool exclude_absent = false;
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--corpus", corpus_path)->required();
  eval_cmd->add_flag("--json", json, "Print one JSON object");
  eval_cmd->add_flag("--exclude-absent", exclude_absent, "Leave types absent from gold and prediction out of macro-F1");

  // tag
  auto* tag_cmd = app.add_subcommand("tag", "Tag `system<TAB>user` lines from a file or stdin");
  tag_cmd->add_option("--model", model_path)->required();
  tag_cmd->add_option("--input", input_path, "Input file (default: stdin)");
  tag_cmd->add_flag("--json", json, "One JSON object per line");

  // sgns
  auto* sgns_cmd = app.add_subcommand("sgns", "Train skip-gram vectors on a corpus");
  SgnsConfig sg;
  std::size_t min_count = 1;
  sgns_cmd->add_option("--corpus", corpus_path)->required();
  sgns_cmd->add_option("--out", out_path, "Vector file to write")->required();
  sgns_cmd->add_option("--dims", sg.dim, "Vector width")->capture_default_str();
  sgns_cmd->add_option("--window", sg.window)->capture_default_str();
  sgns_cmd->add_option("--negatives", sg.negatives)->capture_default_str();
  sgns_cmd->add_option("--epochs", sg.epochs)->capture_default_str();
  sgns_cmd->add_option("--min-count", min_count)->capture_default_str();
  sgns_cmd->add_option("--seed", sg.seed)->capture_default_str();

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Print corpus statistics");
  inspect_cmd->add_option("--corpus", corpus_path)->required();
  inspect_cmd->add_flag("--json", json);

  // run-grid
  auto* grid_cmd = app.add_subcommand("run-grid", "Train and score a variants x regimes grid");
  GridFlags grid;
  ConfigFlags grid_flags;
  grid_cmd->add_option("--corpus", grid.corpus, "Single corpus, split by train_count");
  grid_cmd->add_option("--train", grid.train);
  grid_cmd->add_option("--test", grid.test);
  grid_cmd->add_option("--variants", grid.variants, "Comma list of model names, or 'all'")->capture_default_str();
  grid_cmd->add_option("--regimes", grid.regimes, "Comma list of regimes")->capture_default_str();
  grid_cmd->add_option("--vectors-g50w", grid.g50w);
  grid_cmd->add_option("--vectors-g300w", grid.g300w);
  grid_cmd->add_option("--vectors-g300c", grid.g300c);
  grid_cmd->add_option("--reference", grid.reference, "Reference table: en or enhi")->capture_default_str();
  grid_cmd->add_option("--out", grid.out, "Write the table (TSV) and <out>.json here");
  grid_cmd->add_option("--jobs", grid.jobs, "Cells trained in parallel")->capture_default_str();
  grid_cmd->add_flag("--json", json);
  grid_flags.add_to(grid_cmd);

  // gen-synthetic
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic corpus");
  std::string kind = "context";
  std::size_t turns = 2000;
  std::uint64_t gen_seed = 1;
  gen_cmd->add_option("--kind", kind, "context, plain or blended")->capture_default_str();
  gen_cmd->add_option("--turns", turns)->capture_default_str();
  gen_cmd->add_option("--seed", gen_seed)->capture_default_str();
  gen_cmd->add_option("--out", out_path, "Output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitValidation;
  }

  try {
    if (*train_cmd) return cmd_train(corpus_path, out_path, flags, quiet);
    if (*eval_cmd) return cmd_eval(model_path, corpus_path, json, exclude_absent);
    if (*tag_cmd) return cmd_tag(model_path, input_path, json);
    if (*sgns_cmd) return cmd_sgns(corpus_path, out_path, sg, min_count);
    if (*inspect_cmd) return cmd_inspect(corpus_path, json);
    if (*grid_cmd) return cmd_run_grid(grid, grid_flags, json);
    if (*gen_cmd) return cmd_gen_synthetic(kind, turns, gen_seed, out_path);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
