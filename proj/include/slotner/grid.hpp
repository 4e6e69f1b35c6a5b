#pragma once

// Trains and scores every (variant, embedding regime) cell independently from
// a shared base seed, and lays the results out as a variants x regimes table.

#include <atomic>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slotner/config.hpp"
#include "slotner/corpus.hpp"
#include "slotner/tagger.hpp"
#include "slotner/train.hpp"

namespace slotner {

// Published macro-F1 scores (percent) for the eight LSTM variants, kept for
// side-by-side printing only. "en": four regimes; "enhi": SG300 only.
inline std::optional<double> published_reference(const std::string& table, const std::string& variant,
                                                 EmbeddingRegime regime) {
  static const std::map<std::string, std::vector<double>> en = {
      {"BI-LSTM", {86.928, 88.138, 89.388, 90.057}},
      {"BI-LSTM-CE", {89.130, 90.163, 90.910, 91.224}},
      {"BI-LSTM-CHAR", {87.465, 89.089, 89.442, 90.551}},
      {"BI-LSTM-CHAR-CE", {89.412, 91.087, 91.342, 91.880}},
      {"BI-LSTM-CRF", {87.782, 89.529, 89.871, 90.627}},
      {"BI-LSTM-CRF-CE", {89.696, 91.122, 91.455, 92.133}},
      {"BI-LSTM-CHAR-CRF", {88.276, 89.628, 90.971, 91.079}},
      {"BI-LSTM-CHAR-CRF-CE", {90.036, 91.705, 92.042, 92.864}},
  };
  static const std::map<std::string, double> enhi = {
      {"BI-LSTM", 84.867},          {"BI-LSTM-CE", 86.242},       {"BI-LSTM-CHAR", 85.119},
      {"BI-LSTM-CHAR-CE", 86.433},  {"BI-LSTM-CRF", 85.342},      {"BI-LSTM-CRF-CE", 86.790},
      {"BI-LSTM-CHAR-CRF", 85.643}, {"BI-LSTM-CHAR-CRF-CE", 87.934},
  };
  if (table == "en") {
    auto it = en.find(variant);
    if (it == en.end()) return std::nullopt;
    switch (regime) {
      case EmbeddingRegime::SG300: return it->second[0];
      case EmbeddingRegime::G50W: return it->second[1];
      case EmbeddingRegime::G300W: return it->second[2];
      case EmbeddingRegime::G300C: return it->second[3];
      default: return std::nullopt;
    }
  }
  if (table == "enhi" && regime == EmbeddingRegime::SG300) {
    auto it = enhi.find(variant);
    if (it != enhi.end()) return it->second;
  }
  return std::nullopt;
}

inline std::string regime_column_name(EmbeddingRegime r) {
  return r == EmbeddingRegime::SG300 ? "SGNS300" : to_string(r);
}

struct GridRequest {
  RunConfig base;
  std::vector<VariantFlags> variants = grid_variants();
  std::vector<EmbeddingRegime> regimes = {EmbeddingRegime::SG300, EmbeddingRegime::G50W, EmbeddingRegime::G300W,
                                          EmbeddingRegime::G300C};
  std::map<EmbeddingRegime, std::string> vectors;
  std::string reference_table = "en";
  std::size_t jobs = 1;
};

struct GridCell {
  std::string variant;
  EmbeddingRegime regime = EmbeddingRegime::SG300;
  std::optional<double> macro_f1;
  std::optional<double> token_macro_f1;
  std::size_t best_epoch = 0;
  std::string error;
  std::optional<double> reference;
};

struct GridResult {
  std::vector<std::string> variants;
  std::vector<EmbeddingRegime> regimes;
  std::vector<GridCell> cells;  // row-major: variant, then regime

  const GridCell& cell(std::size_t v, std::size_t r) const { return cells.at(v * regimes.size() + r); }
};

inline GridCell run_grid_cell(const Corpus& train_part, const Corpus& dev_part, const Corpus& test,
                              const LabelSet& labels, const GridRequest& request, const VariantFlags& flags,
                              EmbeddingRegime regime) {
  VariantConfig variant = with_flags(request.base.variant, flags);
  variant.embedding_regime = regime;
  GridCell cell;
  cell.variant = variant.name();
  cell.regime = regime;
  cell.reference = published_reference(request.reference_table, cell.variant, regime);
  try {
    std::string path;
    if (auto it = request.vectors.find(regime); it != request.vectors.end()) path = it->second;
    TaggerModel model = create_tagger(variant, train_part, request.base.train.seed, path, labels);
    const TrainResult tr = train(model, train_part, dev_part, request.base.train);
    const EvalReport report = evaluate(model, test, request.base.train.eval);
    cell.macro_f1 = report.macro_f1;
    cell.token_macro_f1 = report.token_macro_f1;
    cell.best_epoch = tr.best_epoch;
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
  return cell;
}

// A failing cell (for example a missing vector file) records its error and
// the grid carries on.
inline GridResult run_grid(const Corpus& train_corpus, const Corpus& test, const GridRequest& request,
                           const std::function<void(const GridCell&)>& on_cell = {}) {
  validate(request.base);
  if (train_corpus.empty() || test.empty()) throw ValidationError("run_grid needs non-empty train and test corpora");
  auto [train_part, dev_part] = carve_dev(train_corpus, request.base.train.dev_fraction, request.base.train.seed);
  std::vector<DialogueTurn> all = train_corpus.turns;
  all.insert(all.end(), test.turns.begin(), test.turns.end());
  const LabelSet labels = label_set_of(all);

  GridResult result;
  for (const auto& f : request.variants) result.variants.push_back(with_flags(request.base.variant, f).name());
  result.regimes = request.regimes;
  const std::size_t n = request.variants.size() * request.regimes.size();
  result.cells.resize(n);

  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto& flags = request.variants[i / request.regimes.size()];
      const auto regime = request.regimes[i % request.regimes.size()];
      result.cells[i] = run_grid_cell(train_part, dev_part, test, labels, request, flags, regime);
      if (on_cell) {
        std::lock_guard lock(report_mutex);
        on_cell(result.cells[i]);
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(request.jobs, n));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  return result;
}

inline std::string format_percent(std::optional<double> v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

// Tab-separated table: one row per variant, one column per regime (scores in
// percent), then reference columns when requested.
inline std::string grid_to_tsv(const GridResult& g, bool with_reference = true) {
  std::ostringstream out;
  out << "Model";
  for (auto r : g.regimes) out << '\t' << regime_column_name(r);
  if (with_reference) {
    for (auto r : g.regimes) out << "\tref:" << regime_column_name(r);
  }
  out << '\n';
  for (std::size_t v = 0; v < g.variants.size(); ++v) {
    out << g.variants[v];
    for (std::size_t r = 0; r < g.regimes.size(); ++r) {
      const auto& c = g.cell(v, r);
      out << '\t' << format_percent(c.macro_f1 ? std::optional<double>(*c.macro_f1 * 100.0) : std::nullopt);
    }
    if (with_reference) {
      for (std::size_t r = 0; r < g.regimes.size(); ++r) out << '\t' << format_percent(g.cell(v, r).reference);
    }
    out << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json grid_to_json(const GridResult& g) {
  nlohmann::ordered_json j;
  j["variants"] = g.variants;
  nlohmann::ordered_json regimes = nlohmann::ordered_json::array();
  for (auto r : g.regimes) regimes.push_back(regime_column_name(r));
  j["regimes"] = regimes;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : g.cells) {
    nlohmann::ordered_json cell;
    cell["variant"] = c.variant;
    cell["regime"] = regime_column_name(c.regime);
    cell["macro_f1"] = c.macro_f1 ? nlohmann::ordered_json(*c.macro_f1) : nlohmann::ordered_json(nullptr);
    cell["token_macro_f1"] = c.token_macro_f1 ? nlohmann::ordered_json(*c.token_macro_f1) : nlohmann::ordered_json(nullptr);
    cell["best_epoch"] = c.best_epoch;
    cell["reference_percent"] = c.reference ? nlohmann::ordered_json(*c.reference) : nlohmann::ordered_json(nullptr);
    if (!c.error.empty()) cell["error"] = c.error;
    j["cells"].push_back(cell);
  }
  return j;
}

}  // namespace slotner
