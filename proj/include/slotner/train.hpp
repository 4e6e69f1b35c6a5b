#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slotner/adam.hpp"
#include "slotner/corpus.hpp"
#include "slotner/errors.hpp"
#include "slotner/rng.hpp"
#include "slotner/tagger.hpp"

namespace slotner {

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  // Leave types with neither gold nor predicted spans out of the macro mean
  // instead of counting them as F1 = 0.
  bool exclude_absent_types = false;
};

struct TypeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold_count = 0;
  std::size_t pred_count = 0;
  std::size_t true_positives = 0;
  bool absent = false;  // no gold and no predicted occurrences
};

struct EvalReport {
  std::map<std::string, TypeScore> per_type;  // span level
  double macro_f1 = 0.0;
  std::map<std::string, TypeScore> per_label;  // token level, B-/I- labels
  double token_macro_f1 = 0.0;
  double token_accuracy = 0.0;
  std::size_t turns = 0;
  std::size_t tokens = 0;
  bool absent_types_excluded = false;
  std::vector<std::string> absent_types;
};

namespace detail {

inline TypeScore make_score(std::size_t tp, std::size_t gold, std::size_t pred) {
  TypeScore s;
  s.true_positives = tp;
  s.gold_count = gold;
  s.pred_count = pred;
  s.absent = gold == 0 && pred == 0;
  s.precision = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
  s.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline double macro_mean(const std::map<std::string, TypeScore>& scores, bool exclude_absent) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [_, s] : scores) {
    if (exclude_absent && s.absent) continue;
    total += s.f1;
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace detail

// Span-level exact-match scores plus token-level label scores. A predicted
// span is a true positive iff type, start and end all equal a gold span.
inline EvalReport score_predictions(const LabelSet& labels, const std::vector<std::vector<std::string>>& gold,
                                    const std::vector<std::vector<std::string>>& predicted,
                                    const EvalOptions& options = {}) {
  if (gold.size() != predicted.size()) throw DimensionError("gold and predicted turn counts differ");
  std::map<std::string, std::size_t> tp, gold_n, pred_n;
  std::map<std::string, std::size_t> ltp, lgold, lpred;
  std::size_t correct = 0, tokens = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != predicted[i].size()) throw DimensionError("gold and predicted lengths differ");
    const auto gs = extract_spans(gold[i]);
    const auto ps = extract_spans(predicted[i]);
    for (const auto& s : gs) ++gold_n[s.type];
    for (const auto& s : ps) {
      ++pred_n[s.type];
      if (std::find(gs.begin(), gs.end(), s) != gs.end()) ++tp[s.type];
    }
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      ++tokens;
      const bool same = gold[i][t] == predicted[i][t];
      correct += same ? 1 : 0;
      if (gold[i][t] != "O") ++lgold[gold[i][t]];
      if (predicted[i][t] != "O") ++lpred[predicted[i][t]];
      if (same && gold[i][t] != "O") ++ltp[gold[i][t]];
    }
  }
  EvalReport r;
  r.turns = gold.size();
  r.tokens = tokens;
  r.absent_types_excluded = options.exclude_absent_types;
  for (const auto& type : labels.entity_types()) {
    r.per_type[type] = detail::make_score(tp[type], gold_n[type], pred_n[type]);
    if (r.per_type[type].absent) r.absent_types.push_back(type);
  }
  for (std::size_t id = 1; id < labels.size(); ++id) {
    const auto& l = labels.name(id);
    r.per_label[l] = detail::make_score(ltp[l], lgold[l], lpred[l]);
  }
  r.macro_f1 = detail::macro_mean(r.per_type, options.exclude_absent_types);
  r.token_macro_f1 = detail::macro_mean(r.per_label, options.exclude_absent_types);
  r.token_accuracy = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  return r;
}

inline void check_label_compatibility(const TaggerModel& model, const Corpus& corpus) {
  for (const auto& label : corpus.label_set.labels()) {
    if (!model.labels.contains(label)) {
      throw ValidationError("corpus label '" + label + "' is not in the model's label set");
    }
  }
}

inline EvalReport evaluate(const TaggerModel& model, const Corpus& corpus, const EvalOptions& options = {}) {
  if (corpus.empty()) throw ValidationError("cannot evaluate on an empty corpus");
  check_label_compatibility(model, corpus);
  NoGradGuard no_grad;
  std::vector<std::vector<std::string>> gold, pred;
  for (const auto& turn : corpus.turns) {
    gold.push_back(turn.tags);
    pred.push_back(tag_names(model, predict(model, turn)));
  }
  return score_predictions(model.labels, gold, pred, options);
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  auto rows = [](const std::map<std::string, TypeScore>& m) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [name, s] : m) {
      out[name] = {{"precision", s.precision}, {"recall", s.recall},         {"f1", s.f1},
                   {"gold_count", s.gold_count}, {"pred_count", s.pred_count}, {"true_positives", s.true_positives},
                   {"absent", s.absent}};
    }
    return out;
  };
  nlohmann::ordered_json j;
  j["macro_f1"] = r.macro_f1;
  j["token_macro_f1"] = r.token_macro_f1;
  j["token_accuracy"] = r.token_accuracy;
  j["turns"] = r.turns;
  j["tokens"] = r.tokens;
  j["absent_types_excluded"] = r.absent_types_excluded;
  j["absent_types"] = r.absent_types;
  j["per_type"] = rows(r.per_type);
  j["per_label"] = rows(r.per_label);
  return j;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t max_epochs = 30;
  double learning_rate = 1e-3;
  std::size_t patience = 3;
  double dev_fraction = 0.1;
  std::uint64_t seed = 1;
  bool shuffle_each_epoch = true;
  // Turns whose summed gradients feed one Adam update.
  std::size_t batch_size = 1;
  EvalOptions eval;

  bool operator==(const TrainConfig& o) const {
    return max_epochs == o.max_epochs && learning_rate == o.learning_rate && patience == o.patience &&
           dev_fraction == o.dev_fraction && seed == o.seed && shuffle_each_epoch == o.shuffle_each_epoch &&
           batch_size == o.batch_size && eval.exclude_absent_types == o.eval.exclude_absent_types;
  }
};

inline void validate(const TrainConfig& c) {
  if (c.max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (c.patience < 1) throw ValidationError("patience must be >= 1");
  if (!(c.dev_fraction > 0.0 && c.dev_fraction < 1.0)) throw ValidationError("dev_fraction must lie in (0, 1)");
  if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ValidationError("learning_rate must be a finite non-negative number");
  }
}

// Tracks the best score seen and how many epochs have passed without a strict
// improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `score` strictly improves on the best so far.
  bool update(std::size_t epoch, double score) {
    if (score > best_) {
      best_ = score;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean per-turn loss
  double dev_macro_f1 = 0.0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_dev_macro_f1 = 0.0;
  bool stopped_early = false;
};

// Seeded shuffle; the last ceil(fraction * n) turns form the dev part.
inline std::pair<Corpus, Corpus> carve_dev(const Corpus& corpus, double dev_fraction, std::uint64_t seed) {
  const auto n = corpus.size();
  const auto dev_n = static_cast<std::size_t>(std::ceil(dev_fraction * static_cast<double>(n)));
  if (n == 0 || dev_n == 0 || dev_n >= n) {
    throw ValidationError("cannot carve a non-empty dev split (fraction " + std::to_string(dev_fraction) +
                          ") from " + std::to_string(n) + " turns");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::derive(seed, "dev-split"));
  rng.shuffle(order);
  std::vector<DialogueTurn> train, dev;
  for (std::size_t i = 0; i < n; ++i) (i < n - dev_n ? train : dev).push_back(corpus.turns[order[i]]);
  return {make_corpus(std::move(train)), make_corpus(std::move(dev))};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam over the model's trainable tensors, one pass over `train` per epoch,
// dev macro-F1 after each epoch. Stops after `patience` epochs without
// improvement and leaves the model at its best-dev parameters.
inline TrainResult train(TaggerModel& model, const Corpus& train_part, const Corpus& dev_part,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  validate(config);
  if (train_part.empty() || dev_part.empty()) throw ValidationError("training needs non-empty train and dev splits");
  check_label_compatibility(model, train_part);
  check_label_compatibility(model, dev_part);

  std::vector<Tensor> params = model.trainable_parameters();
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  for (Tensor& p : params) p.zero_grad();

  std::vector<std::vector<double>> best_values;
  auto snapshot = [&] {
    best_values.clear();
    for (const Tensor& p : params) best_values.emplace_back(p.data().begin(), p.data().end());
  };
  snapshot();

  std::vector<std::size_t> order(train_part.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(Rng::derive(config.seed, "epoch-shuffle"));
  EarlyStopping stopper(config.patience);
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (config.shuffle_each_epoch) rng.shuffle(order);
    double total_loss = 0.0;
    std::size_t pending = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      {
        const Tensor l = loss(model, train_part.turns[order[i]]);
        total_loss += l.item();
        backward(l);
      }
      if (++pending == config.batch_size || i + 1 == order.size()) {
        adam_step(params, adam);
        for (Tensor& p : params) p.zero_grad();
        pending = 0;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total_loss / static_cast<double>(order.size());
    rec.dev_macro_f1 = evaluate(model, dev_part, config.eval).macro_f1;
    rec.improved = stopper.update(epoch, rec.dev_macro_f1);
    if (rec.improved) snapshot();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(best_values[i].begin(), best_values[i].end(), params[i].mutable_data().begin());
  }
  result.best_epoch = stopper.best_epoch();
  result.best_dev_macro_f1 = stopper.best();
  return result;
}

// Carves the dev split from `corpus` per `config.dev_fraction`.
inline TrainResult train(TaggerModel& model, const Corpus& corpus, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  validate(config);
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  auto [train_part, dev_part] = carve_dev(corpus, config.dev_fraction, config.seed);
  return train(model, train_part, dev_part, config, on_epoch);
}

inline nlohmann::ordered_json history_to_json(const TrainResult& r) {
  nlohmann::ordered_json j;
  j["best_epoch"] = r.best_epoch;
  j["best_dev_macro_f1"] = r.best_dev_macro_f1;
  j["stopped_early"] = r.stopped_early;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.history) {
    j["epochs"].push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_macro_f1", e.dev_macro_f1}, {"improved", e.improved}});
  }
  return j;
}

}  // namespace slotner
