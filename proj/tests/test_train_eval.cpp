#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace slotner;
using namespace slotner::testing;

namespace {

using Tags = std::vector<std::vector<std::string>>;

const LabelSet kAB = LabelSet::from_entity_types({"a", "b"});

std::vector<std::vector<double>> values_of(const TaggerModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, t] : m.named_parameters()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

TrainConfig quick_config(std::size_t epochs = 2) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.learning_rate = 1e-2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Metrics, PerfectPredictionScoresOne) {
  const Tags gold = {{"B-a", "I-a", "O", "B-b"}, {"O", "B-b", "I-b"}};
  const EvalReport r = score_predictions(kAB, gold, gold);
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.token_macro_f1, 1.0);
  EXPECT_EQ(r.token_accuracy, 1.0);
  EXPECT_TRUE(r.absent_types.empty());
}

TEST(Metrics, WorkedExample) {
  // Type a: two gold spans, one predicted and correct. Type b: perfect.
  const Tags gold = {{"B-a", "O", "B-a", "O", "B-b"}};
  const Tags pred = {{"B-a", "O", "O", "O", "B-b"}};
  const EvalReport r = score_predictions(kAB, gold, pred);
  const TypeScore& a = r.per_type.at("a");
  EXPECT_EQ(a.precision, 1.0);
  EXPECT_EQ(a.recall, 0.5);
  EXPECT_DOUBLE_EQ(a.f1, 2.0 / 3.0);
  EXPECT_EQ(r.per_type.at("b").f1, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 5.0 / 6.0);
}

TEST(Metrics, BoundaryMismatchEarnsNothing) {
  const LabelSet ls = LabelSet::from_entity_types({"food"});
  const Tags gold = {{"O", "B-food", "I-food"}};
  const Tags pred = {{"O", "B-food", "O"}};
  const EvalReport r = score_predictions(ls, gold, pred);
  const TypeScore& f = r.per_type.at("food");
  EXPECT_EQ(f.true_positives, 0u);
  EXPECT_EQ(f.f1, 0.0);
  EXPECT_EQ(r.macro_f1, 0.0);
  // Token level still credits the matching B- label.
  EXPECT_EQ(r.per_label.at("B-food").f1, 1.0);
}

TEST(Metrics, WrongTypeEarnsNothing) {
  const EvalReport r = score_predictions(kAB, {{"B-a", "I-a"}}, {{"B-b", "I-b"}});
  EXPECT_EQ(r.per_type.at("a").true_positives, 0u);
  EXPECT_EQ(r.per_type.at("b").true_positives, 0u);
  EXPECT_EQ(r.macro_f1, 0.0);
}

TEST(Metrics, AbsentTypesAreFlaggedAndOptionallyExcluded) {
  const Tags gold = {{"B-a", "O"}};
  const EvalReport counted = score_predictions(kAB, gold, gold);
  EXPECT_EQ(counted.absent_types, std::vector<std::string>{"b"});
  EXPECT_TRUE(counted.per_type.at("b").absent);
  EXPECT_EQ(counted.macro_f1, 0.5);
  const EvalReport excluded = score_predictions(kAB, gold, gold, {.exclude_absent_types = true});
  EXPECT_EQ(excluded.macro_f1, 1.0);
  EXPECT_TRUE(excluded.absent_types_excluded);
}

TEST(Metrics, TruePositivesNeverExceedCounts) {
  Rng rng(3);
  const std::vector<std::string> pool = {"O", "B-a", "I-a", "B-b", "I-b"};
  for (int trial = 0; trial < 200; ++trial) {
    Tags gold(1), pred(1);
    const std::size_t T = 1 + rng.below(7);
    for (std::size_t t = 0; t < T; ++t) {
      gold[0].push_back(pool[rng.below(pool.size())]);
      pred[0].push_back(pool[rng.below(pool.size())]);
    }
    const EvalReport r = score_predictions(kAB, gold, pred);
    for (const auto& [_, s] : r.per_type) {
      EXPECT_LE(s.true_positives, std::min(s.gold_count, s.pred_count));
      EXPECT_GE(s.f1, 0.0);
      EXPECT_LE(s.f1, 1.0);
    }
  }
}

TEST(Metrics, ShapeErrors) {
  EXPECT_THROW(score_predictions(kAB, {{"O"}}, {}), DimensionError);
  EXPECT_THROW(score_predictions(kAB, {{"O"}}, {{"O", "O"}}), DimensionError);
}

TEST(Metrics, ReportJson) {
  const auto j = report_to_json(score_predictions(kAB, {{"B-a"}}, {{"B-a"}}));
  EXPECT_EQ(j["macro_f1"], 0.5);
  EXPECT_EQ(j["per_type"]["a"]["true_positives"], 1);
  EXPECT_EQ(j["absent_types"][0], "b");
}

TEST(EarlyStopping, StrictlyDecreasingScoresStopAfterPatience) {
  EarlyStopping s(1);
  EXPECT_TRUE(s.update(1, 0.8));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(2, 0.7));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 1u);
  EXPECT_EQ(s.best(), 0.8);
}

TEST(EarlyStopping, TiesDoNotCountAsImprovement) {
  EarlyStopping s(2);
  s.update(1, 0.5);
  EXPECT_FALSE(s.update(2, 0.5));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(3, 0.5));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(TrainConfigCheck, RejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(validate(c));
  for (auto edit : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& x) { x.max_epochs = 0; }, [](TrainConfig& x) { x.patience = 0; },
           [](TrainConfig& x) { x.dev_fraction = 0.0; }, [](TrainConfig& x) { x.dev_fraction = 1.0; },
           [](TrainConfig& x) { x.batch_size = 0; }, [](TrainConfig& x) { x.learning_rate = -1.0; },
           [](TrainConfig& x) { x.learning_rate = std::nan(""); }}) {
    TrainConfig bad;
    edit(bad);
    EXPECT_THROW(validate(bad), ValidationError);
  }
}

TEST(CarveDev, SizesAndDeterminism) {
  const Corpus c = generate_context_corpus(100, 2);
  const auto [tr, dev] = carve_dev(c, 0.1, 4);
  EXPECT_EQ(tr.size(), 90u);
  EXPECT_EQ(dev.size(), 10u);
  const auto [tr2, dev2] = carve_dev(c, 0.1, 4);
  EXPECT_EQ(dev.turns[0].dialogue_id, dev2.turns[0].dialogue_id);
  EXPECT_THROW(carve_dev(Corpus{}, 0.1, 1), ValidationError);
  EXPECT_THROW(carve_dev(generate_context_corpus(2, 1), 0.9, 1), ValidationError);
}

TEST(Train, RejectsEmptyOrIncompatibleData) {
  const Corpus c = single_pattern_corpus(10);
  TaggerModel m = create_tagger(tiny_variant({}), c, 1);
  EXPECT_THROW(train(m, Corpus{}, quick_config()), ValidationError);
  EXPECT_THROW(train(m, c, Corpus{}, quick_config()), ValidationError);
  const Corpus other = generate_unambiguous_corpus(10, 1);
  EXPECT_THROW(train(m, other, other, quick_config()), ValidationError);
  EXPECT_THROW(evaluate(m, other), ValidationError);
  EXPECT_THROW(evaluate(m, Corpus{}), ValidationError);
}

TEST(Train, SameSeedSameRun) {
  const Corpus c = generate_context_corpus(40, 3);
  const VariantConfig v = tiny_variant({false, true, true}, 8);
  TaggerModel a = create_tagger(v, c, 11), b = create_tagger(v, c, 11);
  const TrainResult ra = train(a, c, quick_config(3)), rb = train(b, c, quick_config(3));
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].dev_macro_f1, rb.history[i].dev_macro_f1);
  }
  EXPECT_EQ(values_of(a), values_of(b));
}

TEST(Train, ZeroLearningRateChangesNothing) {
  const Corpus c = single_pattern_corpus(10);
  TaggerModel m = create_tagger(tiny_variant({true, true, true}, 8), c, 2);
  const auto before = values_of(m);
  TrainConfig cfg = quick_config(2);
  cfg.learning_rate = 0.0;
  train(m, c, c, cfg);
  EXPECT_EQ(values_of(m), before);
}

TEST(Train, FrozenTableIsUntouched) {
  const Corpus c = generate_context_corpus(30, 4);
  VariantConfig v = tiny_variant({false, false, true}, 8);
  v.embedding_regime = EmbeddingRegime::SG300;
  v.sgns_epochs = 1;
  TaggerModel m = create_tagger(v, c, 3);
  ASSERT_TRUE(m.word_table.frozen);
  const std::vector<double> table(m.word_table.vectors.data().begin(), m.word_table.vectors.data().end());
  const std::vector<double> weight(m.emission_weight.data().begin(), m.emission_weight.data().end());
  train(m, c, c, quick_config(2));
  EXPECT_EQ(std::vector<double>(m.word_table.vectors.data().begin(), m.word_table.vectors.data().end()), table);
  EXPECT_NE(std::vector<double>(m.emission_weight.data().begin(), m.emission_weight.data().end()), weight);
}

TEST(Train, EarlyStoppingRestoresBestEpoch) {
  const Corpus c = generate_context_corpus(40, 5);
  TaggerModel m = create_tagger(tiny_variant({false, false, false}, 8), c, 4);
  TrainConfig cfg = quick_config(6);
  cfg.patience = 1;
  cfg.learning_rate = 0.05;
  std::vector<EpochRecord> seen;
  const TrainResult r = train(m, c, cfg, [&](const EpochRecord& e) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), r.history.size());
  ASSERT_FALSE(r.history.empty());
  EXPECT_EQ(r.history.front().epoch, 1u);
  EXPECT_TRUE(r.history.front().improved);
  double best = -1.0;
  for (const auto& e : r.history) best = std::max(best, e.dev_macro_f1);
  EXPECT_EQ(r.best_dev_macro_f1, best);
  EXPECT_EQ(r.history[r.best_epoch - 1].dev_macro_f1, best);
  if (r.stopped_early) {
    EXPECT_EQ(r.history.size(), r.best_epoch + 1);
  }
  // The restored parameters reproduce the best dev score.
  const auto [tr, dev] = carve_dev(c, cfg.dev_fraction, cfg.seed);
  EXPECT_EQ(evaluate(m, dev).macro_f1, best);
  const auto j = history_to_json(r);
  EXPECT_EQ(j["epochs"].size(), r.history.size());
}

TEST(Train, BatchSizeAccumulatesGradients) {
  const Corpus c = single_pattern_corpus(6);
  const VariantConfig v = tiny_variant({false, true, false}, 8);
  TaggerModel one = create_tagger(v, c, 6), all = create_tagger(v, c, 6), manual = create_tagger(v, c, 6);
  TrainConfig cfg = quick_config(1);
  cfg.shuffle_each_epoch = false;
  cfg.batch_size = 6;
  train(all, c, c, cfg);
  cfg.batch_size = 1;
  train(one, c, c, cfg);
  EXPECT_NE(values_of(one), values_of(all));
  // One Adam step on the summed gradient of all six turns.
  auto params = manual.trainable_parameters();
  for (const auto& t : c.turns) backward(loss(manual, t));
  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  adam_step(params, adam);
  EXPECT_EQ(values_of(manual), values_of(all));
}

TEST(Train, OverfitsSinglePattern) {
  const Corpus c = single_pattern_corpus(50);
  TaggerModel m = create_tagger(tiny_variant({false, true, false}), c, 1);
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.learning_rate = 1e-2;
  const TrainResult r = train(m, c, c, cfg);
  double best_loss = 1e9;
  for (const auto& e : r.history) best_loss = std::min(best_loss, e.train_loss);
  EXPECT_LT(best_loss, 0.01);
  EXPECT_EQ(evaluate(m, c).macro_f1, 1.0);
}
