#include <cmath>

#include <gtest/gtest.h>

#include "crf_oracle.hpp"
#include "gradcheck.hpp"
#include "slotner/corpus.hpp"
#include "slotner/crf.hpp"

using namespace slotner;
using namespace slotner::testing;

TEST(Labels, ParseAndOrder) {
  EXPECT_TRUE(parse_iob("O").outside());
  EXPECT_EQ(parse_iob("I-food").type, "food");
  EXPECT_TRUE(parse_iob("B-x").begin());
  for (const char* bad : {"", "B-", "X-food", "b-food", "Bfood", "o"}) EXPECT_THROW(parse_iob(bad), ValidationError) << bad;
  const std::vector<std::string> tags = {"I-food", "O", "B-area"};
  const LabelSet ls = LabelSet::from_tags(tags);
  EXPECT_EQ(ls.labels(), (std::vector<std::string>{"O", "B-area", "I-area", "B-food", "I-food"}));
  EXPECT_EQ(ls.id("I-area"), 2u);
  EXPECT_THROW(ls.id("B-price"), ValidationError);
  EXPECT_EQ(LabelSet::from_labels(ls.labels()), ls);
  EXPECT_THROW(LabelSet::from_labels({"O", "I-area", "B-area"}), ValidationError);
}

TEST(ScoreSequence, SingleStepZeroParams) {
  const Tensor e = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  const CrfParams p = CrfParams::zeros(3, false);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(score_sequence(e, {k}, p).item(), e.at(0, k));
}

TEST(ScoreSequence, AllZeroIsZero) {
  const Tensor e(Shape{4, 3});
  const CrfParams p = CrfParams::zeros(3, false);
  EXPECT_EQ(score_sequence(e, {0, 2, 1, 1}, p).item(), 0.0);
}

TEST(ScoreSequence, MatchesDefinitionOnEverySequence) {
  Rng rng(1);
  const CrfInstance c = random_crf_instance(4, 3, rng);
  const Tensor e = c.emission_tensor();
  const CrfParams p = c.params();
  std::size_t seen = 0;
  for (std::size_t code = 0; code < 81; ++code, ++seen) {
    TagSequence y(4);
    for (std::size_t t = 0, x = code; t < 4; ++t, x /= 3) y[t] = x % 3;
    EXPECT_NEAR(score_sequence(e, y, p).item(), brute_score(c, y), 1e-12);
  }
  EXPECT_EQ(seen, 81u);
}

TEST(ScoreSequence, Errors) {
  const CrfParams p = CrfParams::zeros(3, false);
  EXPECT_THROW(score_sequence(Tensor(Shape{2, 3}), {0}, p), DimensionError);
  EXPECT_THROW(score_sequence(Tensor(Shape{1, 3}), {3}, p), DimensionError);
  EXPECT_THROW(score_sequence(Tensor(Shape{2, 4}), {0, 1}, p), DimensionError);
  EXPECT_THROW(log_partition(Tensor(Shape{0, 3}), p), DimensionError);
}

TEST(LogPartition, UniformCase) {
  EXPECT_NEAR(log_partition(Tensor(Shape{3, 4}), CrfParams::zeros(4, false)).item(), 3 * std::log(4.0), 1e-12);
}

TEST(LogPartition, SingleLabel) {
  Rng rng(2);
  const CrfInstance c = random_crf_instance(5, 1, rng);
  EXPECT_NEAR(log_partition(c.emission_tensor(), c.params()).item(), brute_score(c, {0, 0, 0, 0, 0}), 1e-12);
  const auto v = viterbi_decode(c.emission_tensor(), c.params());
  EXPECT_EQ(v.tags, (TagSequence{0, 0, 0, 0, 0}));
  EXPECT_NEAR(v.score, brute_score(c, v.tags), 1e-12);
}

TEST(LogPartition, MatchesEnumeration) {
  Rng rng(3);
  const CrfInstance c = random_crf_instance(5, 3, rng);
  EXPECT_NEAR(log_partition(c.emission_tensor(), c.params()).item(), enumerate(c).log_z, 1e-10);
}

TEST(Oracle, AllSmallShapes) {
  Rng rng(4);
  for (std::size_t K = 1; K <= 5; ++K) {
    for (std::size_t T = 1; T <= 6; ++T) {
      if (std::pow(K, T) > 20000) continue;
      const CrfInstance c = random_crf_instance(T, K, rng, 3.0);
      const BruteForce bf = enumerate(c);
      EXPECT_NEAR(log_partition(c.emission_tensor(), c.params()).item(), bf.log_z, 1e-10) << "K=" << K << " T=" << T;
      const auto v = viterbi_decode(c.emission_tensor(), c.params());
      EXPECT_NEAR(v.score, bf.best, 1e-10);
      EXPECT_EQ(brute_score(c, v.tags), bf.best) << "K=" << K << " T=" << T;
    }
  }
}

TEST(Nll, NonNegativeAndUniform) {
  EXPECT_NEAR(crf_nll(Tensor(Shape{2, 4}), {1, 3}, CrfParams::zeros(4, false)).item(), 2 * std::log(4.0), 1e-12);
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    const CrfInstance c = random_crf_instance(4, 4, rng, 5.0);
    TagSequence gold(4);
    for (auto& g : gold) g = rng.below(4);
    EXPECT_GE(crf_nll(c.emission_tensor(), gold, c.params()).item(), 0.0);
  }
}

TEST(Nll, SaturatedGoldGivesTinyLoss) {
  const TagSequence gold = {2, 0, 1};
  std::vector<double> e(9, 0.0);
  for (std::size_t t = 0; t < 3; ++t) e[t * 3 + gold[t]] = 1e3;
  EXPECT_LT(crf_nll(Tensor(Shape{3, 3}, e), gold, CrfParams::zeros(3, false)).item(), 1e-6);
}

TEST(Nll, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const CrfInstance c = random_crf_instance(4, 3, rng);
  Tensor e = c.emission_tensor(true);
  const CrfParams p = c.params(true);
  const TagSequence gold = {0, 2, 2, 1};
  auto params = p.named_parameters("crf");
  params.emplace_back("emissions", e);
  auto report = check_gradients([&] { return crf_nll(e, gold, p); }, params);
  EXPECT_TRUE(report.ok) << report.worst;
}

TEST(Nll, EmissionGradientIsMarginalMinusGold) {
  Rng rng(7);
  const CrfInstance c = random_crf_instance(4, 3, rng);
  Tensor e = c.emission_tensor(true);
  const TagSequence gold = {1, 1, 0, 2};
  backward(crf_nll(e, gold, c.params()));
  const BruteForce bf = enumerate(c);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double expected = bf.marginals[t * 3 + k] - (gold[t] == k ? 1.0 : 0.0);
      EXPECT_NEAR(e.grad()[t * 3 + k], expected, 1e-12);
    }
  }
}

TEST(Viterbi, FactorisedCaseIsPerPositionArgmax) {
  Rng rng(8);
  const CrfInstance c = random_crf_instance(6, 4, rng);
  const auto v = viterbi_decode(c.emission_tensor(), CrfParams::zeros(4, false));
  for (std::size_t t = 0; t < 6; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 4; ++k)
      if (c.emissions[t * 4 + k] > c.emissions[t * 4 + best]) best = k;
    EXPECT_EQ(v.tags[t], best);
  }
}

TEST(Viterbi, TiesPreferLowerIds) {
  const auto v = viterbi_decode(Tensor(Shape{4, 3}), CrfParams::zeros(3, false));
  EXPECT_EQ(v.tags, (TagSequence{0, 0, 0, 0}));
  const auto w = viterbi_decode(Tensor::matrix(2, 3, {0, 1, 1, 0, 2, 2}), CrfParams::zeros(3, false));
  EXPECT_EQ(w.tags, (TagSequence{1, 1}));
}

TEST(Viterbi, MatchesEnumeration) {
  Rng rng(9);
  const CrfInstance c = random_crf_instance(5, 3, rng);
  const auto v = viterbi_decode(c.emission_tensor(), c.params());
  const BruteForce bf = enumerate(c);
  EXPECT_NEAR(v.score, bf.best, 1e-12);
  EXPECT_EQ(brute_score(c, v.tags), bf.best);
}

TEST(Crf, ShiftInvariance) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const CrfInstance c = random_crf_instance(5, 4, rng);
    CrfInstance shifted = c;
    const std::size_t t = rng.below(5);
    const double k = rng.uniform(-50, 50);
    for (std::size_t j = 0; j < 4; ++j) shifted.emissions[t * 4 + j] += k;
    const double z0 = log_partition(c.emission_tensor(), c.params()).item();
    const double z1 = log_partition(shifted.emission_tensor(), shifted.params()).item();
    EXPECT_NEAR(z1 - z0, k, 1e-10);
    const auto v0 = viterbi_decode(c.emission_tensor(), c.params());
    const auto v1 = viterbi_decode(shifted.emission_tensor(), shifted.params());
    EXPECT_NEAR(v1.score - v0.score, k, 1e-10);
    EXPECT_EQ(v0.tags, v1.tags);
  }
}

TEST(Mask, IobRules) {
  const LabelSet ls = LabelSet::from_entity_types({"food", "area"});
  const IobMask m = iob_constraint_mask(ls);
  const auto O = ls.id("O"), bf = ls.id("B-food"), iff = ls.id("I-food"), ba = ls.id("B-area"), ia = ls.id("I-area");
  EXPECT_EQ(m.transitions.at(O, iff), kIobPenalty);
  EXPECT_EQ(m.transitions.at(bf, iff), 0.0);
  EXPECT_EQ(m.transitions.at(iff, iff), 0.0);
  EXPECT_EQ(m.transitions.at(ba, iff), kIobPenalty);
  EXPECT_EQ(m.transitions.at(ia, iff), kIobPenalty);
  EXPECT_EQ(m.transitions.at(iff, O), 0.0);
  EXPECT_EQ(m.transitions.at(O, bf), 0.0);
  EXPECT_EQ(m.start.at(iff), kIobPenalty);
  EXPECT_EQ(m.start.at(bf), 0.0);
}

TEST(Mask, ConstrainedDecodingNeverEmitsIllFormedSpans) {
  const LabelSet ls = LabelSet::from_entity_types({"a", "b", "c"});
  const IobMask m = iob_constraint_mask(ls);
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t T = 1 + rng.below(8);
    // Emissions that strongly prefer I- tags make violations likely without the mask.
    CrfInstance c = random_crf_instance(T, ls.size(), rng, 5.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 2; k < ls.size(); k += 2) c.emissions[t * ls.size() + k] += 4.0;
    const auto v = viterbi_decode(c.emission_tensor(), c.params(), &m);
    std::vector<std::string> tags;
    for (auto id : v.tags) tags.push_back(ls.name(id));
    EXPECT_TRUE(validate_iob(tags).empty()) << "trial " << trial;
  }
}

TEST(Mask, ShapeChecked) {
  const IobMask m = iob_constraint_mask(LabelSet::from_entity_types({"a"}));
  EXPECT_THROW(viterbi_decode(Tensor(Shape{2, 5}), CrfParams::zeros(5, false), &m), DimensionError);
}
