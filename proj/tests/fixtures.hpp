#pragma once

// Small models and corpora shared by the tagger, checkpoint, training and
// acceptance tests.

#include <bit>
#include <string>
#include <vector>

#include "slotner/slotner.hpp"

namespace slotner::testing {

// The seven slot types of the flight/restaurant domain: 15 IOB labels.
inline LabelSet seven_entity_labels() {
  return LabelSet::from_entity_types({"or_city", "dst_city", "budget", "date", "area", "food", "price_range"});
}

inline DialogueTurn two_token_turn() {
  DialogueTurn t;
  t.dialogue_id = "fixture";
  t.turn_index = 1;
  t.system_tokens = {"what", "city", "are", "you", "flying", "to", "?"};
  t.user_tokens = {"to", "Paris"};
  t.tags = {"O", "B-dst_city"};
  return t;
}

struct SmallModelOptions {
  std::size_t hidden_dim = 8;
  std::size_t word_dim = 6;
  std::size_t char_dim = 30;
  std::size_t char_filters = 100;
  std::size_t layers = 2;
  CellKind cell = CellKind::lstm;
  std::uint64_t seed = 1;
};

// Trainable random word table over the fixture vocabulary.
inline TaggerModel small_model(const VariantFlags& flags, const SmallModelOptions& o = {}) {
  VariantConfig v = with_flags(VariantConfig{}, flags);
  v.embedding_regime = EmbeddingRegime::custom;
  v.hidden_dim = o.hidden_dim;
  v.word_dim = o.word_dim;
  v.char_dim = o.char_dim;
  v.char_filters = o.char_filters;
  v.layers = o.layers;
  v.cell = o.cell;
  const Vocabulary words = Vocabulary::from_tokens({"what", "city", "are", "you", "flying", "to", "?", "paris"});
  Rng rng(Rng::derive(o.seed, "fixture-table"));
  EmbeddingTable table = random_table(words, o.word_dim, rng);
  table.source = EmbeddingRegime::custom;
  const Vocabulary chars =
      Vocabulary::from_tokens({"a", "c", "e", "f", "g", "h", "i", "l", "n", "o", "P", "p", "r", "s", "t", "u", "w", "y", "?"});
  return init_tagger(v, seven_entity_labels(), words, table, flags.use_char ? &chars : nullptr, o.seed);
}

// Sets every tensor of `dst` that `src` also has (same name and shape) to
// `src`'s values.
inline void copy_shared_parameters(const TaggerModel& src, TaggerModel& dst) {
  const auto from = src.named_parameters();
  for (auto& [name, t] : dst.named_parameters()) {
    for (const auto& [other, s] : from) {
      if (other == name && s.shape() == t.shape()) {
        std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
      }
    }
  }
}

// Every turn follows one template: "i want to fly to <city>", the city tagged
// as a destination.
inline Corpus single_pattern_corpus(std::size_t n) {
  const std::vector<std::string> cities = {"paris", "london", "berlin", "rome", "madrid"};
  std::vector<DialogueTurn> turns;
  for (std::size_t i = 0; i < n; ++i) {
    DialogueTurn t;
    t.dialogue_id = "pattern-" + std::to_string(i);
    t.system_tokens = destination_prompt();
    t.user_tokens = {"i", "want", "to", "fly", "to", cities[i % cities.size()]};
    t.tags = {"O", "O", "O", "O", "O", "B-dst_city"};
    turns.push_back(std::move(t));
  }
  return make_corpus(std::move(turns));
}

// Custom-regime variant small enough for many short training runs.
inline VariantConfig tiny_variant(const VariantFlags& flags, std::size_t dim = 16) {
  VariantConfig v = with_flags(VariantConfig{}, flags);
  v.embedding_regime = EmbeddingRegime::custom;
  v.word_dim = dim;
  v.hidden_dim = dim;
  v.char_dim = 8;
  v.char_filters = 16;
  return v;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.at(i)) != std::bit_cast<std::uint64_t>(b.at(i))) return false;
  }
  return true;
}

inline void fill(Tensor t, double value) {
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
}

}  // namespace slotner::testing
