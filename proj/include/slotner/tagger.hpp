#pragma once

// One member of the {CHAR} x {CRF} x {CE} model family:
//
//   user tokens -> word rows (+ char-CNN rows) -> stacked BiLSTM -> affine
//   emissions -> softmax or CRF
//
// With CE enabled, the previous system utterance is run through a separate
// unidirectional LSTM whose final (h, c) seeds the tagger's first forward
// chain.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slotner/corpus.hpp"
#include "slotner/crf.hpp"
#include "slotner/embeddings.hpp"
#include "slotner/errors.hpp"
#include "slotner/labels.hpp"
#include "slotner/recurrent.hpp"
#include "slotner/rng.hpp"
#include "slotner/tensor.hpp"

namespace slotner {

struct VariantConfig {
  bool use_char = false;
  bool use_crf = false;
  bool use_context = false;
  EmbeddingRegime embedding_regime = EmbeddingRegime::SG300;
  std::size_t hidden_dim = 64;
  std::size_t layers = 2;
  CellKind cell = CellKind::lstm;
  // Width of SG300/custom tables. Pre-trained files carry their own width.
  std::size_t word_dim = 300;
  std::size_t char_dim = 30;
  std::size_t char_filters = 100;
  std::size_t min_count = 1;
  ContextInjection context_injection = ContextInjection::first_layer;
  // Give the context encoder its own trainable word table instead of sharing
  // the tagger's.
  bool separate_context_embeddings = false;
  bool constrained_decoding = false;
  std::size_t sgns_window = 5;
  std::size_t sgns_negatives = 5;
  std::size_t sgns_epochs = 5;

  // BI-LSTM[-CHAR][-CRF][-CE], with the recurrent cell kind in place of LSTM.
  std::string name() const {
    std::string cell_name = cell == CellKind::lstm ? "LSTM" : cell == CellKind::gru ? "GRU" : "RNN";
    std::string n = "BI-" + cell_name;
    if (use_char) n += "-CHAR";
    if (use_crf) n += "-CRF";
    if (use_context) n += "-CE";
    return n;
  }

  bool operator==(const VariantConfig&) const = default;
};

struct VariantFlags {
  bool use_char = false;
  bool use_crf = false;
  bool use_context = false;
};

// The eight table rows, in reporting order.
inline std::vector<VariantFlags> grid_variants() {
  return {{false, false, false}, {false, false, true}, {true, false, false}, {true, false, true},
          {false, true, false},  {false, true, true},  {true, true, false},  {true, true, true}};
}

inline VariantConfig with_flags(VariantConfig base, const VariantFlags& f) {
  base.use_char = f.use_char;
  base.use_crf = f.use_crf;
  base.use_context = f.use_context;
  return base;
}

// Parses names like "BI-LSTM-CHAR-CRF-CE" (cell part ignored).
inline VariantFlags parse_variant_name(std::string_view name) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : name) {
    if (c == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  if (parts.size() < 2 || parts[0] != "BI") throw ValidationError("unknown variant '" + std::string(name) + "'");
  VariantFlags f;
  std::size_t order = 0;
  for (std::size_t i = 2; i < parts.size(); ++i) {
    const std::size_t rank = parts[i] == "CHAR" ? 1 : parts[i] == "CRF" ? 2 : parts[i] == "CE" ? 3 : 0;
    if (rank == 0 || rank <= order) throw ValidationError("unknown variant '" + std::string(name) + "'");
    order = rank;
    (rank == 1 ? f.use_char : rank == 2 ? f.use_crf : f.use_context) = true;
  }
  return f;
}

struct TaggerModel {
  VariantConfig variant;
  LabelSet labels;
  Vocabulary words;
  EmbeddingTable word_table;
  std::optional<EmbeddingTable> context_table;  // only with separate_context_embeddings
  std::optional<CharEncoder> chars;
  std::optional<CellParams> context_encoder;
  StackedBiParams tagger;
  Tensor emission_weight;  // [2H x K]
  Tensor emission_bias;    // [K]
  std::optional<CrfParams> crf;

  std::size_t input_dim() const { return word_table.dim + (chars ? chars->params.output_dim() : 0); }

  // Every tensor of the model in checkpoint order, frozen ones included.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("word_embedding", word_table.vectors);
    if (context_table) out.emplace_back("context_word_embedding", context_table->vectors);
    if (chars) {
      for (auto& e : chars->named_parameters("char")) out.push_back(e);
    }
    if (context_encoder) {
      for (auto& e : context_encoder->named_parameters("context_encoder")) out.push_back(e);
    }
    for (auto& e : tagger.named_parameters("tagger")) out.push_back(e);
    out.emplace_back("emission.weight", emission_weight);
    out.emplace_back("emission.bias", emission_bias);
    if (crf) {
      for (auto& e : crf->named_parameters("crf")) out.push_back(e);
    }
    return out;
  }

  std::vector<Tensor> trainable_parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) {
      if (t.requires_grad()) out.push_back(t);
    }
    return out;
  }
};

// Name and shape of every tensor a model with these settings must hold.
inline std::vector<std::pair<std::string, Shape>> expected_inventory(const VariantConfig& v, std::size_t vocab_size,
                                                                     std::size_t word_dim, std::size_t char_count,
                                                                     std::size_t num_labels) {
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("word_embedding", Shape{vocab_size, word_dim});
  const std::size_t D = word_dim + (v.use_char ? v.char_filters : 0);
  const std::size_t H = v.hidden_dim;
  if (v.use_context && v.separate_context_embeddings) out.emplace_back("context_word_embedding", Shape{vocab_size, word_dim});
  if (v.use_char) {
    out.emplace_back("char.embedding", Shape{char_count, v.char_dim});
    out.emplace_back("char.filters", Shape{v.char_filters, 3 * v.char_dim});
    out.emplace_back("char.bias", Shape{v.char_filters});
  }
  auto cell = [&](const std::string& prefix, CellKind kind, std::size_t in) {
    for (const auto& b : cell_block_names(kind)) {
      out.emplace_back(prefix + ".w_" + b, Shape{in + H, H});
      out.emplace_back(prefix + ".b_" + b, Shape{H});
    }
  };
  if (v.use_context) cell("context_encoder", CellKind::lstm, D);
  for (std::size_t l = 0; l < v.layers; ++l) {
    const std::size_t in = l == 0 ? D : 2 * H;
    cell("tagger.l" + std::to_string(l) + ".fw", v.cell, in);
    cell("tagger.l" + std::to_string(l) + ".bw", v.cell, in);
  }
  out.emplace_back("emission.weight", Shape{2 * H, num_labels});
  out.emplace_back("emission.bias", Shape{num_labels});
  if (v.use_crf) {
    out.emplace_back("crf.transitions", Shape{num_labels, num_labels});
    out.emplace_back("crf.start", Shape{num_labels});
    out.emplace_back("crf.end", Shape{num_labels});
  }
  return out;
}

// Assembles a freshly initialised model around an existing vocabulary and
// word table. `char_vocab` is required iff the variant uses characters.
inline TaggerModel init_tagger(const VariantConfig& variant, LabelSet labels, Vocabulary words,
                               EmbeddingTable word_table, const Vocabulary* char_vocab, std::uint64_t seed) {
  if (word_table.vectors.rank() != 2 || word_table.vectors.dim(0) != words.size() ||
      word_table.vectors.dim(1) != word_table.dim) {
    throw DimensionError("word table " + shape_str(word_table.vectors.shape()) + " does not fit vocabulary of " +
                         std::to_string(words.size()));
  }
  if (variant.use_char && !char_vocab) throw ValidationError("character variant needs a character vocabulary");
  Rng rng(Rng::derive(seed, "tagger-init"));
  TaggerModel m;
  m.variant = variant;
  m.variant.word_dim = word_table.dim;
  m.labels = std::move(labels);
  m.words = std::move(words);
  word_table.vectors.set_requires_grad(!word_table.frozen);
  m.word_table = std::move(word_table);
  if (variant.use_char) {
    m.chars = CharEncoder{*char_vocab, CharCnnParams::create(char_vocab->size(), variant.char_dim,
                                                             variant.char_filters, rng)};
  }
  const std::size_t D = m.input_dim();
  if (variant.use_context) {
    if (variant.separate_context_embeddings) m.context_table = random_table(m.words, m.word_table.dim, rng);
    m.context_encoder = CellParams::create(CellKind::lstm, D, variant.hidden_dim, rng);
  }
  m.tagger = StackedBiParams::create({variant.layers, variant.hidden_dim, variant.cell}, D, rng);
  m.emission_weight = glorot_uniform(2 * variant.hidden_dim, m.labels.size(), rng);
  m.emission_bias = Tensor(Shape{m.labels.size()}, true);
  if (variant.use_crf) m.crf = CrfParams::zeros(m.labels.size());
  return m;
}

inline std::vector<std::string> normalized_tokens(const Corpus& corpus) {
  std::vector<std::string> out;
  for (const auto& t : corpus.turns) {
    for (const auto& w : t.system_tokens) out.push_back(lowercase(w));
    for (const auto& w : t.user_tokens) out.push_back(lowercase(w));
  }
  return out;
}

inline std::vector<std::vector<std::string>> normalized_sentences(const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  for (const auto& t : corpus.turns) {
    for (const auto* side : {&t.system_tokens, &t.user_tokens}) {
      if (side->empty()) continue;
      std::vector<std::string> s;
      for (const auto& w : *side) s.push_back(lowercase(w));
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline Vocabulary build_char_vocab(const Corpus& corpus) {
  std::vector<std::string> chars;
  for (const auto& t : corpus.turns) {
    for (const auto* side : {&t.system_tokens, &t.user_tokens}) {
      for (const auto& w : *side) {
        for (auto& c : utf8_chars(w)) chars.push_back(std::move(c));
      }
    }
  }
  return build_vocab(chars, 1);
}

// Builds vocabularies from `train` and the word table for the variant's
// regime: SGNS on `train` (SG300), a pre-trained file (G*), or a random
// trainable table (custom).
inline TaggerModel create_tagger(const VariantConfig& variant, const Corpus& train, std::uint64_t seed,
                                 const std::filesystem::path& vectors_path = {},
                                 std::optional<LabelSet> labels = std::nullopt) {
  if (train.empty()) throw ValidationError("cannot build a tagger from an empty corpus");
  Vocabulary words = build_vocab(normalized_tokens(train), variant.min_count);
  EmbeddingTable table;
  switch (variant.embedding_regime) {
    case EmbeddingRegime::SG300: {
      SgnsConfig sg{variant.word_dim, variant.sgns_window, variant.sgns_negatives, variant.sgns_epochs, 0.025,
                    Rng::derive(seed, "sgns")};
      table = train_sgns(normalized_sentences(train), words, sg).center;
      break;
    }
    case EmbeddingRegime::custom: {
      Rng rng(Rng::derive(seed, "custom-table"));
      table = random_table(words, variant.word_dim, rng);
      break;
    }
    default:
      if (vectors_path.empty() || !std::filesystem::exists(vectors_path)) {
        throw ValidationError("pre-trained vectors for regime " + to_string(variant.embedding_regime) +
                              " not found at '" + vectors_path.string() + "'");
      }
      table = load_pretrained(vectors_path, words, Rng::derive(seed, "pretrained"), variant.embedding_regime);
      break;
  }
  table.source = variant.embedding_regime;
  std::optional<Vocabulary> chars;
  if (variant.use_char) chars = build_char_vocab(train);
  return init_tagger(variant, labels ? *labels : train.label_set, std::move(words), std::move(table),
                     chars ? &*chars : nullptr, seed);
}

// ---------------------------------------------------------------------------
// Inference and loss

inline Tensor forward(const TaggerModel& model, const std::vector<std::string>& system_tokens,
                      const std::vector<std::string>& user_tokens) {
  if (user_tokens.empty()) throw ValidationError("empty user utterance");
  const CharEncoder* chars = model.chars ? &*model.chars : nullptr;
  const Tensor inputs = embed_sequence(user_tokens, model.words, model.word_table, chars);
  std::optional<RecurrentState> init;
  if (model.variant.use_context) {
    Tensor context;
    if (!system_tokens.empty()) {
      const EmbeddingTable& table = model.context_table ? *model.context_table : model.word_table;
      context = embed_sequence(system_tokens, model.words, table, chars);
    }
    RecurrentState state = encode_context(*model.context_encoder, context);
    if (model.variant.cell != CellKind::lstm) state.c = Tensor();
    init = std::move(state);
  }
  const Tensor states = run_bidirectional(model.tagger, inputs, init, model.variant.context_injection);
  return add(matmul(states, model.emission_weight), model.emission_bias);
}

inline Tensor forward(const TaggerModel& model, const DialogueTurn& turn) {
  return forward(model, turn.system_tokens, turn.user_tokens);
}

inline TagSequence gold_ids(const TaggerModel& model, const DialogueTurn& turn) {
  if (turn.tags.size() != turn.user_tokens.size()) {
    throw ValidationError(std::to_string(turn.tags.size()) + " tags for " + std::to_string(turn.user_tokens.size()) +
                          " user tokens");
  }
  TagSequence ids;
  for (const auto& tag : turn.tags) ids.push_back(model.labels.id(tag));
  return ids;
}

// CRF negative log-likelihood, or summed per-token softmax cross-entropy.
inline Tensor loss_from_emissions(const TaggerModel& model, const Tensor& emissions, const TagSequence& gold) {
  if (model.crf) return crf_nll(emissions, gold, *model.crf);
  return scale(pick_sum(log_softmax(emissions), gold), -1.0);
}

inline Tensor loss(const TaggerModel& model, const DialogueTurn& turn) {
  const TagSequence gold = gold_ids(model, turn);
  return loss_from_emissions(model, forward(model, turn), gold);
}

inline TagSequence decode_emissions(const TaggerModel& model, const Tensor& emissions) {
  if (model.crf) {
    if (model.variant.constrained_decoding) {
      const IobMask mask = iob_constraint_mask(model.labels);
      return viterbi_decode(emissions, *model.crf, &mask).tags;
    }
    return viterbi_decode(emissions, *model.crf).tags;
  }
  TagSequence out(emissions.dim(0));
  const std::size_t K = emissions.dim(1);
  for (std::size_t t = 0; t < out.size(); ++t) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < K; ++j) {
      if (emissions.at(t, j) > emissions.at(t, best)) best = j;
    }
    out[t] = best;
  }
  return out;
}

inline TagSequence predict(const TaggerModel& model, const std::vector<std::string>& system_tokens,
                           const std::vector<std::string>& user_tokens) {
  return decode_emissions(model, forward(model, system_tokens, user_tokens));
}

inline TagSequence predict(const TaggerModel& model, const DialogueTurn& turn) {
  return predict(model, turn.system_tokens, turn.user_tokens);
}

inline std::vector<std::string> tag_names(const TaggerModel& model, const TagSequence& ids) {
  std::vector<std::string> out;
  for (std::size_t id : ids) out.push_back(model.labels.name(id));
  return out;
}

}  // namespace slotner
