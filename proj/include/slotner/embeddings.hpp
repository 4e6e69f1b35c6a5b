#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slotner/errors.hpp"
#include "slotner/recurrent.hpp"
#include "slotner/rng.hpp"
#include "slotner/tensor.hpp"

namespace slotner {

// ---------------------------------------------------------------------------
// Text helpers

// ASCII lowercasing; other bytes pass through unchanged.
inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Splits into UTF-8 code points. A byte that does not start a valid sequence
// becomes a one-byte character.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (b >= 0xF0 && b < 0xF8) len = 4;
    else if (b >= 0xE0) len = b < 0xF0 ? 3 : 1;
    else if (b >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

// Token <-> id map with PAD = 0 and UNK = 1 reserved. The specials have no
// surface form: no text maps to them except through the UNK fallback.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {}

  // `tokens` become ids 2, 3, ... in the given order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (!v.index_.emplace(t, v.tokens_.size()).second) {
        throw ValidationError("duplicate vocabulary token '" + t + "'");
      }
      v.tokens_.push_back(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  std::size_t lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  // Real tokens only (ids >= 2).
  std::vector<std::string> real_tokens() const { return {tokens_.begin() + 2, tokens_.end()}; }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a64("vocab");
    for (std::size_t i = 2; i < tokens_.size(); ++i) {
      h = fnv1a64(tokens_[i], h);
      h = fnv1a64(std::string_view("\0", 1), h);
    }
    return h;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Tokens ordered by descending frequency, ties broken lexicographically;
// tokens seen fewer than `min_count` times are left out.
inline Vocabulary build_vocab(const std::vector<std::string>& tokens, std::size_t min_count = 1) {
  if (tokens.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [t, c] : counts) {
    if (c >= min_count) kept.emplace_back(t, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ordered;
  for (auto& [t, _] : kept) ordered.push_back(t);
  return Vocabulary::from_tokens(ordered);
}

// ---------------------------------------------------------------------------
// Word tables

enum class EmbeddingRegime { SG300, G50W, G300W, G300C, custom };

inline std::string to_string(EmbeddingRegime r) {
  switch (r) {
    case EmbeddingRegime::SG300: return "SG300";
    case EmbeddingRegime::G50W: return "G50W";
    case EmbeddingRegime::G300W: return "G300W";
    case EmbeddingRegime::G300C: return "G300C";
    case EmbeddingRegime::custom: return "custom";
  }
  return "?";
}

inline EmbeddingRegime parse_regime(std::string_view name) {
  if (name == "SG300" || name == "SGNS300") return EmbeddingRegime::SG300;
  if (name == "G50W") return EmbeddingRegime::G50W;
  if (name == "G300W") return EmbeddingRegime::G300W;
  if (name == "G300C") return EmbeddingRegime::G300C;
  if (name == "custom") return EmbeddingRegime::custom;
  throw ValidationError("unknown embedding regime '" + std::string(name) +
                        "' (expected SG300, G50W, G300W, G300C or custom)");
}

inline bool is_pretrained_file_regime(EmbeddingRegime r) {
  return r == EmbeddingRegime::G50W || r == EmbeddingRegime::G300W || r == EmbeddingRegime::G300C;
}

struct EmbeddingTable {
  Tensor vectors;  // [V x d]
  std::size_t dim = 0;
  bool frozen = true;
  EmbeddingRegime source = EmbeddingRegime::custom;
};

// Trainable table drawn from Uniform(-sqrt(3/d), sqrt(3/d)); PAD and UNK rows
// are zero.
inline EmbeddingTable random_table(const Vocabulary& vocab, std::size_t dim, Rng& rng) {
  if (dim == 0) throw ValidationError("embedding dimension must be positive");
  const double limit = std::sqrt(3.0 / static_cast<double>(dim));
  std::vector<double> values(vocab.size() * dim, 0.0);
  for (std::size_t r = 2; r < vocab.size(); ++r)
    for (std::size_t j = 0; j < dim; ++j) values[r * dim + j] = rng.uniform(-limit, limit);
  return {Tensor(Shape{vocab.size(), dim}, std::move(values), true), dim, false, EmbeddingRegime::custom};
}

namespace detail {

inline std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t j = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > j) out.push_back(line.substr(j, i - j));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace detail

// Reads a `token v1 ... vd` text file (optional `V d` header line) and copies
// the rows of vocabulary tokens it contains. Rows missing from the file are
// drawn from Uniform(-0.5/d, 0.5/d); PAD and UNK rows are zero. The returned
// table is frozen.
inline EmbeddingTable load_pretrained(const std::filesystem::path& path, const Vocabulary& vocab,
                                      std::uint64_t seed, EmbeddingRegime source = EmbeddingRegime::custom) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vector file '" + path.string() + "'");
  std::size_t dim = 0;
  std::optional<std::size_t> declared_dim;
  std::unordered_map<std::size_t, std::vector<double>> found;
  std::string line;
  std::size_t line_no = 0;
  const std::string where = path.string() + ":";
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = detail::split_spaces(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) {
      std::size_t a = 0, b = 0;
      if (detail::parse_number(fields[0], a) && detail::parse_number(fields[1], b)) {
        declared_dim = b;
        continue;
      }
    }
    const std::size_t d = fields.size() - 1;
    if (d == 0) throw ValidationError(where + std::to_string(line_no) + ": token without values");
    if (dim == 0) {
      dim = declared_dim.value_or(d);
    }
    if (d != dim) {
      throw ValidationError(where + std::to_string(line_no) + ": " + std::to_string(d) + " values, expected " +
                            std::to_string(dim));
    }
    const std::string token(fields[0]);
    const std::size_t id = vocab.lookup(token);
    if (id == Vocabulary::kUnk || !vocab.contains(token) || found.count(id)) continue;
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) {
      if (!detail::parse_number(fields[j + 1], row[j]) || !std::isfinite(row[j])) {
        throw ValidationError(where + std::to_string(line_no) + ": bad number '" + std::string(fields[j + 1]) + "'");
      }
    }
    found.emplace(id, std::move(row));
  }
  if (dim == 0) {
    if (!declared_dim) throw ValidationError(where + " no vectors found");
    dim = *declared_dim;
  }
  Rng rng(Rng::derive(seed, "pretrained-missing-rows"));
  const double limit = 0.5 / static_cast<double>(dim);
  std::vector<double> values(vocab.size() * dim, 0.0);
  for (std::size_t r = 2; r < vocab.size(); ++r) {
    auto it = found.find(r);
    for (std::size_t j = 0; j < dim; ++j) {
      values[r * dim + j] = it != found.end() ? it->second[j] : rng.uniform(-limit, limit);
    }
  }
  return {Tensor(Shape{vocab.size(), dim}, std::move(values)), dim, true, source};
}

// Writes real-token rows in the format load_pretrained reads, with a header.
inline void write_vectors(const std::filesystem::path& path, const Vocabulary& vocab, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vector file '" + path.string() + "'");
  out << (vocab.size() - 2) << ' ' << table.dim << '\n';
  char buf[32];
  for (std::size_t r = 2; r < vocab.size(); ++r) {
    out << vocab.token(r);
    for (std::size_t j = 0; j < table.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", table.vectors.at(r, j));
      out << ' ' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing vector file '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

struct SgnsConfig {
  std::size_t dim = 300;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;  // decays linearly towards 1e-4 of itself
  std::uint64_t seed = 1;
};

struct SgnsModel {
  EmbeddingTable center;  // the exported table, frozen
  Tensor context;         // output vectors, [V x d]
};

// Trains center/context vectors over `sentences` (already normalised to the
// vocabulary's token forms). Out-of-vocabulary tokens are dropped before
// windowing.
inline SgnsModel train_sgns(const std::vector<std::vector<std::string>>& sentences, const Vocabulary& vocab,
                            const SgnsConfig& config) {
  if (config.dim == 0 || config.window == 0 || config.epochs == 0) {
    throw ValidationError("SGNS dim, window and epochs must be positive");
  }
  const std::size_t V = vocab.size(), d = config.dim;
  std::vector<std::vector<std::size_t>> ids;
  std::vector<double> counts(V, 0.0);
  std::size_t total = 0, pairs = 0;
  for (const auto& s : sentences) {
    std::vector<std::size_t> row;
    for (const auto& tok : s) {
      if (vocab.contains(tok)) row.push_back(vocab.lookup(tok));
    }
    for (std::size_t id : row) counts[id] += 1.0;
    total += row.size();
    if (row.size() > 1) pairs += row.size() - 1;
    ids.push_back(std::move(row));
  }
  std::size_t distinct = 0;
  for (double c : counts) distinct += c > 0.0 ? 1 : 0;
  if (pairs == 0 || distinct < 2) {
    throw ValidationError("SGNS corpus too small: needs at least one in-vocabulary (center, context) pair over "
                          "two distinct tokens");
  }

  // Unigram^0.75 sampling table.
  constexpr std::size_t kTableSize = 1 << 20;
  std::vector<std::uint32_t> table(kTableSize);
  {
    double norm = 0.0;
    for (double c : counts) norm += std::pow(c, 0.75);
    std::size_t w = 0;
    while (counts[w] == 0.0) ++w;
    double cumulative = std::pow(counts[w], 0.75) / norm;
    for (std::size_t i = 0; i < kTableSize; ++i) {
      table[i] = static_cast<std::uint32_t>(w);
      if (static_cast<double>(i + 1) / kTableSize > cumulative && w + 1 < V) {
        do {
          ++w;
        } while (w + 1 < V && counts[w] == 0.0);
        cumulative += std::pow(counts[w], 0.75) / norm;
      }
    }
  }

  Rng rng(Rng::derive(config.seed, "sgns"));
  std::vector<double> in(V * d, 0.0), out(V * d, 0.0);
  for (std::size_t r = 2; r < V; ++r)
    for (std::size_t j = 0; j < d; ++j) in[r * d + j] = rng.uniform(-0.5 / d, 0.5 / d);

  std::vector<double> hidden_err(d);
  const double planned = static_cast<double>(config.epochs * total);
  double processed = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& s : ids) {
      for (std::size_t pos = 0; pos < s.size(); ++pos, processed += 1.0) {
        const double lr = config.learning_rate * std::max(1e-4, 1.0 - processed / planned);
        const std::size_t center = s[pos];
        double* cv = in.data() + center * d;
        const std::size_t lo = pos >= config.window ? pos - config.window : 0;
        const std::size_t hi = std::min(s.size() - 1, pos + config.window);
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          const std::size_t target_pos = s[c];
          std::fill(hidden_err.begin(), hidden_err.end(), 0.0);
          for (std::size_t k = 0; k <= config.negatives; ++k) {
            std::size_t target = target_pos;
            double label = 1.0;
            if (k > 0) {
              target = table[rng.below(kTableSize)];
              if (target == target_pos) continue;
              label = 0.0;
            }
            double* ov = out.data() + target * d;
            double f = 0.0;
            for (std::size_t j = 0; j < d; ++j) f += cv[j] * ov[j];
            const double g = (label - detail::stable_sigmoid(f)) * lr;
            for (std::size_t j = 0; j < d; ++j) {
              hidden_err[j] += g * ov[j];
              ov[j] += g * cv[j];
            }
          }
          for (std::size_t j = 0; j < d; ++j) cv[j] += hidden_err[j];
        }
      }
    }
  }
  return {{Tensor(Shape{V, d}, std::move(in)), d, true, EmbeddingRegime::SG300}, Tensor(Shape{V, d}, std::move(out))};
}

// ---------------------------------------------------------------------------
// Character CNN

struct CharCnnParams {
  Tensor char_embedding;  // [C x dc]
  Tensor filters;         // [F x 3*dc]
  Tensor bias;            // [F]

  static CharCnnParams create(std::size_t num_chars, std::size_t char_dim, std::size_t num_filters, Rng& rng) {
    if (char_dim == 0 || num_filters == 0) throw ValidationError("char_dim and char_filters must be positive");
    CharCnnParams p;
    const double limit = std::sqrt(3.0 / static_cast<double>(char_dim));
    std::vector<double> emb(num_chars * char_dim, 0.0);
    for (std::size_t r = 1; r < num_chars; ++r)  // PAD row stays zero
      for (std::size_t j = 0; j < char_dim; ++j) emb[r * char_dim + j] = rng.uniform(-limit, limit);
    p.char_embedding = Tensor(Shape{num_chars, char_dim}, std::move(emb), true);
    p.filters = glorot_uniform(num_filters, 3 * char_dim, rng);
    p.bias = Tensor(Shape{num_filters}, true);
    return p;
  }

  std::size_t output_dim() const { return bias.numel(); }
};

struct CharEncoder {
  Vocabulary chars;
  CharCnnParams params;

  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const {
    return {{prefix + ".embedding", params.char_embedding},
            {prefix + ".filters", params.filters},
            {prefix + ".bias", params.bias}};
  }
};

// chars -> embedding rows -> width-3 convolution -> max over positions -> tanh.
inline Tensor encode_word_chars(std::string_view word, const Vocabulary& chars, const CharCnnParams& params) {
  if (word.empty()) throw ValidationError("cannot encode the characters of an empty word");
  std::vector<std::size_t> ids;
  for (const auto& ch : utf8_chars(word)) ids.push_back(chars.lookup(ch));
  return tanh(conv1d_maxpool(gather_rows(params.char_embedding, ids), params.filters, params.bias));
}

inline std::vector<std::size_t> word_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.lookup(lowercase(t)));
  return ids;
}

// [T x d_word] rows, or [T x (d_word + F)] when a character encoder is given.
// Word lookup is lowercased; the character channel sees the original casing.
inline Tensor embed_sequence(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                             const EmbeddingTable& table, const CharEncoder* chars = nullptr) {
  if (tokens.empty()) throw DimensionError("embed_sequence needs at least one token");
  const auto ids = word_ids(tokens, vocab);
  Tensor words = gather_rows(table.vectors, ids);
  if (!chars) return words;
  std::vector<Tensor> char_rows;
  char_rows.reserve(tokens.size());
  for (const auto& t : tokens) char_rows.push_back(encode_word_chars(t, chars->chars, chars->params));
  return concat({words, stack_rows(char_rows)});
}

}  // namespace slotner
