#pragma once

// Conversational IOB-tagged corpora in JSON Lines form. One object per line:
//
//   {"dialogue_id": "...", "turn_index": 3, "system_tokens": [...],
//    "user_tokens": [...], "tags": [...], "lang": "en"}

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slotner/errors.hpp"
#include "slotner/labels.hpp"
#include "slotner/rng.hpp"

namespace slotner {

struct DialogueTurn {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::vector<std::string> system_tokens;  // may be empty
  std::vector<std::string> user_tokens;    // never empty
  std::vector<std::string> tags;           // one per user token
  std::string lang = "en";

  bool operator==(const DialogueTurn&) const = default;
};

struct IobViolation {
  std::size_t position = 0;
  std::string label;
};

// Every position holding I-x that does not follow B-x or I-x.
inline std::vector<IobViolation> validate_iob(const std::vector<std::string>& tags) {
  std::vector<IobViolation> out;
  IobLabel prev;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const IobLabel cur = parse_iob(tags[i]);
    if (cur.inside() && (prev.outside() || prev.type != cur.type)) out.push_back({i, tags[i]});
    prev = cur;
  }
  return out;
}

struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  auto operator<=>(const Span&) const = default;
};

// Maximal B-x (I-x)* runs. An I-x that cannot continue the open span starts a
// new one, as if it were B-x.
inline std::vector<Span> extract_spans(const std::vector<std::string>& tags) {
  std::vector<Span> out;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const IobLabel cur = parse_iob(tags[i]);
    if (cur.outside()) {
      open = false;
    } else if (cur.inside() && open && out.back().type == cur.type) {
      out.back().end = i;
    } else {
      out.push_back({cur.type, i, i});
      open = true;
    }
  }
  return out;
}

inline std::vector<std::string> tags_from_spans(const std::vector<Span>& spans, std::size_t length) {
  std::vector<std::string> tags(length, "O");
  for (const Span& s : spans) {
    if (s.start > s.end || s.end >= length) throw ValidationError("span outside sequence");
    tags[s.start] = "B-" + s.type;
    for (std::size_t i = s.start + 1; i <= s.end; ++i) tags[i] = "I-" + s.type;
  }
  return tags;
}

struct Corpus {
  std::vector<DialogueTurn> turns;
  LabelSet label_set;
  // Non-fatal findings such as ill-formed IOB sequences.
  std::vector<std::string> warnings;

  std::size_t size() const { return turns.size(); }
  bool empty() const { return turns.empty(); }
};

inline LabelSet label_set_of(const std::vector<DialogueTurn>& turns) {
  std::vector<std::string> all;
  for (const auto& t : turns) all.insert(all.end(), t.tags.begin(), t.tags.end());
  return LabelSet::from_tags(all);
}

inline Corpus make_corpus(std::vector<DialogueTurn> turns) {
  Corpus c;
  c.label_set = label_set_of(turns);
  c.turns = std::move(turns);
  return c;
}

namespace detail {

inline std::vector<std::string> string_array(const nlohmann::json& j, const char* field) {
  if (!j.is_array()) throw ValidationError(std::string("field '") + field + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ValidationError(std::string("field '") + field + "' must contain only strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

inline DialogueTurn parse_turn(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("line is not a JSON object");
  static const std::set<std::string> fields = {"dialogue_id", "turn_index", "system_tokens",
                                               "user_tokens", "tags",       "lang"};
  for (const auto& [key, _] : j.items()) {
    if (!fields.count(key)) throw ValidationError("unknown field '" + key + "'");
  }
  for (const auto& f : fields) {
    if (!j.contains(f)) throw ValidationError("missing field '" + f + "'");
  }
  DialogueTurn t;
  if (!j["dialogue_id"].is_string()) throw ValidationError("field 'dialogue_id' must be a string");
  t.dialogue_id = j["dialogue_id"].get<std::string>();
  if (!j["turn_index"].is_number_integer() || j["turn_index"].get<std::int64_t>() < 0) {
    throw ValidationError("field 'turn_index' must be a non-negative integer");
  }
  t.turn_index = j["turn_index"].get<std::size_t>();
  t.system_tokens = string_array(j["system_tokens"], "system_tokens");
  t.user_tokens = string_array(j["user_tokens"], "user_tokens");
  t.tags = string_array(j["tags"], "tags");
  if (!j["lang"].is_string()) throw ValidationError("field 'lang' must be a string");
  t.lang = j["lang"].get<std::string>();

  if (t.user_tokens.empty()) throw ValidationError("empty user utterance");
  if (t.tags.size() != t.user_tokens.size()) {
    throw ValidationError(std::to_string(t.tags.size()) + " tags for " + std::to_string(t.user_tokens.size()) +
                          " user tokens");
  }
  for (const auto* side : {&t.system_tokens, &t.user_tokens}) {
    for (const auto& tok : *side) {
      if (tok.empty()) throw ValidationError("empty token string");
    }
  }
  for (const auto& tag : t.tags) parse_iob(tag);
  return t;
}

}  // namespace detail

// Parses a whole stream. Every bad line is reported; any error aborts.
inline Corpus parse_corpus(std::istream& in, const std::string& source = "<corpus>") {
  std::vector<DialogueTurn> turns;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      DialogueTurn t = detail::parse_turn(line);
      for (const auto& v : validate_iob(t.tags)) {
        warnings.push_back(source + ":" + std::to_string(line_no) + ": ill-formed IOB at position " +
                           std::to_string(v.position) + " (" + v.label + ")");
      }
      turns.push_back(std::move(t));
    } catch (const ValidationError& e) {
      errors.push_back(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string report = std::to_string(errors.size()) + " invalid line(s) in " + source;
    for (std::size_t i = 0; i < errors.size() && i < 20; ++i) report += "\n  " + errors[i];
    if (errors.size() > 20) report += "\n  ...";
    throw ValidationError(report);
  }
  if (turns.empty()) throw ValidationError(source + ": corpus contains no turns");
  Corpus c = make_corpus(std::move(turns));
  c.warnings = std::move(warnings);
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in, path.string());
}

inline nlohmann::ordered_json turn_to_json(const DialogueTurn& t) {
  nlohmann::ordered_json j;
  j["dialogue_id"] = t.dialogue_id;
  j["turn_index"] = t.turn_index;
  j["system_tokens"] = t.system_tokens;
  j["user_tokens"] = t.user_tokens;
  j["tags"] = t.tags;
  j["lang"] = t.lang;
  return j;
}

inline void write_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& t : corpus.turns) out << turn_to_json(t).dump() << '\n';
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus '" + path.string() + "'");
  write_corpus(corpus, out);
  if (!out) throw IoError("failed writing corpus '" + path.string() + "'");
}

// Seeded shuffle, then the first `train_count` turns become the training part.
inline std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, std::size_t train_count, std::uint64_t seed) {
  if (train_count >= corpus.size()) {
    throw ValidationError("train_count " + std::to_string(train_count) + " must be below corpus size " +
                          std::to_string(corpus.size()));
  }
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(Rng::derive(seed, "split"));
  rng.shuffle(order);
  std::vector<DialogueTurn> train, test;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < train_count ? train : test).push_back(corpus.turns[order[i]]);
  }
  return {make_corpus(std::move(train)), make_corpus(std::move(test))};
}

// ---------------------------------------------------------------------------
// Synthetic corpora

// City names usable as either origin or destination.
inline const std::vector<std::string>& ambiguous_city_lexicon() {
  static const std::vector<std::string> cities = {
      "paris",  "london", "berlin", "tokyo",   "madrid", "rome",    "vienna", "prague",
      "dublin", "lisbon", "oslo",   "seoul",   "lima",   "cairo",   "delhi",  "mumbai",
      "boston", "denver", "austin", "chicago", "sydney", "toronto", "athens", "zurich"};
  return cities;
}

inline const std::vector<std::string>& origin_prompt() {
  static const std::vector<std::string> p = {"which", "city", "do", "you", "fly", "from", "?"};
  return p;
}

inline const std::vector<std::string>& destination_prompt() {
  static const std::vector<std::string> p = {"what", "city", "are", "you", "flying", "to", "?"};
  return p;
}

// Bare city replies whose tag (or_city vs dst_city) is fixed entirely by which
// of two system prompts precedes them. Turns come in pairs sharing a city, one
// per prompt, so every city is tagged each way equally often when n is even.
inline Corpus generate_context_corpus(std::size_t n_turns, std::uint64_t seed) {
  if (n_turns < 2) throw ValidationError("generate_context_corpus needs at least 2 turns");
  Rng rng(Rng::derive(seed, "context-corpus"));
  const auto& lexicon = ambiguous_city_lexicon();
  std::vector<std::string> cycle;
  std::vector<DialogueTurn> turns;
  for (std::size_t i = 0; i < n_turns; ++i) {
    const std::size_t pair = i / 2;
    if (pair % lexicon.size() == 0 && i % 2 == 0) {
      cycle = lexicon;
      rng.shuffle(cycle);
    }
    const std::string& city = cycle[pair % lexicon.size()];
    const bool origin = i % 2 == 0;
    DialogueTurn t;
    t.dialogue_id = "ctx-" + std::to_string(seed) + "-" + std::to_string(pair);
    t.turn_index = origin ? 1 : 3;
    t.system_tokens = origin ? origin_prompt() : destination_prompt();
    t.user_tokens = {city};
    t.tags = {origin ? "B-or_city" : "B-dst_city"};
    turns.push_back(std::move(t));
  }
  rng.shuffle(turns);
  return make_corpus(std::move(turns));
}

// Context-free requests whose entities are identifiable from the user tokens
// alone. System side is empty (dialogue-initial turns).
inline Corpus generate_unambiguous_corpus(std::size_t n_turns, std::uint64_t seed) {
  Rng rng(Rng::derive(seed, "unambiguous-corpus"));
  const std::vector<std::vector<std::string>> foods = {
      {"italian"}, {"chinese"}, {"thai"}, {"indian"}, {"french"}, {"middle", "eastern"}, {"modern", "european"}};
  const std::vector<std::vector<std::string>> areas = {{"north"}, {"south"}, {"east"}, {"west"}, {"centre"}};
  const std::vector<std::vector<std::string>> prices = {{"cheap"}, {"expensive"}, {"moderately", "priced"}};
  const std::vector<std::vector<std::string>> dates = {
      {"tomorrow"}, {"today"}, {"next", "friday"}, {"next", "week"}, {"this", "weekend"}};

  auto pick = [&](const auto& options) -> const std::vector<std::string>& { return options[rng.below(options.size())]; };
  std::vector<DialogueTurn> turns;
  for (std::size_t i = 0; i < n_turns; ++i) {
    DialogueTurn t;
    t.dialogue_id = "plain-" + std::to_string(seed) + "-" + std::to_string(i);
    t.turn_index = 0;
    std::vector<Span> spans;
    auto put = [&](const std::vector<std::string>& words) { t.user_tokens.insert(t.user_tokens.end(), words.begin(), words.end()); };
    auto entity = [&](const std::string& type, const std::vector<std::string>& words) {
      spans.push_back({type, t.user_tokens.size(), t.user_tokens.size() + words.size() - 1});
      put(words);
    };
    switch (rng.below(4)) {
      case 0:
        put({"i", "want"});
        entity("food", pick(foods));
        put({"food"});
        break;
      case 1:
        put({"somewhere", "in", "the"});
        entity("area", pick(areas));
        break;
      case 2:
        put({"find", "a"});
        entity("price_range", pick(prices));
        entity("food", pick(foods));
        put({"restaurant"});
        break;
      default:
        put({"book", "a", "table", "for"});
        entity("date", pick(dates));
        break;
    }
    t.tags = tags_from_spans(spans, t.user_tokens.size());
    turns.push_back(std::move(t));
  }
  return make_corpus(std::move(turns));
}

// Concatenates and reshuffles two corpora.
inline Corpus blend_corpora(const Corpus& a, const Corpus& b, std::uint64_t seed) {
  std::vector<DialogueTurn> turns = a.turns;
  turns.insert(turns.end(), b.turns.begin(), b.turns.end());
  Rng rng(Rng::derive(seed, "blend"));
  rng.shuffle(turns);
  return make_corpus(std::move(turns));
}

// ---------------------------------------------------------------------------
// Inventory statistics

struct CorpusStats {
  std::size_t turns = 0;
  std::size_t user_tokens = 0;
  std::size_t empty_context_turns = 0;
  std::vector<std::string> labels;
  std::map<std::string, std::size_t> spans_per_type;
  std::map<std::string, std::size_t> unique_values_per_type;
  std::size_t unique_values = 0;          // distinct (type, surface string)
  std::size_t unique_prefixed_tokens = 0;  // distinct (IOB tag, token) pairs
  std::map<std::string, std::size_t> turns_per_language;
  std::size_t iob_warnings = 0;
};

inline CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.turns = corpus.size();
  s.labels = corpus.label_set.labels();
  s.iob_warnings = corpus.warnings.size();
  std::map<std::string, std::set<std::string>> values;
  std::set<std::pair<std::string, std::string>> prefixed;
  for (const auto& t : corpus.turns) {
    s.user_tokens += t.user_tokens.size();
    if (t.system_tokens.empty()) ++s.empty_context_turns;
    ++s.turns_per_language[t.lang];
    for (std::size_t i = 0; i < t.tags.size(); ++i) {
      if (t.tags[i] != "O") prefixed.emplace(t.tags[i], t.user_tokens[i]);
    }
    for (const Span& sp : extract_spans(t.tags)) {
      ++s.spans_per_type[sp.type];
      std::string surface;
      for (std::size_t i = sp.start; i <= sp.end; ++i) surface += (i > sp.start ? " " : "") + t.user_tokens[i];
      values[sp.type].insert(surface);
    }
  }
  for (const auto& type : corpus.label_set.entity_types()) {
    s.spans_per_type.try_emplace(type, 0);
    s.unique_values_per_type[type] = values[type].size();
    s.unique_values += values[type].size();
  }
  s.unique_prefixed_tokens = prefixed.size();
  return s;
}

inline nlohmann::ordered_json stats_to_json(const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["turns"] = s.turns;
  j["user_tokens"] = s.user_tokens;
  j["empty_context_turns"] = s.empty_context_turns;
  j["entity_types"] = s.unique_values_per_type.size();
  j["labels"] = s.labels;
  j["spans_per_type"] = s.spans_per_type;
  j["unique_values_per_type"] = s.unique_values_per_type;
  j["unique_values"] = s.unique_values;
  j["unique_prefixed_tokens"] = s.unique_prefixed_tokens;
  j["turns_per_language"] = s.turns_per_language;
  j["iob_warnings"] = s.iob_warnings;
  return j;
}

}  // namespace slotner
