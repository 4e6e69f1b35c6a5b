#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "slotner/corpus.hpp"

using namespace slotner;
namespace fs = std::filesystem;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return parse_corpus(in, "mem");
}

std::string line(const std::string& user, const std::string& tags, const std::string& system = "[]",
                 const std::string& extra = "") {
  return R"({"dialogue_id":"d","turn_index":0,"system_tokens":)" + system + R"(,"user_tokens":)" + user +
         R"(,"tags":)" + tags + R"(,"lang":"en")" + extra + "}\n";
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

Corpus numbered_corpus(std::size_t n) {
  std::vector<DialogueTurn> turns;
  for (std::size_t i = 0; i < n; ++i) {
    DialogueTurn t;
    t.dialogue_id = "d" + std::to_string(i);
    t.user_tokens = {"x"};
    t.tags = {"O"};
    turns.push_back(t);
  }
  return make_corpus(std::move(turns));
}

// Mutual information in bits from a joint count table.
template <typename A, typename B>
double mutual_information(const std::map<std::pair<A, B>, double>& joint) {
  double n = 0;
  std::map<A, double> pa;
  std::map<B, double> pb;
  for (const auto& [k, c] : joint) {
    n += c;
    pa[k.first] += c;
    pb[k.second] += c;
  }
  double mi = 0;
  for (const auto& [k, c] : joint) {
    if (c > 0) mi += (c / n) * std::log2((c / n) / ((pa[k.first] / n) * (pb[k.second] / n)));
  }
  return mi;
}

}  // namespace

TEST(LoadCorpus, MotivatingTurn) {
  const Corpus c = parse(line(R"(["paris"])", R"(["B-dst_city"])", R"(["what","city","are","you","flying","to","?"])"));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_TRUE(c.label_set.contains("O"));
  EXPECT_TRUE(c.label_set.contains("B-dst_city"));
  EXPECT_TRUE(c.label_set.contains("I-dst_city"));
  EXPECT_EQ(c.turns[0].system_tokens.size(), 7u);
}

TEST(LoadCorpus, SevenEntitiesGiveFifteenLabels) {
  std::string text;
  for (const char* type : {"or_city", "dst_city", "budget", "date", "area", "food", "price_range"}) {
    text += line(R"(["v"])", std::string(R"([")") + "B-" + type + R"("])");
  }
  const Corpus c = parse(text);
  EXPECT_EQ(c.label_set.size(), 15u);
  EXPECT_EQ(c.label_set.name(0), "O");
}

TEST(LoadCorpus, LengthMismatchNamesTheLine) {
  const std::string msg = error_of(line(R"(["a"])", R"(["O"])") + line(R"(["a"])", R"(["O","O"])"));
  EXPECT_NE(msg.find("mem:2:"), std::string::npos) << msg;
  EXPECT_EQ(msg.find("mem:1:"), std::string::npos) << msg;
}

TEST(LoadCorpus, AllBadLinesReported) {
  const std::string msg = error_of(line("[]", "[]") + "{not json\n" + line(R"(["a"])", R"(["Q-x"])") +
                                   line(R"(["a"])", R"(["O"])", "[]", R"(,"extra":1)"));
  for (const char* where : {"mem:1:", "mem:2:", "mem:3:", "mem:4:"}) {
    EXPECT_NE(msg.find(where), std::string::npos) << where << " in " << msg;
  }
  EXPECT_NE(msg.find("empty user utterance"), std::string::npos);
  EXPECT_NE(msg.find("unknown field 'extra'"), std::string::npos);
}

TEST(LoadCorpus, FieldChecks) {
  EXPECT_NE(error_of(R"({"dialogue_id":"d","turn_index":0,"system_tokens":[],"user_tokens":["a"],"tags":["O"]})"
                     "\n")
                .find("missing field 'lang'"),
            std::string::npos);
  EXPECT_FALSE(error_of(line(R"(["a", ""])", R"(["O","O"])")).empty());
  EXPECT_FALSE(error_of(line(R"(["a"])", R"(["O"])", "[1]")).empty());
  EXPECT_FALSE(error_of("[1,2]\n").empty());
  EXPECT_NE(error_of("\n  \n").find("no turns"), std::string::npos);
}

TEST(LoadCorpus, IllFormedIobIsAWarning) {
  const Corpus c = parse(line(R"(["a","b"])", R"(["O","I-food"])"));
  ASSERT_EQ(c.warnings.size(), 1u);
  EXPECT_NE(c.warnings[0].find("mem:1:"), std::string::npos);
}

TEST(LoadCorpus, MissingFileIsIoError) {
  EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), IoError);
}

TEST(LoadCorpus, SaveLoadRoundTrip) {
  Corpus c = blend_corpora(generate_context_corpus(10, 1), generate_unambiguous_corpus(10, 2), 3);
  c.turns[0].lang = "hi-Latn";
  c.turns[1].system_tokens = {"kya", "\"quoted\"", "ü"};
  const fs::path p = fs::temp_directory_path() / ("slotner_corpus_rt_" + std::to_string(::getpid()) + ".jsonl");
  save_corpus(c, p);
  const Corpus back = load_corpus(p);
  EXPECT_EQ(back.turns, c.turns);
  EXPECT_EQ(back.label_set, c.label_set);
  fs::remove(p);
}

TEST(ValidateIob, Examples) {
  EXPECT_TRUE(validate_iob({"O", "B-food", "I-food"}).empty());
  auto v = validate_iob({"I-food"});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].position, 0u);
  v = validate_iob({"B-food", "I-area"});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].position, 1u);
  EXPECT_EQ(validate_iob({"O", "I-a", "I-a", "O", "I-b"}).size(), 2u);
  EXPECT_THROW(validate_iob({"X"}), ValidationError);
}

TEST(Spans, Examples) {
  EXPECT_EQ(extract_spans({"O", "B-dst_city", "I-dst_city", "O"}), (std::vector<Span>{{"dst_city", 1, 2}}));
  EXPECT_TRUE(extract_spans({"O", "O"}).empty());
  EXPECT_EQ(extract_spans({"B-food", "B-food"}), (std::vector<Span>{{"food", 0, 0}, {"food", 1, 1}}));
}

TEST(Spans, RepairStartsNewSpanAtStrayInside) {
  EXPECT_EQ(extract_spans({"I-food", "I-food", "I-area", "O", "I-area"}),
            (std::vector<Span>{{"food", 0, 1}, {"area", 2, 2}, {"area", 4, 4}}));
}

TEST(Spans, TagsFromSpansInverse) {
  Rng rng(1);
  const std::vector<std::string> types = {"a", "bb", "c"};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    std::vector<Span> spans;
    for (std::size_t i = 0; i < n;) {
      if (rng.below(3) == 0) {
        ++i;
        continue;
      }
      const std::size_t len = 1 + rng.below(std::min<std::size_t>(3, n - i));
      spans.push_back({types[rng.below(3)], i, i + len - 1});
      i += len;
    }
    const auto tags = tags_from_spans(spans, n);
    EXPECT_TRUE(validate_iob(tags).empty());
    EXPECT_EQ(extract_spans(tags), spans);
  }
  EXPECT_THROW(tags_from_spans({{"a", 2, 3}}, 3), ValidationError);
}

TEST(Split, PublishedSizes) {
  for (auto [total, train] : {std::pair<std::size_t, std::size_t>{13599, 12000}, {37785, 34000}}) {
    const Corpus c = numbered_corpus(total);
    const auto [tr, te] = split_corpus(c, train, 42);
    EXPECT_EQ(tr.size(), train);
    EXPECT_EQ(te.size(), total - train);
  }
}

TEST(Split, PartitionAndDeterminism) {
  const Corpus c = numbered_corpus(200);
  const auto [tr, te] = split_corpus(c, 150, 7);
  const auto [tr2, te2] = split_corpus(c, 150, 7);
  EXPECT_EQ(tr.turns, tr2.turns);
  EXPECT_EQ(te.turns, te2.turns);
  std::multiset<std::string> ids;
  for (const auto* part : {&tr, &te})
    for (const auto& t : part->turns) ids.insert(t.dialogue_id);
  EXPECT_EQ(ids.size(), 200u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 200u);
  const auto [other, _] = split_corpus(c, 150, 8);
  EXPECT_NE(other.turns, tr.turns);
  EXPECT_THROW(split_corpus(c, 200, 1), ValidationError);
  EXPECT_THROW(split_corpus(c, 500, 1), ValidationError);
}

TEST(ContextCorpus, PromptsDetermineTags) {
  const Corpus c = generate_context_corpus(500, 3);
  ASSERT_EQ(c.size(), 500u);
  for (const auto& t : c.turns) {
    ASSERT_EQ(t.user_tokens.size(), 1u);
    if (t.system_tokens == origin_prompt()) {
      EXPECT_EQ(t.tags[0], "B-or_city");
    } else {
      EXPECT_EQ(t.system_tokens, destination_prompt());
      EXPECT_EQ(t.tags[0], "B-dst_city");
    }
  }
  EXPECT_EQ(destination_prompt(), (std::vector<std::string>{"what", "city", "are", "you", "flying", "to", "?"}));
}

TEST(ContextCorpus, TagCarriesNoInformationAboutTheCity) {
  const Corpus c = generate_context_corpus(2000, 4);
  std::map<std::pair<std::string, std::string>, double> tag_token, tag_prompt;
  std::map<std::string, std::map<std::string, int>> per_city;
  for (const auto& t : c.turns) {
    tag_token[{t.tags[0], t.user_tokens[0]}] += 1;
    tag_prompt[{t.tags[0], t.system_tokens[0]}] += 1;
    per_city[t.user_tokens[0]][t.tags[0]] += 1;
  }
  EXPECT_NEAR(mutual_information(tag_token), 0.0, 1e-12);
  // One bit: the tag is a function of the prompt and the prompts are balanced.
  EXPECT_NEAR(mutual_information(tag_prompt), 1.0, 1e-12);
  for (const auto& [city, counts] : per_city) EXPECT_EQ(counts.at("B-or_city"), counts.at("B-dst_city")) << city;
}

TEST(ContextCorpus, SeedReproducible) {
  EXPECT_EQ(generate_context_corpus(50, 9).turns, generate_context_corpus(50, 9).turns);
  EXPECT_NE(generate_context_corpus(50, 9).turns, generate_context_corpus(50, 10).turns);
  EXPECT_THROW(generate_context_corpus(1, 1), ValidationError);
}

TEST(UnambiguousCorpus, WellFormedWithEmptyContext) {
  const Corpus c = generate_unambiguous_corpus(300, 5);
  EXPECT_EQ(c.size(), 300u);
  bool multi_token = false;
  for (const auto& t : c.turns) {
    EXPECT_TRUE(t.system_tokens.empty());
    EXPECT_TRUE(validate_iob(t.tags).empty());
    for (const auto& s : extract_spans(t.tags)) multi_token = multi_token || s.end > s.start;
  }
  EXPECT_TRUE(multi_token);
  EXPECT_EQ(c.label_set.entity_types(), (std::vector<std::string>{"area", "date", "food", "price_range"}));
}

TEST(Stats, CountsValuesAndPrefixedTokens) {
  const Corpus c = parse(line(R"(["new","york"])", R"(["B-dst_city","I-dst_city"])") +
                         line(R"(["new","york"])", R"(["B-or_city","I-or_city"])") +
                         line(R"(["york"])", R"(["B-dst_city"])", R"(["to","?"])"));
  const CorpusStats s = corpus_stats(c);
  EXPECT_EQ(s.turns, 3u);
  EXPECT_EQ(s.user_tokens, 5u);
  EXPECT_EQ(s.empty_context_turns, 2u);
  EXPECT_EQ(s.spans_per_type.at("dst_city"), 2u);
  EXPECT_EQ(s.unique_values, 3u);  // dst "new york", or "new york", dst "york"
  EXPECT_EQ(s.unique_prefixed_tokens, 5u);
  EXPECT_EQ(s.turns_per_language.at("en"), 3u);
  const auto j = stats_to_json(s);
  EXPECT_EQ(j["turns"], 3);
}
