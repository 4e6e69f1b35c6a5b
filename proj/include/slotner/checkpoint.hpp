#pragma once

// Checkpoint container:
//
//   SLOTNER-CHECKPOINT\n
//   header-bytes <N>\n
//   <N bytes of JSON: format_version, variant, labels, vocabularies with
//    fingerprints, word-table metadata, tensor directory>
//   <payload: little-endian IEEE-754 doubles, tensors in directory order>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slotner/config.hpp"
#include "slotner/errors.hpp"
#include "slotner/tagger.hpp"

namespace slotner {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "SLOTNER-CHECKPOINT\n";

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void put_le_double(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_le_double(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline nlohmann::ordered_json vocab_json(const Vocabulary& v) {
  nlohmann::ordered_json j;
  j["size"] = v.size();
  j["fingerprint"] = hex64(v.fingerprint());
  j["tokens"] = v.real_tokens();
  return j;
}

inline Vocabulary vocab_from_json(const nlohmann::json& j, const char* what) {
  Vocabulary v = Vocabulary::from_tokens(j.at("tokens").get<std::vector<std::string>>());
  if (j.at("size").get<std::size_t>() != v.size() || j.at("fingerprint").get<std::string>() != hex64(v.fingerprint())) {
    throw CorruptCheckpointError(std::string(what) + " vocabulary does not match its recorded size/fingerprint");
  }
  return v;
}

inline VariantConfig variant_from_json(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& [key, value] : j.items()) apply_config_field(c, key, value);
  return c.variant;
}

}  // namespace detail

inline std::string serialize_checkpoint(const TaggerModel& model) {
  nlohmann::ordered_json header;
  header["format"] = "slotner-checkpoint";
  header["format_version"] = kCheckpointVersion;
  header["variant"] = variant_to_json(model.variant);
  header["labels"] = model.labels.labels();
  header["vocab"] = detail::vocab_json(model.words);
  if (model.chars) header["chars"] = detail::vocab_json(model.chars->chars);
  header["word_table"] = {{"dim", model.word_table.dim},
                          {"frozen", model.word_table.frozen},
                          {"source", to_string(model.word_table.source)}};
  std::string payload;
  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  for (const auto& [name, t] : model.named_parameters()) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}, {"count", t.numel()}});
    for (double v : t.data()) detail::put_le_double(payload, v);
  }
  header["tensors"] = dir;
  header["payload_bytes"] = payload.size();
  const std::string text = header.dump(2) + "\n";
  std::string out(kCheckpointMagic);
  out += "header-bytes " + std::to_string(text.size()) + "\n";
  out += text;
  out += payload;
  return out;
}

inline TaggerModel deserialize_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
    throw CorruptCheckpointError("not a slotner checkpoint (bad magic)");
  }
  std::size_t pos = kCheckpointMagic.size();
  const std::size_t eol = bytes.find('\n', pos);
  const std::string prefix = "header-bytes ";
  if (eol == std::string::npos || bytes.compare(pos, prefix.size(), prefix) != 0) {
    throw CorruptCheckpointError("checkpoint header length line missing");
  }
  std::size_t header_len = 0;
  if (!detail::parse_number(std::string_view(bytes).substr(pos + prefix.size(), eol - pos - prefix.size()),
                            header_len)) {
    throw CorruptCheckpointError("checkpoint header length unreadable");
  }
  pos = eol + 1;
  if (bytes.size() - pos < header_len) throw CorruptCheckpointError("checkpoint truncated inside header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptCheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;
  const std::string_view payload = std::string_view(bytes).substr(pos);

  try {
    if (!header.contains("format_version") || !header["format_version"].is_number_integer()) {
      throw CorruptCheckpointError("checkpoint header lacks format_version");
    }
    const int version = header["format_version"].get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("unsupported checkpoint format version " + std::to_string(version) +
                                   " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
    }
    if (header.at("payload_bytes").get<std::size_t>() != payload.size()) {
      throw CorruptCheckpointError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, header says " +
                                   std::to_string(header.at("payload_bytes").get<std::size_t>()));
    }

    const VariantConfig variant = detail::variant_from_json(header.at("variant"));
    const LabelSet labels = LabelSet::from_labels(header.at("labels").get<std::vector<std::string>>());
    Vocabulary words = detail::vocab_from_json(header.at("vocab"), "word");
    std::optional<Vocabulary> chars;
    if (variant.use_char) {
      if (!header.contains("chars")) throw CheckpointInventoryError("character variant without character vocabulary");
      chars = detail::vocab_from_json(header["chars"], "character");
    }
    const auto& wt = header.at("word_table");
    const std::size_t word_dim = wt.at("dim").get<std::size_t>();

    std::map<std::string, std::pair<Shape, std::size_t>> directory;
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_numel(shape) || offset % 8 != 0 || offset > payload.size() ||
          (payload.size() - offset) / 8 < count) {
        throw CorruptCheckpointError("tensor '" + name + "' lies outside the payload");
      }
      if (!directory.emplace(name, std::make_pair(shape, offset)).second) {
        throw CheckpointInventoryError("tensor '" + name + "' listed twice");
      }
    }
    const auto expected =
        expected_inventory(variant, words.size(), word_dim, chars ? chars->size() : 0, labels.size());
    for (const auto& [name, shape] : expected) {
      auto it = directory.find(name);
      if (it == directory.end()) {
        throw CheckpointInventoryError("checkpoint is missing tensor '" + name + "' required by variant " +
                                       variant.name());
      }
      if (it->second.first != shape) {
        throw CheckpointInventoryError("tensor '" + name + "' has shape " + shape_str(it->second.first) +
                                       ", expected " + shape_str(shape));
      }
    }
    if (directory.size() != expected.size()) {
      for (const auto& [name, _] : directory) {
        bool known = false;
        for (const auto& e : expected) known = known || e.first == name;
        if (!known) throw CheckpointInventoryError("unexpected tensor '" + name + "' for variant " + variant.name());
      }
    }

    auto read = [&](const std::string& name) {
      const auto& [shape, offset] = directory.at(name);
      std::vector<double> values(shape_numel(shape));
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = detail::get_le_double(payload.data() + offset + 8 * i);
      return values;
    };

    EmbeddingTable table{Tensor(Shape{words.size(), word_dim}, read("word_embedding")), word_dim,
                         wt.at("frozen").get<bool>(), parse_regime(wt.at("source").get<std::string>())};
    TaggerModel model = init_tagger(variant, labels, std::move(words), std::move(table), chars ? &*chars : nullptr, 0);
    for (auto& [name, t] : model.named_parameters()) {
      const auto values = read(name);
      std::copy(values.begin(), values.end(), t.mutable_data().begin());
    }
    return model;
  } catch (const CheckpointError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpointError(std::string("checkpoint header malformed: ") + e.what());
  } catch (const ValidationError& e) {
    throw CorruptCheckpointError(std::string("checkpoint header invalid: ") + e.what());
  }
}

inline void save_model(const TaggerModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline TaggerModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace slotner
