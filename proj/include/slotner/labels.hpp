#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slotner/errors.hpp"

namespace slotner {

// A label of the IOB2 scheme: `O`, `B-type` or `I-type`.
struct IobLabel {
  enum class Prefix { outside, begin, inside };
  Prefix prefix = Prefix::outside;
  std::string type;

  bool outside() const { return prefix == Prefix::outside; }
  bool begin() const { return prefix == Prefix::begin; }
  bool inside() const { return prefix == Prefix::inside; }
};

inline IobLabel parse_iob(std::string_view label) {
  if (label == "O") return {};
  if (label.size() > 2 && label[1] == '-' && (label[0] == 'B' || label[0] == 'I')) {
    return {label[0] == 'B' ? IobLabel::Prefix::begin : IobLabel::Prefix::inside, std::string(label.substr(2))};
  }
  throw ValidationError("label '" + std::string(label) + "' is not O, B-<type> or I-<type>");
}

// Ordered label inventory: O first, then B-x, I-x pairs by entity type in
// lexicographic order. Always closed under B/I pairing.
class LabelSet {
 public:
  LabelSet() { rebuild({}); }

  template <typename Range>
  static LabelSet from_tags(const Range& tags) {
    std::set<std::string> types;
    for (const auto& tag : tags) {
      const IobLabel label = parse_iob(tag);
      if (!label.outside()) types.insert(label.type);
    }
    LabelSet out;
    out.rebuild({types.begin(), types.end()});
    return out;
  }

  static LabelSet from_entity_types(std::vector<std::string> types) {
    std::sort(types.begin(), types.end());
    types.erase(std::unique(types.begin(), types.end()), types.end());
    LabelSet out;
    out.rebuild(std::move(types));
    return out;
  }

  // Accepts only lists already in canonical order.
  static LabelSet from_labels(const std::vector<std::string>& labels) {
    LabelSet out = from_tags(labels);
    if (out.labels_ != labels) throw ValidationError("label list is not in canonical O/B-/I- order");
    return out;
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& entity_types() const { return types_; }
  const std::string& name(std::size_t id) const { return labels_.at(id); }

  bool contains(std::string_view label) const { return index_.count(std::string(label)) != 0; }

  std::size_t id(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) throw ValidationError("label '" + std::string(label) + "' not in label set");
    return it->second;
  }

  bool operator==(const LabelSet& other) const { return labels_ == other.labels_; }

 private:
  void rebuild(std::vector<std::string> types) {
    types_ = std::move(types);
    labels_ = {"O"};
    for (const auto& t : types_) {
      labels_.push_back("B-" + t);
      labels_.push_back("I-" + t);
    }
    index_.clear();
    for (std::size_t i = 0; i < labels_.size(); ++i) index_[labels_[i]] = i;
  }

  std::vector<std::string> types_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace slotner
