#include "loclin/vocab.hpp"

#include <cctype>
#include <sstream>

namespace loclin {

namespace {

// Corpus words first so every sentence fits in a 64-token vocabulary.
constexpr const char* kWords[] = {
    "the",    "golden", "gate",   "bridge", "is",     "red",    "fog",    "rolls",
    "over",   "bay",    "ship",   "sails",  "under",  "sun",    "sets",   "behind",
    "hills",  "cars",   "cross",  "at",     "night",  "old",    "tower",  "stands",
    "near",   "sea",    "here",   "a",      "painting", "of",   "city",   "sky",
    "blue",   "water",  "by",     "and",    "long",   "road",   "river",  "north",
    "south",  "east",   "west",   "green",  "park",   "street", "house",  "light",
    "dark",   "morning", "evening", "rain", "wind",   "boat",   "harbor", "island",
    "coast",  "cliff",  "stone",  "iron",   "steel",  "cable",  "toll",   "exit",
    "highway", "traffic", "train", "station", "market", "garden", "forest", "mountain",
    "valley", "beach",  "wave",   "tide",   "bird",   "gull",   "song",   "story",
    "map",    "most",   "only",   "first",  "last",   "one",    "two",    "three",
    "big",    "small",  "new",    "tall",   "wide",   "narrow", "quiet",  "busy",
};

constexpr const char* kCorpus[] = {
    "the golden gate bridge is red",
    "the fog rolls over the bay",
    "a ship sails under the bridge",
    "the sun sets behind the hills",
    "cars cross the bridge at night",
    "the old tower stands near the sea",
    "here is a painting of the city",
    "the sky is blue over the water",
    "the city by the bay is old",
    "a painting of the golden gate",
};

}  // namespace

ToyVocab::ToyVocab(std::size_t size) {
  require(size > 0, ErrorCode::config, "vocabulary size must be positive");
  auto add = [&](std::string s) {
    if (entries_.size() >= size || index_.count(s)) return;
    index_.emplace(s, static_cast<TokenId>(entries_.size()));
    entries_.push_back(std::move(s));
  };
  add("<bos>");
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (const char* w : kWords) add(w);
  for (char c = 33; c < 127; ++c) add(std::string(1, c));
  while (entries_.size() < size) add("<tok_" + std::to_string(entries_.size()) + ">");
}

const std::string& ToyVocab::text(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < entries_.size(),
          ErrorCode::invalid_token, "token id " + std::to_string(id) + " outside vocabulary");
  return entries_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> ToyVocab::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenSequence ToyVocab::encode(std::string_view prompt, bool add_bos) const {
  TokenSequence seq;
  if (add_bos) seq.ids.push_back(bos);
  std::istringstream words{std::string(prompt)};
  std::string word;
  while (words >> word) {
    if (auto id = find(word)) {
      seq.ids.push_back(*id);
      continue;
    }
    for (char c : word) {
      auto id = find(std::string(1, c));
      require(id.has_value(), ErrorCode::invalid_token,
              "character '" + std::string(1, c) + "' is not in the vocabulary");
      seq.ids.push_back(*id);
    }
  }
  require(!seq.ids.empty(), ErrorCode::invalid_token, "prompt produced no tokens");
  return seq;
}

std::string ToyVocab::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += text(ids[i]);
  }
  return out;
}

const std::vector<std::string>& toy_corpus() {
  static const std::vector<std::string> corpus(std::begin(kCorpus), std::end(kCorpus));
  return corpus;
}

}  // namespace loclin
