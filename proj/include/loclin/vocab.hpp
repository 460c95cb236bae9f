#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "loclin/model.hpp"

namespace loclin {

/// Deterministic word/byte vocabulary for generated models. Id 0 is "<bos>",
/// then the lowercase letters, then the words of the bundled corpus and a
/// longer word list, then printable ASCII, then "<tok_N>" fillers up to the
/// requested size. The table depends only on the size.
class ToyVocab {
 public:
  explicit ToyVocab(std::size_t size);

  std::size_t size() const { return entries_.size(); }
  const std::string& text(TokenId id) const;
  std::optional<TokenId> find(std::string_view piece) const;

  /// Splits on whitespace. A word in the table maps to its id; any other word
  /// falls back to one token per character. Prepends <bos> when asked.
  TokenSequence encode(std::string_view prompt, bool add_bos = true) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  static constexpr TokenId bos = 0;

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Sentences of the bundled training corpus, each a whitespace-separated list
/// of words that appear early in the vocabulary.
const std::vector<std::string>& toy_corpus();

}  // namespace loclin
