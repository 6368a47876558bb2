#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace come::model {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

// Whitespace tokenizer over a closed vocabulary. Ids 0..3 are reserved for
// <pad>, <bos>, <eos> and <unk>; every other id maps to exactly one word.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Tokenizer();

  // Words are deduplicated and sorted so the id assignment does not depend on
  // the order the caller discovered them in.
  static Tokenizer from_words(std::vector<std::string> words);
  static Tokenizer from_texts(std::span<const std::string> texts);

  TokenSequence encode(std::string_view text) const;
  // Special tokens are dropped; words are joined by single spaces.
  std::string decode(std::span<const TokenId> tokens) const;

  std::optional<TokenId> find(std::string_view word) const;
  const std::string& word(TokenId id) const { return words_.at(id); }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  bool operator==(const Tokenizer& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_words(std::string_view text);
std::string normalize_whitespace(std::string_view text);

// Start index of the first occurrence of `needle` in `haystack`.
std::optional<std::size_t> find_subsequence(std::span<const TokenId> haystack,
                                            std::span<const TokenId> needle);

}  // namespace come::model
