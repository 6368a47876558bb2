#include "come/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "come/error.hpp"

namespace come::model {

Tokenizer::Tokenizer() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {
  for (TokenId i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  Tokenizer tok;
  for (auto& w : words) {
    if (w.empty() || tok.index_.contains(w)) continue;
    if (std::any_of(w.begin(), w.end(), [](unsigned char c) { return std::isspace(c); }))
      throw Error(ErrorCode::kInvalidData, "tokenizer: word contains whitespace: '" + w + "'");
    tok.index_.emplace(w, static_cast<TokenId>(tok.words_.size()));
    tok.words_.push_back(std::move(w));
  }
  return tok;
}

Tokenizer Tokenizer::from_texts(std::span<const std::string> texts) {
  std::vector<std::string> words;
  for (const auto& t : texts) {
    auto split = split_words(t);
    words.insert(words.end(), split.begin(), split.end());
  }
  return from_words(std::move(words));
}

TokenSequence Tokenizer::encode(std::string_view text) const {
  TokenSequence out;
  for (const auto& w : split_words(text)) {
    auto it = index_.find(w);
    out.push_back(it == index_.end() ? kUnk : it->second);
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t < kReserved || t >= words_.size()) continue;
    if (!out.empty()) out += ' ';
    out += words_[t];
  }
  return out;
}

std::optional<TokenId> Tokenizer::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::optional<std::size_t> find_subsequence(std::span<const TokenId> haystack,
                                            std::span<const TokenId> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end());
  if (it == haystack.end()) return std::nullopt;
  return static_cast<std::size_t>(it - haystack.begin());
}

}  // namespace come::model
