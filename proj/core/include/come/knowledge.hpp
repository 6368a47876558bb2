#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "come/tokenizer.hpp"

namespace come {

inline constexpr std::string_view kSubjectPlaceholder = "{}";

// One fact (s, r, o) and its replacement object o*. `relation` is the
// relation template, e.g. "{} was born in".
struct KnowledgeTriple {
  std::string id;
  std::string subject;
  std::string relation;
  std::string old_object;
  std::string new_object;

  bool operator==(const KnowledgeTriple&) const = default;
};

struct PromptSet {
  std::string base;
  std::vector<std::string> paraphrases;
  std::vector<std::string> neighborhood;
  // Context prefixes averaged over during key collection and residual
  // optimization. An empty list behaves like a single empty prefix.
  std::vector<std::string> prefixes;

  bool operator==(const PromptSet&) const = default;
};

struct EditRequest {
  KnowledgeTriple triple;
  PromptSet prompts;

  // Throws kInvalidData naming the broken invariant.
  void validate() const;
  bool operator==(const EditRequest&) const = default;
};

struct RelationTemplate {
  std::string relation;
  std::string text;
};

std::size_t count_placeholders(std::string_view templ);
// Substitutes the single "{}" placeholder; throws kInvalidData otherwise.
std::string fill_template(std::string_view templ, std::string_view subject);

// Word-level containment; "ka" is not found in "kala".
bool contains_phrase(std::string_view text, std::string_view phrase);

// [<bos>] + prefix + text, tokenized.
model::TokenSequence encode_prompt(const model::Tokenizer& tok, std::string_view prefix,
                                   std::string_view text);

}  // namespace come
