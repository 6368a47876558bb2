#include "come/knowledge.hpp"

#include <algorithm>

#include "come/error.hpp"

namespace come {

std::size_t count_placeholders(std::string_view templ) {
  std::size_t count = 0;
  for (auto pos = templ.find(kSubjectPlaceholder); pos != std::string_view::npos;
       pos = templ.find(kSubjectPlaceholder, pos + kSubjectPlaceholder.size()))
    ++count;
  return count;
}

std::string fill_template(std::string_view templ, std::string_view subject) {
  if (count_placeholders(templ) != 1)
    throw Error(ErrorCode::kInvalidData,
                "template must contain exactly one subject placeholder: '" + std::string(templ) + "'");
  const auto pos = templ.find(kSubjectPlaceholder);
  std::string out(templ.substr(0, pos));
  out += subject;
  out += templ.substr(pos + kSubjectPlaceholder.size());
  return out;
}

model::TokenSequence encode_prompt(const model::Tokenizer& tok, std::string_view prefix,
                                   std::string_view text) {
  model::TokenSequence seq{model::Tokenizer::kBos};
  for (auto t : tok.encode(prefix)) seq.push_back(t);
  for (auto t : tok.encode(text)) seq.push_back(t);
  return seq;
}

bool contains_phrase(std::string_view text, std::string_view phrase) {
  const auto words = model::split_words(text);
  const auto needle = model::split_words(phrase);
  if (needle.empty()) return false;
  return std::search(words.begin(), words.end(), needle.begin(), needle.end()) != words.end();
}

void EditRequest::validate() const {
  const auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kInvalidData, "request '" + triple.id + "': " + what);
  };
  if (triple.id.empty()) fail("empty id");
  if (triple.subject.empty()) fail("empty subject");
  if (triple.old_object == triple.new_object) fail("target_old equals target_new");
  if (triple.old_object.empty() || triple.new_object.empty()) fail("empty target");
  if (!contains_phrase(prompts.base, triple.subject))
    fail("base prompt does not contain the subject");
  for (const auto& p : prompts.paraphrases)
    if (!contains_phrase(p, triple.subject))
      fail("paraphrase prompt does not contain the subject: '" + p + "'");
  for (const auto& p : prompts.neighborhood)
    if (contains_phrase(p, triple.subject))
      fail("neighborhood prompt mentions the edited subject: '" + p + "'");
}

}  // namespace come
