#include "come/datakit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "come/error.hpp"

namespace come::data {

using nlohmann::json;

std::string_view to_string(Schema schema) {
  switch (schema) {
    case Schema::kCounterfact: return "counterfact";
    case Schema::kZsre: return "zsre";
    case Schema::kCanonical: return "canonical";
  }
  return "?";
}

Schema parse_schema(std::string_view text) {
  for (auto s : {Schema::kCounterfact, Schema::kZsre, Schema::kCanonical})
    if (to_string(s) == text) return s;
  throw Error(ErrorCode::kInvalidConfig, "unknown dataset schema '" + std::string(text) + "'");
}

void validate_record(const DatasetRecord& r) {
  auto fail = [&](const std::string& invariant) {
    throw Error(ErrorCode::kInvalidData, "record '" + r.id + "': invariant '" + invariant + "' violated");
  };
  if (r.id.empty()) fail("id non-empty");
  if (r.subject.empty()) fail("subject non-empty");
  if (count_placeholders(r.relation_template) != 1) fail("relation_template has one placeholder");
  if (r.target_old.empty() || r.target_new.empty()) fail("targets non-empty");
  if (r.target_old == r.target_new) fail("target_old != target_new");
  for (const auto& p : r.paraphrase_prompts)
    if (!contains_phrase(p, r.subject)) fail("paraphrase prompts contain the subject");
  for (const auto& p : r.neighborhood_prompts)
    if (contains_phrase(p, r.subject)) fail("neighborhood prompts reference a different subject");
  if (!r.neighborhood_subjects.empty()) {
    if (r.neighborhood_subjects.size() != r.neighborhood_prompts.size())
      fail("one neighborhood subject per neighborhood prompt");
    for (std::size_t i = 0; i < r.neighborhood_subjects.size(); ++i)
      if (r.neighborhood_subjects[i] == r.subject ||
          !contains_phrase(r.neighborhood_prompts[i], r.neighborhood_subjects[i]))
        fail("neighborhood subjects appear in their prompts");
  }
}

namespace {

// Byte offsets of the top-level array elements.
std::vector<std::size_t> element_offsets(std::string_view text) {
  std::vector<std::size_t> out;
  int depth = 0;
  bool in_string = false, escaped = false, expect_element = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    if (depth == 1 && expect_element) {
      out.push_back(i);
      expect_element = false;
    }
    if (c == '"') in_string = true;
    else if (c == '[' || c == '{') {
      if (depth == 0 && c == '[') expect_element = true;
      ++depth;
    } else if (c == ']' || c == '}') --depth;
    else if (c == ',' && depth == 1) expect_element = true;
  }
  return out;
}

std::size_t line_of(std::string_view text, std::size_t offset) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
}

std::string str(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::kInvalidData, std::string("missing field '") + key + "'");
  if (!j.at(key).is_string())
    throw Error(ErrorCode::kInvalidData, std::string("field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

std::vector<std::string> str_list(const json& j, const char* key, bool required = true) {
  if (!j.contains(key) || j.at(key).is_null()) {
    if (required) throw Error(ErrorCode::kInvalidData, std::string("missing field '") + key + "'");
    return {};
  }
  const auto& a = j.at(key);
  if (!a.is_array())
    throw Error(ErrorCode::kInvalidData, std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : a) {
    if (!e.is_string())
      throw Error(ErrorCode::kInvalidData, std::string("field '") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw Error(ErrorCode::kInvalidData, "id must be a string or integer");
}

DatasetRecord from_canonical(const json& j) {
  if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
    throw Error(ErrorCode::kInvalidData, "missing field 'schema_version'");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw Error(ErrorCode::kInvalidData, "unsupported schema_version " + j.at("schema_version").dump());
  DatasetRecord r;
  r.id = str(j, "id");
  r.subject = str(j, "subject");
  r.relation_template = str(j, "relation_template");
  r.target_old = str(j, "target_old");
  r.target_new = str(j, "target_new");
  r.paraphrase_prompts = str_list(j, "paraphrase_prompts");
  r.neighborhood_prompts = str_list(j, "neighborhood_prompts");
  r.prefixes = str_list(j, "prefixes");
  r.generation_prompt = str(j, "generation_prompt");
  if (j.contains("reference_text") && !j.at("reference_text").is_null())
    r.reference_text = str(j, "reference_text");
  r.neighborhood_subjects = str_list(j, "neighborhood_subjects", false);
  return r;
}

// Counterfact: {case_id, requested_rewrite{prompt, subject, target_true{str},
// target_new{str}}, paraphrase_prompts, neighborhood_prompts, generation_prompts}
DatasetRecord from_counterfact(const json& j) {
  DatasetRecord r;
  if (!j.contains("case_id")) throw Error(ErrorCode::kInvalidData, "missing field 'case_id'");
  r.id = id_string(j.at("case_id"));
  if (!j.contains("requested_rewrite") || !j.at("requested_rewrite").is_object())
    throw Error(ErrorCode::kInvalidData, "missing field 'requested_rewrite'");
  const auto& rw = j.at("requested_rewrite");
  r.subject = str(rw, "subject");
  r.relation_template = str(rw, "prompt");
  for (const char* k : {"target_true", "target_new"})
    if (!rw.contains(k) || !rw.at(k).is_object())
      throw Error(ErrorCode::kInvalidData, std::string("missing field 'requested_rewrite.") + k + "'");
  r.target_old = str(rw.at("target_true"), "str");
  r.target_new = str(rw.at("target_new"), "str");
  r.paraphrase_prompts = str_list(j, "paraphrase_prompts", false);
  r.neighborhood_prompts = str_list(j, "neighborhood_prompts", false);
  r.prefixes = str_list(j, "prefixes", false);
  const auto gen = str_list(j, "generation_prompts", false);
  r.generation_prompt = gen.empty() ? fill_template(r.relation_template, r.subject) : gen.front();
  if (j.contains("reference_text") && j.at("reference_text").is_string())
    r.reference_text = j.at("reference_text").get<std::string>();
  return r;
}

// ZsRE: {subject, src, rephrase, alt, answers[], loc, loc_ans}
DatasetRecord from_zsre(const json& j, std::size_t index) {
  DatasetRecord r;
  r.id = j.contains("case_id") ? id_string(j.at("case_id")) : std::to_string(index);
  r.subject = str(j, "subject");
  const std::string src = str(j, "src");
  const auto pos = src.find(r.subject);
  if (pos == std::string::npos)
    throw Error(ErrorCode::kInvalidData, "subject not found in 'src'");
  r.relation_template = src.substr(0, pos) + std::string(kSubjectPlaceholder) +
                        src.substr(pos + r.subject.size());
  r.target_new = str(j, "alt");
  const auto answers = str_list(j, "answers");
  if (answers.empty()) throw Error(ErrorCode::kInvalidData, "field 'answers' is empty");
  r.target_old = answers.front();
  if (j.contains("rephrase")) r.paraphrase_prompts.push_back(str(j, "rephrase"));
  if (j.contains("loc")) r.neighborhood_prompts.push_back(str(j, "loc"));
  r.generation_prompt = src;
  return r;
}

}  // namespace

LoadResult parse_dataset(std::string_view json_text, Schema schema, bool lenient) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidData, std::string("dataset is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::kInvalidData, "dataset must be a JSON array");
  const auto offsets = element_offsets(json_text);
  LoadResult out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    RecordIssue issue;
    issue.index = i;
    issue.offset = i < offsets.size() ? offsets[i] : 0;
    issue.line = line_of(json_text, issue.offset);
    try {
      if (!doc[i].is_object()) throw Error(ErrorCode::kInvalidData, "record must be an object");
      DatasetRecord r = schema == Schema::kCanonical     ? from_canonical(doc[i])
                        : schema == Schema::kCounterfact ? from_counterfact(doc[i])
                                                         : from_zsre(doc[i], i);
      issue.id = r.id;
      validate_record(r);
      if (!seen.insert(r.id).second)
        throw Error(ErrorCode::kInvalidData, "record '" + r.id + "': invariant 'unique id' violated");
      out.records.push_back(std::move(r));
    } catch (const Error& e) {
      issue.message = e.what();
      out.issues.push_back(std::move(issue));
    }
  }
  if (!out.issues.empty() && !lenient) {
    std::ostringstream msg;
    msg << out.issues.size() << " invalid record(s):";
    for (const auto& is : out.issues)
      msg << "\n  #" << is.index << " (line " << is.line << ", offset " << is.offset << "): "
          << is.message;
    throw Error(ErrorCode::kInvalidData, msg.str());
  }
  return out;
}

LoadResult load_dataset_detailed(const std::filesystem::path& path, Schema schema, bool lenient) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open dataset '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset(buf.str(), schema, lenient);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, Schema schema,
                                        bool lenient) {
  return load_dataset_detailed(path, schema, lenient).records;
}

std::string serialize_dataset(const std::vector<DatasetRecord>& records) {
  if (records.empty()) return "[]\n";
  json arr = json::array();
  for (const auto& r : records) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["id"] = r.id;
    j["subject"] = r.subject;
    j["relation_template"] = r.relation_template;
    j["target_old"] = r.target_old;
    j["target_new"] = r.target_new;
    j["paraphrase_prompts"] = r.paraphrase_prompts;
    j["neighborhood_prompts"] = r.neighborhood_prompts;
    j["neighborhood_subjects"] = r.neighborhood_subjects;
    j["prefixes"] = r.prefixes;
    j["generation_prompt"] = r.generation_prompt;
    j["reference_text"] = r.reference_text ? json(*r.reference_text) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path) {
  const std::string text = serialize_dataset(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write dataset '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

void SynthSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, "synth: " + m); };
  if (n_relations < 1) bad("n_relations must be >= 1");
  if (objects_per_relation < 2) bad("objects_per_relation must be >= 2");
  if (consonants.empty() || vowels.empty()) bad("empty syllable inventory");
  if (syllables_per_word < 1) bad("syllables_per_word must be >= 1");
  if (filler_phrases < 1 && (paraphrases_per_fact > 0 || prefixes_per_fact > 0))
    bad("filler phrases required for paraphrases and prefixes");
  if (prefixes_per_fact > filler_phrases) bad("prefixes_per_fact exceeds filler_phrases");
}

namespace {

class WordSource {
 public:
  WordSource(const SynthSpec& spec, std::size_t needed, std::mt19937_64& rng) {
    std::vector<std::string> syllables;
    for (char c : spec.consonants)
      for (char v : spec.vowels) syllables.push_back(std::string{c, v});
    std::sort(syllables.begin(), syllables.end());
    syllables.erase(std::unique(syllables.begin(), syllables.end()), syllables.end());
    double capacity = 1.0;
    for (std::size_t i = 0; i < spec.syllables_per_word; ++i)
      capacity *= static_cast<double>(syllables.size());
    if (static_cast<double>(needed) > capacity)
      throw Error(ErrorCode::kInvalidConfig,
                  "synth: vocabulary exhausted (" + std::to_string(needed) + " words needed, " +
                      std::to_string(static_cast<std::size_t>(capacity)) + " available)");
    if (capacity <= static_cast<double>(1 << 20)) {
      std::vector<std::string> all{""};
      for (std::size_t i = 0; i < spec.syllables_per_word; ++i) {
        std::vector<std::string> next;
        for (const auto& w : all)
          for (const auto& s : syllables) next.push_back(w + s);
        all = std::move(next);
      }
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(needed);
      words_ = std::move(all);
    } else {
      std::set<std::string> seen;
      std::uniform_int_distribution<std::size_t> pick(0, syllables.size() - 1);
      while (words_.size() < needed) {
        std::string w;
        for (std::size_t i = 0; i < spec.syllables_per_word; ++i) w += syllables[pick(rng)];
        if (seen.insert(w).second) words_.push_back(w);
      }
    }
  }

  std::string next() {
    if (cursor_ >= words_.size()) throw Error(ErrorCode::kInvalidConfig, "synth: vocabulary exhausted");
    return words_[cursor_++];
  }

 private:
  std::vector<std::string> words_;
  std::size_t cursor_ = 0;
};

// Subject-final templates: the object is predicted right at the subject's
// last token.
struct Relation {
  std::string base;        // "a b {}"
  std::string paraphrase;  // "c d {}"
  std::vector<std::string> objects;
};

bool two_word_subject(std::size_t i) { return i % 4 == 3; }

}  // namespace

std::vector<DatasetRecord> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  if (spec.n_facts == 0) return {};
  std::mt19937_64 rng(spec.seed);

  const std::size_t combos = std::min(spec.n_facts, spec.n_relations * spec.objects_per_relation);
  const std::size_t neighbors = combos * spec.neighbors_per_fact;
  const std::size_t needed = spec.n_relations * (4 + spec.objects_per_relation) +
                             2 * spec.filler_phrases + 2 * spec.n_facts + 2 * neighbors;
  WordSource words(spec, needed, rng);

  std::vector<Relation> relations(spec.n_relations);
  for (auto& r : relations) {
    const auto a = words.next(), b = words.next(), c = words.next(), d = words.next();
    r.base = a + " " + b + " {}";
    r.paraphrase = c + " " + d + " {}";
    for (std::size_t k = 0; k < spec.objects_per_relation; ++k) r.objects.push_back(words.next());
  }
  std::vector<std::string> fillers;
  for (std::size_t k = 0; k < spec.filler_phrases; ++k)
    fillers.push_back(words.next() + " " + words.next());

  struct Fact {
    std::string subject;
    std::size_t relation, old_object, new_object;
  };
  std::vector<Fact> facts;
  for (std::size_t i = 0; i < spec.n_facts; ++i) {
    Fact f;
    f.subject = words.next();
    if (two_word_subject(i)) f.subject += " " + words.next();
    f.relation = i % spec.n_relations;
    std::uniform_int_distribution<std::size_t> pick(0, spec.objects_per_relation - 1);
    f.old_object = pick(rng);
    std::uniform_int_distribution<std::size_t> other(0, spec.objects_per_relation - 2);
    f.new_object = other(rng);
    if (f.new_object >= f.old_object) ++f.new_object;
    facts.push_back(std::move(f));
  }

  // Neighbors share relation and old object with the facts they guard.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::string>> pool;
  std::size_t neighbor_count = 0;
  for (const auto& f : facts) {
    auto& slot = pool[{f.relation, f.old_object}];
    while (slot.size() < spec.neighbors_per_fact) {
      std::string s = words.next();
      if (neighbor_count++ % 4 == 3) s += " " + words.next();
      slot.push_back(std::move(s));
    }
  }

  std::set<std::string> edited_subjects, neighbor_subjects;
  for (const auto& f : facts) edited_subjects.insert(f.subject);
  for (const auto& [key, subjects] : pool) neighbor_subjects.insert(subjects.begin(), subjects.end());
  for (const auto& s : neighbor_subjects)
    if (edited_subjects.count(s))
      throw Error(ErrorCode::kInvalidData, "synth: neighbor subject '" + s + "' is also edited");

  // Sentences the trainer will see that end in a given object, for references.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::string>> sentences;
  for (const auto& f : facts)
    sentences[{f.relation, f.old_object}].push_back(
        fill_template(relations[f.relation].base, f.subject) + " " +
        relations[f.relation].objects[f.old_object]);
  for (const auto& [key, subjects] : pool)
    for (const auto& s : subjects)
      for (const auto* t : {&relations[key.first].base, &relations[key.first].paraphrase})
        sentences[key].push_back(fill_template(*t, s) + " " + relations[key.first].objects[key.second]);

  std::vector<DatasetRecord> out;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const auto& f = facts[i];
    const auto& rel = relations[f.relation];
    DatasetRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "fact-%05zu", i);
    r.id = id;
    r.subject = f.subject;
    r.relation_template = rel.base;
    r.target_old = rel.objects[f.old_object];
    r.target_new = rel.objects[f.new_object];
    std::vector<std::size_t> order(fillers.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < spec.paraphrases_per_fact; ++k)
      r.paraphrase_prompts.push_back(fillers[order[k % order.size()]] + " " +
                                     fill_template(rel.paraphrase, f.subject));
    const auto& guards = pool.at({f.relation, f.old_object});
    for (std::size_t k = 0; k < spec.neighbors_per_fact; ++k) {
      const auto& templ = k % 2 == 0 ? rel.base : rel.paraphrase;
      r.neighborhood_prompts.push_back(fill_template(templ, guards[k]));
      r.neighborhood_subjects.push_back(guards[k]);
    }
    std::shuffle(order.begin(), order.end(), rng);
    r.prefixes.push_back("");
    for (std::size_t k = 0; k < spec.prefixes_per_fact; ++k) r.prefixes.push_back(fillers[order[k]]);
    r.generation_prompt = fill_template(rel.base, f.subject);
    auto it = sentences.find({f.relation, f.new_object});
    if (it != sentences.end() && !it->second.empty()) {
      std::string text;
      for (const auto& s : it->second) text += (text.empty() ? "" : " ") + s;
      r.reference_text = std::move(text);
    }
    validate_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

EditRequest to_request(const DatasetRecord& r) {
  EditRequest req;
  req.triple = to_triple(r);
  req.prompts.base = fill_template(r.relation_template, r.subject);
  req.prompts.paraphrases = r.paraphrase_prompts;
  req.prompts.neighborhood = r.neighborhood_prompts;
  req.prompts.prefixes = r.prefixes;
  return req;
}

std::vector<EditRequest> to_requests(const std::vector<DatasetRecord>& records) {
  std::vector<EditRequest> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_request(r));
  return out;
}

KnowledgeTriple to_triple(const DatasetRecord& r) {
  return {r.id, r.subject, r.relation_template, r.target_old, r.target_new};
}

std::vector<eval::ReferenceText> references(const std::vector<DatasetRecord>& records) {
  std::vector<eval::ReferenceText> out;
  for (const auto& r : records)
    if (r.reference_text) out.push_back({r.id, *r.reference_text});
  return out;
}

std::vector<std::string> generation_prompts(const std::vector<DatasetRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (!r.generation_prompt.empty()) out.push_back(r.generation_prompt);
  return out;
}

model::Tokenizer build_tokenizer(const std::vector<DatasetRecord>& records) {
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(fill_template(r.relation_template, r.subject));
    texts.push_back(r.target_old);
    texts.push_back(r.target_new);
    texts.insert(texts.end(), r.paraphrase_prompts.begin(), r.paraphrase_prompts.end());
    texts.insert(texts.end(), r.neighborhood_prompts.begin(), r.neighborhood_prompts.end());
    texts.insert(texts.end(), r.prefixes.begin(), r.prefixes.end());
    texts.push_back(r.generation_prompt);
    if (r.reference_text) texts.push_back(*r.reference_text);
  }
  return model::Tokenizer::from_texts(texts);
}

namespace {

// Replaces the word-aligned occurrence of `subject` in `prompt` with "{}".
std::optional<std::string> template_of(const std::string& prompt, const std::string& subject) {
  const auto words = model::split_words(prompt);
  const auto needle = model::split_words(subject);
  auto it = std::search(words.begin(), words.end(), needle.begin(), needle.end());
  if (needle.empty() || it == words.end()) return std::nullopt;
  std::string out;
  for (auto w = words.begin(); w != words.end();) {
    if (!out.empty()) out += " ";
    if (w == it) {
      out += kSubjectPlaceholder;
      w += static_cast<std::ptrdiff_t>(needle.size());
    } else {
      out += *w++;
    }
  }
  return out;
}

void add_template(std::vector<RelationTemplate>& list, const std::string& relation,
                  const std::string& text) {
  for (const auto& t : list)
    if (t.relation == relation && t.text == text) return;
  list.push_back({relation, text});
}

}  // namespace

TrainingMaterial training_material(const std::vector<DatasetRecord>& records) {
  TrainingMaterial m;
  std::map<std::string, std::size_t> neighbor_index;
  std::set<std::string> prefixes;
  for (const auto& r : records) {
    m.facts.push_back(to_triple(r));
    add_template(m.fact_templates, r.relation_template, r.relation_template);
    add_template(m.neighbor_templates, r.relation_template, r.relation_template);
    for (const auto& p : r.prefixes)
      if (!model::split_words(p).empty()) prefixes.insert(model::normalize_whitespace(p));
  }
  for (const auto& r : records) {
    for (std::size_t k = 0; k < r.neighborhood_subjects.size(); ++k) {
      const auto& subject = r.neighborhood_subjects[k];
      const auto templ = template_of(r.neighborhood_prompts[k], subject);
      if (!templ) continue;
      add_template(m.neighbor_templates, r.relation_template, *templ);
      auto found = neighbor_index.find(subject);
      if (found == neighbor_index.end()) {
        neighbor_index.emplace(subject, m.neighbors.size());
        m.neighbors.push_back({"neighbor:" + subject, subject, r.relation_template, r.target_old,
                               r.target_new});
      } else if (m.neighbors[found->second].old_object != r.target_old) {
        throw Error(ErrorCode::kInvalidData,
                    "neighbor subject '" + subject + "' is assigned conflicting objects");
      }
    }
  }
  m.prefix_pool.assign(prefixes.begin(), prefixes.end());
  return m;
}

train::Corpus build_training_corpus(const model::Tokenizer& tok, const TrainingMaterial& material,
                                    std::size_t fact_repetitions,
                                    std::size_t neighbor_repetitions, std::uint64_t seed) {
  train::Corpus corpus = train::build_corpus(tok, material.facts, material.fact_templates,
                                             fact_repetitions, seed, material.prefix_pool);
  if (!material.neighbors.empty())
    train::append_corpus(corpus, train::build_corpus(tok, material.neighbors,
                                                     material.neighbor_templates,
                                                     neighbor_repetitions, seed + 1,
                                                     material.prefix_pool));
  return corpus;
}

std::vector<DatasetRecord> select_records(const std::vector<DatasetRecord>& records, std::size_t n,
                                          std::uint64_t seed) {
  if (n == 0 || n == records.size()) return records;
  if (n > records.size())
    throw Error(ErrorCode::kInvalidConfig, "n_edits = " + std::to_string(n) + " exceeds the " +
                                               std::to_string(records.size()) + " dataset records");
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<DatasetRecord> out;
  out.reserve(n);
  for (auto i : idx) out.push_back(records[i]);
  return out;
}

}  // namespace come::data
