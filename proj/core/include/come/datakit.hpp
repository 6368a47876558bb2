#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "come/evalsuite.hpp"
#include "come/knowledge.hpp"
#include "come/tokenizer.hpp"
#include "come/trainer.hpp"

namespace come::data {

inline constexpr int kSchemaVersion = 1;

enum class Schema { kCounterfact, kZsre, kCanonical };

std::string_view to_string(Schema schema);
Schema parse_schema(std::string_view text);

struct DatasetRecord {
  std::string id;
  std::string subject;
  std::string relation_template;  // exactly one "{}"
  std::string target_old;
  std::string target_new;
  std::vector<std::string> paraphrase_prompts;
  std::vector<std::string> neighborhood_prompts;
  std::vector<std::string> prefixes;
  std::string generation_prompt;
  std::optional<std::string> reference_text;
  // Subject of each neighborhood prompt, when known (canonical schema only).
  std::vector<std::string> neighborhood_subjects;

  bool operator==(const DatasetRecord&) const = default;
};

// Throws kInvalidData naming the violated invariant.
void validate_record(const DatasetRecord& record);

struct RecordIssue {
  std::size_t index = 0;  // position in the JSON array
  std::size_t line = 0;   // 1-based line of the record's opening brace
  std::size_t offset = 0; // byte offset of the record's opening brace
  std::string id;
  std::string message;
};

struct LoadResult {
  std::vector<DatasetRecord> records;
  std::vector<RecordIssue> issues;
};

// Parses a JSON array in the given schema. Invalid records are collected as
// issues; unless `lenient`, any issue makes the load fail with all of them listed.
LoadResult parse_dataset(std::string_view json_text, Schema schema, bool lenient = false);
LoadResult load_dataset_detailed(const std::filesystem::path& path, Schema schema,
                                 bool lenient = false);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, Schema schema,
                                        bool lenient = false);

// Canonical schema: sorted keys, one record per array element, "[]" when empty.
std::string serialize_dataset(const std::vector<DatasetRecord>& records);
void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);

struct SynthSpec {
  std::size_t n_facts = 200;
  std::size_t n_relations = 4;
  // Pseudo-words are built from consonant-vowel syllables.
  std::string consonants = "bdfgklmnprstvz";
  std::string vowels = "aeiou";
  std::size_t syllables_per_word = 2;
  std::size_t paraphrases_per_fact = 2;
  std::size_t neighbors_per_fact = 2;
  std::size_t objects_per_relation = 6;
  std::size_t filler_phrases = 6;
  std::size_t prefixes_per_fact = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<DatasetRecord> generate_synthetic(const SynthSpec& spec);

// Record → edit request / triple.
EditRequest to_request(const DatasetRecord& record);
std::vector<EditRequest> to_requests(const std::vector<DatasetRecord>& records);
KnowledgeTriple to_triple(const DatasetRecord& record);

std::vector<eval::ReferenceText> references(const std::vector<DatasetRecord>& records);
std::vector<std::string> generation_prompts(const std::vector<DatasetRecord>& records);

// Closed vocabulary over every text a dataset can present to the model.
model::Tokenizer build_tokenizer(const std::vector<DatasetRecord>& records);

struct TrainingMaterial {
  std::vector<KnowledgeTriple> facts;      // edited subjects with their old objects
  std::vector<KnowledgeTriple> neighbors;  // neighborhood subjects
  std::vector<RelationTemplate> fact_templates;      // base template only
  std::vector<RelationTemplate> neighbor_templates;  // every template seen for the relation
  std::vector<std::string> prefix_pool;
};

// Edited facts are trained on their base template only, so paraphrases stay
// unseen; neighborhood facts are trained on every template of their relation.
TrainingMaterial training_material(const std::vector<DatasetRecord>& records);

train::Corpus build_training_corpus(const model::Tokenizer& tok, const TrainingMaterial& material,
                                    std::size_t fact_repetitions,
                                    std::size_t neighbor_repetitions, std::uint64_t seed);

// n records chosen by a seeded shuffle, returned in dataset order. n = 0 or
// n = size selects everything; n > size is a kInvalidConfig error.
std::vector<DatasetRecord> select_records(const std::vector<DatasetRecord>& records, std::size_t n,
                                          std::uint64_t seed);

}  // namespace come::data
