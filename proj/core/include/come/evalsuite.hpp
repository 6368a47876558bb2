#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "come/editengine.hpp"
#include "come/knowledge.hpp"
#include "come/model.hpp"

namespace come::eval {

// How a multi-token object's log-probability is reduced before comparison.
enum class Aggregation { kMean, kSum };

std::string_view to_string(Aggregation aggregation);
Aggregation parse_aggregation(std::string_view text);

// log P(object | <bos> prompt), mean or sum over the object's tokens.
double object_logprob(const model::ModelState& state, std::string_view prompt,
                      std::string_view object, Aggregation aggregation = Aggregation::kMean);

struct PromptScore {
  std::string prompt;
  double new_logprob = 0.0;
  double old_logprob = 0.0;
  bool success = false;
};

struct RequestScores {
  std::string request_id;
  std::vector<PromptScore> efficacy;
  std::vector<PromptScore> generality;
  std::vector<PromptScore> locality;
};

// Probability comparisons for every prompt of every request. Success is
// P[o*] > P[o] on base and paraphrase prompts, P[o*] < P[o] on neighborhood
// prompts; ties fail.
std::vector<RequestScores> score_requests(const model::ModelState& state,
                                          std::span<const EditRequest> requests,
                                          Aggregation aggregation = Aggregation::kMean);

double efficacy_cf(const model::ModelState& state, std::span<const EditRequest> requests,
                   Aggregation aggregation = Aggregation::kMean);
// Requests without paraphrases are excluded; 0 when nothing remains.
double generality_cf(const model::ModelState& state, std::span<const EditRequest> requests,
                     Aggregation aggregation = Aggregation::kMean);
// Requests without neighborhood prompts are excluded; 0 when nothing remains.
double locality_cf(const model::ModelState& state, std::span<const EditRequest> requests,
                   Aggregation aggregation = Aggregation::kMean);

enum class Unit { kFraction, kPercent };

// Harmonic mean, 0 when any component is 0.
double score(double efficacy, double generality, double locality, Unit unit = Unit::kFraction);

enum class ZsreKind { kEfficacy, kGenerality, kLocality };

// Exact match of the greedy continuation (as many tokens as the expected
// object) against o* for efficacy/generality and o for locality.
double zsre_accuracy(const model::ModelState& state, std::span<const EditRequest> requests,
                     ZsreKind kind);

// Shannon entropy (bits) of the n-gram frequency distribution.
double ngram_entropy(std::span<const std::string> words, std::size_t n);
// (1/3)·H2 + (2/3)·H3
double text_fluency(std::span<const std::string> words);
// Mean text_fluency over prompts of prompt + greedy continuation.
double fluency(const model::ModelState& state, std::span<const std::string> generation_prompts,
               std::size_t max_new);

struct ReferenceText {
  std::string request_id;
  std::string text;
};

// Unigram TF-IDF with idf = ln((1+D)/(1+df)) + 1 fitted on the references.
class TfidfModel {
 public:
  explicit TfidfModel(std::span<const std::string> documents);
  double cosine(std::string_view a, std::string_view b) const;
  double idf(const std::string& term) const;

 private:
  std::size_t documents_ = 0;
  std::vector<std::pair<std::string, std::size_t>> df_;  // sorted by term
};

struct ConsistencyResult {
  std::optional<double> value;  // empty when no request had a reference
  std::vector<std::pair<std::string, double>> per_request;
  std::vector<std::string> skipped;  // request ids without a reference
};

ConsistencyResult consistency(const model::ModelState& state, std::span<const EditRequest> requests,
                              std::span<const ReferenceText> references, std::size_t max_new);

struct ZsreScores {
  double efficacy = 0.0;
  double generality = 0.0;
  double locality = 0.0;
};

struct EditReport {
  std::string method;
  std::size_t n_edits = 0;
  std::uint64_t seed = 0;
  double efficacy = 0.0;
  double generality = 0.0;
  double locality = 0.0;
  double score = 0.0;
  std::optional<double> fluency;
  std::optional<double> consistency;
  std::optional<ZsreScores> zsre;
  std::vector<RequestScores> per_request;
  std::vector<std::pair<std::string, double>> consistency_per_request;
  std::vector<edit::RequestDiagnostics> diagnostics;
  std::vector<edit::LayerSummary> layers;
  std::vector<std::string> flags;
  std::string config_json = "{}";  // effective configuration echo
  std::optional<double> wall_time;
};

struct EvalOptions {
  Aggregation aggregation = Aggregation::kMean;
  bool compute_fluency = true;
  std::size_t fluency_max_new = 10;
  bool compute_consistency = true;
  std::size_t consistency_max_new = 10;
  bool compute_zsre = true;
};

// Fills every metric of the report for `state`. Diagnostics, layers,
// method and config are left to the caller.
EditReport evaluate(const model::ModelState& state, std::span<const EditRequest> requests,
                    std::span<const std::string> generation_prompts,
                    std::span<const ReferenceText> references, const EvalOptions& options);

std::string report_to_json(const EditReport& report);
void write_report(const EditReport& report, const std::filesystem::path& path);

inline constexpr std::string_view kCsvHeader =
    "method,N_edits,efficacy,generality,locality,score,fluency,consistency,seed,wall_time";

// One CSV line (no newline). wall_time is left blank unless requested so that
// repeated runs produce identical files.
std::string csv_row(const EditReport& report, bool include_wall_time = false);

}  // namespace come::eval
