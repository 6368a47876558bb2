#include "come/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "come/error.hpp"

namespace come::eval {

using model::TokenSequence;
using model::normalize_whitespace;
using model::split_words;

namespace {

// Order-independent sum: values are added in sorted order so that any
// permutation of the inputs yields the same bits.
double stable_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double fraction(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

PromptScore compare(const model::ModelState& state, const std::string& prompt,
                    const KnowledgeTriple& triple, Aggregation aggregation, bool want_new) {
  PromptScore s;
  s.prompt = prompt;
  s.new_logprob = object_logprob(state, prompt, triple.new_object, aggregation);
  s.old_logprob = object_logprob(state, prompt, triple.old_object, aggregation);
  s.success = want_new ? s.new_logprob > s.old_logprob : s.new_logprob < s.old_logprob;
  return s;
}

}  // namespace

std::string_view to_string(Aggregation aggregation) {
  return aggregation == Aggregation::kMean ? "mean" : "sum";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "mean") return Aggregation::kMean;
  if (text == "sum") return Aggregation::kSum;
  throw Error(ErrorCode::kInvalidConfig, "unknown aggregation '" + std::string(text) + "'");
}

double object_logprob(const model::ModelState& state, std::string_view prompt,
                      std::string_view object, Aggregation aggregation) {
  const TokenSequence prompt_tokens = encode_prompt(state.tokenizer(), "", prompt);
  const TokenSequence target = state.tokenizer().encode(object);
  if (target.empty()) throw Error(ErrorCode::kInvalidData, "object_logprob: empty object");
  const double total = model::logprob_sequence(state, prompt_tokens, target);
  return aggregation == Aggregation::kMean ? total / static_cast<double>(target.size()) : total;
}

std::vector<RequestScores> score_requests(const model::ModelState& state,
                                          std::span<const EditRequest> requests,
                                          Aggregation aggregation) {
  std::vector<RequestScores> out;
  out.reserve(requests.size());
  for (const auto& r : requests) {
    RequestScores s;
    s.request_id = r.triple.id;
    s.efficacy.push_back(compare(state, r.prompts.base, r.triple, aggregation, true));
    for (const auto& p : r.prompts.paraphrases)
      s.generality.push_back(compare(state, p, r.triple, aggregation, true));
    for (const auto& p : r.prompts.neighborhood)
      s.locality.push_back(compare(state, p, r.triple, aggregation, false));
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct Tally {
  std::size_t efficacy_hits = 0, efficacy_total = 0;
  std::size_t generality_hits = 0, generality_total = 0;
  std::size_t locality_hits = 0, locality_total = 0;
};

Tally tally(std::span<const RequestScores> scores) {
  Tally t;
  auto count = [](const std::vector<PromptScore>& v, std::size_t& hits, std::size_t& total) {
    for (const auto& p : v) {
      hits += p.success ? 1 : 0;
      ++total;
    }
  };
  for (const auto& s : scores) {
    count(s.efficacy, t.efficacy_hits, t.efficacy_total);
    count(s.generality, t.generality_hits, t.generality_total);
    count(s.locality, t.locality_hits, t.locality_total);
  }
  return t;
}

}  // namespace

double efficacy_cf(const model::ModelState& state, std::span<const EditRequest> requests,
                   Aggregation aggregation) {
  std::size_t hits = 0;
  for (const auto& r : requests)
    hits += compare(state, r.prompts.base, r.triple, aggregation, true).success ? 1 : 0;
  return fraction(hits, requests.size());
}

double generality_cf(const model::ModelState& state, std::span<const EditRequest> requests,
                     Aggregation aggregation) {
  std::size_t hits = 0, total = 0;
  for (const auto& r : requests)
    for (const auto& p : r.prompts.paraphrases) {
      hits += compare(state, p, r.triple, aggregation, true).success ? 1 : 0;
      ++total;
    }
  return fraction(hits, total);
}

double locality_cf(const model::ModelState& state, std::span<const EditRequest> requests,
                   Aggregation aggregation) {
  std::size_t hits = 0, total = 0;
  for (const auto& r : requests)
    for (const auto& p : r.prompts.neighborhood) {
      hits += compare(state, p, r.triple, aggregation, false).success ? 1 : 0;
      ++total;
    }
  return fraction(hits, total);
}

double score(double efficacy, double generality, double locality, Unit unit) {
  const double hi = unit == Unit::kFraction ? 1.0 : 100.0;
  for (double v : {efficacy, generality, locality})
    if (!(v >= 0.0 && v <= hi))
      throw Error(ErrorCode::kOutOfRange, "score: component outside [0," +
                                              std::string(unit == Unit::kFraction ? "1" : "100") +
                                              "]");
  if (efficacy == 0.0 || generality == 0.0 || locality == 0.0) return 0.0;
  return 3.0 / (1.0 / efficacy + 1.0 / generality + 1.0 / locality);
}

double zsre_accuracy(const model::ModelState& state, std::span<const EditRequest> requests,
                     ZsreKind kind) {
  const auto& tok = state.tokenizer();
  std::size_t hits = 0, total = 0;
  for (const auto& r : requests) {
    std::vector<const std::string*> prompts;
    if (kind == ZsreKind::kEfficacy) prompts.push_back(&r.prompts.base);
    if (kind == ZsreKind::kGenerality)
      for (const auto& p : r.prompts.paraphrases) prompts.push_back(&p);
    if (kind == ZsreKind::kLocality)
      for (const auto& p : r.prompts.neighborhood) prompts.push_back(&p);
    const std::string& expected =
        kind == ZsreKind::kLocality ? r.triple.old_object : r.triple.new_object;
    const TokenSequence want = tok.encode(normalize_whitespace(expected));
    for (const auto* p : prompts) {
      const TokenSequence prompt = encode_prompt(tok, "", *p);
      const TokenSequence got = model::generate(state, prompt, want.size());
      hits += got == want ? 1 : 0;
      ++total;
    }
  }
  return fraction(hits, total);
}

double ngram_entropy(std::span<const std::string> words, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidConfig, "ngram_entropy: n must be >= 1");
  if (words.size() < n) return 0.0;
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i)
    ++counts[std::vector<std::string>(words.begin() + i, words.begin() + i + n)];
  const double total = static_cast<double>(words.size() - n + 1);
  std::vector<double> terms;
  for (const auto& [gram, c] : counts) {
    const double f = static_cast<double>(c) / total;
    terms.push_back(-f * std::log2(f));
  }
  std::sort(terms.begin(), terms.end());
  double h = 0.0;
  for (double t : terms) h += t;
  return h;
}

double text_fluency(std::span<const std::string> words) {
  return ngram_entropy(words, 2) / 3.0 + 2.0 * ngram_entropy(words, 3) / 3.0;
}

double fluency(const model::ModelState& state, std::span<const std::string> generation_prompts,
               std::size_t max_new) {
  if (max_new < 10) throw Error(ErrorCode::kInvalidConfig, "fluency: max_new must be >= 10");
  std::vector<double> values;
  for (const auto& p : generation_prompts) {
    const TokenSequence prompt = encode_prompt(state.tokenizer(), "", p);
    TokenSequence all = prompt;
    const TokenSequence gen = model::generate(state, prompt, max_new);
    all.insert(all.end(), gen.begin(), gen.end());
    const auto words = split_words(state.tokenizer().decode(all));
    values.push_back(text_fluency(words));
  }
  return stable_mean(std::move(values));
}

TfidfModel::TfidfModel(std::span<const std::string> documents) : documents_(documents.size()) {
  std::map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    auto words = split_words(doc);
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (auto& w : words) ++df[w];
  }
  df_.assign(df.begin(), df.end());
}

double TfidfModel::idf(const std::string& term) const {
  auto it = std::lower_bound(df_.begin(), df_.end(), term,
                             [](const auto& e, const std::string& t) { return e.first < t; });
  const std::size_t df = (it != df_.end() && it->first == term) ? it->second : 0;
  return std::log((1.0 + static_cast<double>(documents_)) / (1.0 + static_cast<double>(df))) + 1.0;
}

double TfidfModel::cosine(std::string_view a, std::string_view b) const {
  auto vectorize = [this](std::string_view text) {
    std::map<std::string, double> v;
    for (auto& w : split_words(text)) v[w] += 1.0;
    double sq = 0.0;
    for (auto& [term, x] : v) {
      x *= idf(term);
      sq += x * x;
    }
    const double n = std::sqrt(sq);
    if (n > 0.0)
      for (auto& [term, x] : v) x /= n;
    return v;
  };
  const auto va = vectorize(a);
  const auto vb = vectorize(b);
  double s = 0.0;
  for (const auto& [term, x] : va)
    if (auto it = vb.find(term); it != vb.end()) s += x * it->second;
  return std::clamp(s, 0.0, 1.0);
}

ConsistencyResult consistency(const model::ModelState& state, std::span<const EditRequest> requests,
                              std::span<const ReferenceText> references, std::size_t max_new) {
  std::vector<std::string> docs;
  std::map<std::string, std::string> by_id;
  for (const auto& r : references) {
    if (r.text.empty()) continue;
    docs.push_back(r.text);
    by_id[r.request_id] = r.text;
  }
  const TfidfModel tfidf(docs);
  ConsistencyResult out;
  std::vector<double> values;
  for (const auto& r : requests) {
    auto it = by_id.find(r.triple.id);
    if (it == by_id.end()) {
      out.skipped.push_back(r.triple.id);
      continue;
    }
    const TokenSequence prompt = encode_prompt(state.tokenizer(), "", r.prompts.base);
    const auto gen = state.tokenizer().decode(model::generate(state, prompt, max_new));
    const double c = tfidf.cosine(gen, it->second);
    out.per_request.emplace_back(r.triple.id, c);
    values.push_back(c);
  }
  if (!values.empty()) out.value = stable_mean(std::move(values));
  return out;
}

EditReport evaluate(const model::ModelState& state, std::span<const EditRequest> requests,
                    std::span<const std::string> generation_prompts,
                    std::span<const ReferenceText> references, const EvalOptions& options) {
  EditReport report;
  report.n_edits = requests.size();
  report.per_request = score_requests(state, requests, options.aggregation);
  const Tally t = tally(report.per_request);
  report.efficacy = fraction(t.efficacy_hits, t.efficacy_total);
  report.generality = fraction(t.generality_hits, t.generality_total);
  report.locality = fraction(t.locality_hits, t.locality_total);
  report.score = score(report.efficacy, report.generality, report.locality);
  for (const auto& s : report.per_request) {
    if (s.generality.empty())
      report.flags.push_back("request '" + s.request_id + "': no paraphrase prompts, excluded from generality");
    if (s.locality.empty())
      report.flags.push_back("request '" + s.request_id + "': no neighborhood prompts, excluded from locality");
  }
  if (options.compute_fluency && !generation_prompts.empty())
    report.fluency = fluency(state, generation_prompts, options.fluency_max_new);
  if (options.compute_consistency) {
    auto c = consistency(state, requests, references, options.consistency_max_new);
    report.consistency = c.value;
    report.consistency_per_request = std::move(c.per_request);
    for (const auto& id : c.skipped)
      report.flags.push_back("request '" + id + "': no reference text, skipped for consistency");
  }
  if (options.compute_zsre)
    report.zsre = ZsreScores{zsre_accuracy(state, requests, ZsreKind::kEfficacy),
                             zsre_accuracy(state, requests, ZsreKind::kGenerality),
                             zsre_accuracy(state, requests, ZsreKind::kLocality)};
  return report;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json prompts_json(const std::vector<PromptScore>& v) {
  auto arr = nlohmann::json::array();
  for (const auto& p : v)
    arr.push_back({{"prompt", p.prompt},
                   {"logprob_new", p.new_logprob},
                   {"logprob_old", p.old_logprob},
                   {"success", p.success}});
  return arr;
}

}  // namespace

std::string report_to_json(const EditReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["n_edits"] = report.n_edits;
  j["seed"] = report.seed;
  j["efficacy"] = report.efficacy;
  j["generality"] = report.generality;
  j["locality"] = report.locality;
  j["score"] = report.score;
  j["fluency"] = optional_json(report.fluency);
  j["consistency"] = optional_json(report.consistency);
  if (report.zsre)
    j["zsre"] = {{"efficacy", report.zsre->efficacy},
                 {"generality", report.zsre->generality},
                 {"locality", report.zsre->locality}};
  else
    j["zsre"] = nullptr;

  std::map<std::string, const edit::RequestDiagnostics*> diag;
  for (const auto& d : report.diagnostics) diag[d.request_id] = &d;
  std::map<std::string, double> cons(report.consistency_per_request.begin(),
                                     report.consistency_per_request.end());
  auto per = nlohmann::json::array();
  for (const auto& s : report.per_request) {
    nlohmann::json r{{"id", s.request_id},
                     {"efficacy", prompts_json(s.efficacy)},
                     {"generality", prompts_json(s.generality)},
                     {"locality", prompts_json(s.locality)}};
    auto c = cons.find(s.request_id);
    r["consistency"] = c == cons.end() ? nlohmann::json(nullptr) : nlohmann::json(c->second);
    if (auto d = diag.find(s.request_id); d != diag.end()) {
      const auto& x = *d->second;
      r["diagnostics"] = {{"hidden_norm", x.hidden_norm},
                          {"delta_norm", x.delta_norm},
                          {"delta_old_norm", x.delta_old_norm},
                          {"unlearn_norm", x.unlearn_norm},
                          {"masked_count", x.masked_count},
                          {"degenerate", x.degenerate},
                          {"initial_loss", x.initial_loss},
                          {"final_loss", x.final_loss},
                          {"old_initial_loss", x.old_initial_loss},
                          {"old_final_loss", x.old_final_loss}};
    }
    per.push_back(std::move(r));
  }
  j["per_request"] = std::move(per);

  auto layers = nlohmann::json::array();
  for (const auto& l : report.layers)
    layers.push_back({{"layer", l.layer},
                      {"delta_frobenius", l.delta_frobenius},
                      {"residual_frobenius", l.residual_frobenius}});
  j["layers"] = std::move(layers);
  j["flags"] = report.flags;
  j["config"] = nlohmann::json::parse(report.config_json);
  // wall_time lives in the metadata sidecar, never in the report body.
  return j.dump(2) + "\n";
}

void write_report(const EditReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write report '" + path.string() + "'");
  out << report_to_json(report);
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string csv_row(const EditReport& report, bool include_wall_time) {
  std::string row = csv_field(report.method) + "," + std::to_string(report.n_edits) + "," +
                    fixed(report.efficacy) + "," + fixed(report.generality) + "," +
                    fixed(report.locality) + "," + fixed(report.score) + ",";
  row += report.fluency ? fixed(*report.fluency) : "";
  row += ",";
  row += report.consistency ? fixed(*report.consistency) : "";
  row += "," + std::to_string(report.seed) + ",";
  if (include_wall_time && report.wall_time) row += fixed(*report.wall_time);
  return row;
}

}  // namespace come::eval
