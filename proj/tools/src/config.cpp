#include <algorithm>

#include "come/cli.hpp"
#include "come/default_config.hpp"
#include "come/error.hpp"

namespace come::cli {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& message) {
  throw Error(ErrorCode::kInvalidConfig, "config: " + message);
}

const json& at(const json& j, const char* section, const char* key) {
  const auto& s = j.at(section);
  if (!s.contains(key)) bad(std::string("missing ") + section + "." + key);
  return s.at(key);
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  const auto& v = at(j, section, key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) bad(std::string(section) + "." + key + " must be a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) bad(std::string(section) + "." + key + " must be a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) bad(std::string(section) + "." + key + " must be a number");
    } else {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        bad(std::string(section) + "." + key + " must be a non-negative integer");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    bad(std::string(section) + "." + key + ": " + e.what());
  }
}

template <typename T>
std::vector<T> get_list(const json& j, const char* section, const char* key) {
  const auto& v = at(j, section, key);
  if (!v.is_array()) bad(std::string(section) + "." + key + " must be an array");
  std::vector<T> out;
  for (const auto& e : v) {
    if constexpr (std::is_floating_point_v<T>) {
      if (!e.is_number()) bad(std::string(section) + "." + key + " must hold numbers");
    } else {
      if (!e.is_number_integer() || e.get<long long>() < 0)
        bad(std::string(section) + "." + key + " must hold non-negative integers");
    }
    out.push_back(e.get<T>());
  }
  return out;
}

template <typename T>
void require_sorted(const std::vector<T>& v, const char* what) {
  if (v.empty()) bad(std::string(what) + " grid is empty");
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i - 1] < v[i])) bad(std::string(what) + " grid must be strictly ascending");
}

}  // namespace

json default_config() { return json::parse(kDefaultConfigJson); }

json merge_config(json base, const json& patch, const std::string& where) {
  if (!patch.is_object()) bad((where.empty() ? std::string("root") : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) bad("unknown key '" + path + "'");
    if (base[key].is_object())
      base[key] = merge_config(base[key], value, path);
    else
      base[key] = value;
  }
  return base;
}

RunConfig resolve_config(const json& j) {
  RunConfig c;
  c.effective = j;

  c.model.layer_count = get<std::size_t>(j, "model", "layer_count");
  c.model.head_count = get<std::size_t>(j, "model", "head_count");
  c.model.d_model = get<std::size_t>(j, "model", "d_model");
  c.model.d_mlp = get<std::size_t>(j, "model", "d_mlp");
  c.model.max_seq = get<std::size_t>(j, "model", "max_seq");
  c.model.seed = get<std::uint64_t>(j, "model", "seed");

  c.train.epochs = get<std::size_t>(j, "train", "epochs");
  c.train.batch_size = get<std::size_t>(j, "train", "batch_size");
  c.train.learning_rate = get<double>(j, "train", "learning_rate");
  c.train.seed = get<std::uint64_t>(j, "train", "seed");
  c.train.target_memorization = get<double>(j, "train", "target_memorization");
  c.fact_repetitions = get<std::size_t>(j, "train", "fact_repetitions");
  c.neighbor_repetitions = get<std::size_t>(j, "train", "neighbor_repetitions");
  c.train.validate();
  if (c.fact_repetitions < 1) bad("train.fact_repetitions must be >= 1");

  c.edit.mode = edit::parse_edit_mode(get<std::string>(j, "edit", "mode"));
  c.edit.target_layers = get_list<std::size_t>(j, "edit", "target_layers");
  c.edit.lambda = get<double>(j, "edit", "lambda");
  c.edit.covariance_samples = get<std::size_t>(j, "edit", "covariance_samples");
  c.edit.covariance_seed = get<std::uint64_t>(j, "edit", "covariance_seed");
  c.edit.alpha = get<double>(j, "edit", "alpha");
  c.edit.top_p = get<double>(j, "edit", "top_p");
  c.edit.ablation = edit::parse_ablation(get<std::string>(j, "edit", "ablation"));
  c.edit.pooled_mask = get<bool>(j, "edit", "pooled_mask");
  c.edit.recompute_between_layers = get<bool>(j, "edit", "recompute_between_layers");
  const json& opt = j.at("edit").at("optimizer");
  const json opt_view{{"optimizer", opt}};
  c.edit.opt.step_count = get<std::size_t>(opt_view, "optimizer", "step_count");
  c.edit.opt.learning_rate = get<double>(opt_view, "optimizer", "learning_rate");
  c.edit.opt.clamp_factor = get<double>(opt_view, "optimizer", "clamp_factor");
  c.edit.opt.seed = get<std::uint64_t>(opt_view, "optimizer", "seed");
  c.model.validate();
  c.edit.validate(c.model);

  c.eval.aggregation = eval::parse_aggregation(get<std::string>(j, "eval", "aggregation"));
  c.eval.compute_fluency = get<bool>(j, "eval", "fluency");
  c.eval.fluency_max_new = get<std::size_t>(j, "eval", "fluency_max_new");
  c.eval.compute_consistency = get<bool>(j, "eval", "consistency");
  c.eval.consistency_max_new = get<std::size_t>(j, "eval", "consistency_max_new");
  c.eval.compute_zsre = get<bool>(j, "eval", "zsre");
  if (c.eval.compute_fluency && c.eval.fluency_max_new < 10) bad("eval.fluency_max_new must be >= 10");

  c.schema = data::parse_schema(get<std::string>(j, "data", "schema"));
  c.lenient = get<bool>(j, "data", "lenient");
  c.synth.n_facts = get<std::size_t>(j, "data", "n_facts");
  c.synth.n_relations = get<std::size_t>(j, "data", "n_relations");
  c.synth.objects_per_relation = get<std::size_t>(j, "data", "objects_per_relation");
  c.synth.paraphrases_per_fact = get<std::size_t>(j, "data", "paraphrases_per_fact");
  c.synth.neighbors_per_fact = get<std::size_t>(j, "data", "neighbors_per_fact");
  c.synth.filler_phrases = get<std::size_t>(j, "data", "filler_phrases");
  c.synth.prefixes_per_fact = get<std::size_t>(j, "data", "prefixes_per_fact");
  c.synth.syllables_per_word = get<std::size_t>(j, "data", "syllables_per_word");
  c.synth.seed = get<std::uint64_t>(j, "data", "seed");
  c.synth.validate();

  c.dataset = get<std::string>(j, "paths", "dataset");
  c.checkpoint = get<std::string>(j, "paths", "checkpoint");
  c.out_dir = get<std::string>(j, "paths", "out_dir");
  if (c.out_dir.empty()) bad("paths.out_dir must not be empty");

  c.n_edits = get<std::size_t>(j, "run", "n_edits");
  c.seeds = get_list<std::uint64_t>(j, "run", "seeds");
  if (c.seeds.empty()) bad("run.seeds must not be empty");
  c.label = get<std::string>(j, "run", "label");
  c.write_wall_time = get<bool>(j, "run", "write_wall_time");

  const auto axis = get<std::string>(j, "sweep", "axis");
  if (axis == "alpha") c.sweep_axis = SweepAxis::kAlpha;
  else if (axis == "n_edits") c.sweep_axis = SweepAxis::kNEdits;
  else bad("sweep.axis must be 'alpha' or 'n_edits'");
  c.sweep_alpha = get_list<double>(j, "sweep", "alpha");
  c.sweep_n_edits = get_list<std::size_t>(j, "sweep", "n_edits");
  require_sorted(c.sweep_alpha, "sweep.alpha");
  require_sorted(c.sweep_n_edits, "sweep.n_edits");
  for (double a : c.sweep_alpha)
    if (!(a >= 0.0)) bad("sweep.alpha values must be >= 0");
  return c;
}

}  // namespace come::cli
