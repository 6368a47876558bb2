#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "come/datakit.hpp"
#include "come/edit_config.hpp"
#include "come/evalsuite.hpp"
#include "come/model.hpp"
#include "come/trainer.hpp"

namespace come::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

enum class SweepAxis { kAlpha, kNEdits };

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  std::size_t fact_repetitions = 4;
  std::size_t neighbor_repetitions = 4;
  edit::EditConfig edit;
  eval::EvalOptions eval;
  data::SynthSpec synth;
  data::Schema schema = data::Schema::kCanonical;
  bool lenient = false;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  std::size_t n_edits = 50;  // 0 = every record
  std::vector<std::uint64_t> seeds;
  std::string label;
  bool write_wall_time = false;
  SweepAxis sweep_axis = SweepAxis::kAlpha;
  std::vector<double> sweep_alpha;
  std::vector<std::size_t> sweep_n_edits;

  nlohmann::json effective;  // merged configuration, echoed into reports
};

nlohmann::json default_config();

// Overlays `patch` onto `base`. Keys absent from `base` are rejected so that
// typos in config files fail loudly.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& patch,
                            const std::string& where = "");

// Typed view of a merged configuration; throws kInvalidConfig on bad values.
RunConfig resolve_config(const nlohmann::json& merged);

// `args` holds the full command line, program name first.
int run(const std::vector<std::string>& args);

}  // namespace come::cli
