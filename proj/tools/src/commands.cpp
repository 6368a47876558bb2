#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "come/checkpoint.hpp"
#include "come/cli.hpp"
#include "come/editengine.hpp"
#include "come/error.hpp"

namespace come::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::optional<std::string> config, mode, ablation, layers, out_dir, dataset, checkpoint, axis, label;
  std::optional<double> alpha, top_p, lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_edits;
  bool lenient = false;
};

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = std::make_shared<spdlog::logger>("come", std::make_shared<spdlog::sinks::stderr_sink_st>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  const char* env = std::getenv("COME_LOG_LEVEL");
  log->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
  return log;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidData:
    case ErrorCode::kSubjectNotFound:
      return kExitConfig;
    default:
      return kExitRuntime;
  }
}

void emit_error(std::string_view code, const std::string& message, int exit_code) {
  json j{{"error", {{"code", code}, {"message", message}, {"exit_code", exit_code}}}};
  std::cerr << j.dump() << "\n";
}

std::string read_file(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(missing, "cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes through a temporary so readers never observe half-written files.
void write_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + tmp.string() + "'");
    out << bytes;
    if (!out) throw Error(ErrorCode::kIo, "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::size_t> parse_layers(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig, "--layers: '" + text + "' is not a comma-separated index list");
    }
  }
  return out;
}

json flags_patch(const Flags& f, const std::string& command) {
  json p = json::object();
  if (f.mode) p["edit"]["mode"] = *f.mode;
  if (f.alpha) p["edit"]["alpha"] = *f.alpha;
  if (f.top_p) p["edit"]["top_p"] = *f.top_p;
  if (f.lambda) p["edit"]["lambda"] = *f.lambda;
  if (f.ablation) p["edit"]["ablation"] = *f.ablation;
  if (f.layers) p["edit"]["target_layers"] = parse_layers(*f.layers);
  if (f.out_dir) p["paths"]["out_dir"] = *f.out_dir;
  if (f.dataset) p["paths"]["dataset"] = *f.dataset;
  if (f.checkpoint) p["paths"]["checkpoint"] = *f.checkpoint;
  if (f.lenient) p["data"]["lenient"] = true;
  if (f.n_edits) p["run"]["n_edits"] = *f.n_edits;
  if (f.label) p["run"]["label"] = *f.label;
  if (f.axis) p["sweep"]["axis"] = *f.axis;
  if (f.seed) {
    if (command == "gen-data") {
      p["data"]["seed"] = *f.seed;
    } else if (command == "train") {
      p["train"]["seed"] = *f.seed;
      p["model"]["seed"] = *f.seed;
    } else {
      p["run"]["seeds"] = json::array({*f.seed});
    }
  }
  return p;
}

RunConfig load_config(const Flags& f, const std::string& command) {
  json merged = default_config();
  if (f.config) {
    json file;
    try {
      file = json::parse(read_file(*f.config, ErrorCode::kInvalidConfig));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kInvalidConfig, "config '" + *f.config + "' is not valid JSON: " + e.what());
    }
    merged = merge_config(merged, file);
  }
  merged = merge_config(merged, flags_patch(f, command));
  return resolve_config(merged);
}

void require_input(const fs::path& path, const char* what) {
  if (path.empty())
    throw Error(ErrorCode::kInvalidConfig, std::string(what) + " path not set (paths." + what + ")");
  if (!fs::exists(path))
    throw Error(ErrorCode::kInvalidConfig, std::string(what) + " not found: '" + path.string() + "'");
}

// Report echo: everything except file-system locations, so identical runs in
// different directories produce identical reports.
std::string config_echo(const RunConfig& cfg) {
  json e = cfg.effective;
  e.erase("paths");
  return e.dump();
}

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& bytes) {
    write_atomic(dir_ / name, bytes);
    files_[name] = {bytes.size(), fnv1a(bytes)};
  }

  void manifest(const std::string& command, const std::string& status, const RunConfig& cfg,
                json extra = json::object()) {
    json m;
    m["command"] = command;
    m["status"] = status;
    auto outs = json::array();
    for (const auto& [name, info] : files_)
      outs.push_back({{"file", name}, {"bytes", info.first}, {"fnv1a64", info.second}});
    m["outputs"] = outs;
    // Inputs by content; their locations go to the metadata sidecar.
    if (inputs_.is_null()) {
      inputs_ = json::object();
      for (const auto& [key, path] : {std::pair{"dataset", cfg.dataset}, {"checkpoint", cfg.checkpoint}}) {
        if (path.empty() || !fs::exists(path)) continue;
        const std::string bytes = read_file(path, ErrorCode::kIo);
        inputs_[key] = {{"bytes", bytes.size()}, {"fnv1a64", fnv1a(bytes)}};
      }
    }
    m["inputs"] = inputs_;
    m["config"] = json::parse(config_echo(cfg));
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_atomic(dir_ / "manifest.json", m.dump(2) + "\n");
  }

  // Run-specific facts (wall time, file locations); not listed in the manifest.
  void metadata(const RunConfig& cfg, double wall_time) {
    json m{{"wall_time_seconds", wall_time},
           {"paths", cfg.effective.contains("paths") ? cfg.effective["paths"] : json::object()}};
    write_atomic(dir_ / "metadata.json", m.dump(2) + "\n");
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, std::pair<std::size_t, std::string>> files_;
  json inputs_;
};

std::vector<data::DatasetRecord> load_records(const RunConfig& cfg) {
  require_input(cfg.dataset, "dataset");
  auto loaded = data::load_dataset_detailed(cfg.dataset, cfg.schema, cfg.lenient);
  for (const auto& issue : loaded.issues)
    logger()->warn("skipped record #{} (line {}): {}", issue.index, issue.line, issue.message);
  return std::move(loaded.records);
}

std::string method_label(const RunConfig& cfg, const edit::EditConfig& ec) {
  if (!cfg.label.empty()) return cfg.label;
  std::string m(edit::to_string(ec.mode));
  if (ec.mode == edit::EditMode::kCome && ec.ablation != edit::Ablation::kFull)
    m += "/" + std::string(edit::to_string(ec.ablation));
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string csv_file(const std::vector<eval::EditReport>& reports, bool wall) {
  std::string out(eval::kCsvHeader);
  out += "\n";
  for (const auto& r : reports) out += eval::csv_row(r, wall) + "\n";
  return out;
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const RunConfig& cfg) {
  auto log = logger();
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = data::generate_synthetic(cfg.synth);
  Outputs out(cfg.out_dir);
  out.write("dataset.json", data::serialize_dataset(records));
  out.metadata(cfg, seconds_since(t0));
  out.manifest("gen-data", "complete", cfg, {{"records", records.size()}});
  log->info("wrote {} records to {}", records.size(), (cfg.out_dir / "dataset.json").string());
  return kExitOk;
}

// ---------------------------------------------------------------- train

int cmd_train(const RunConfig& cfg) {
  auto log = logger();
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = load_records(cfg);
  const auto tok = data::build_tokenizer(records);
  const auto material = data::training_material(records);
  const auto corpus = data::build_training_corpus(tok, material, cfg.fact_repetitions,
                                                  cfg.neighbor_repetitions, cfg.train.seed);
  log->info("vocabulary {} words, corpus {} sequences", tok.size(), corpus.sequences.size());

  auto state = model::ModelState::initialize(cfg.model, tok);
  auto result = train::train(state, corpus, cfg.train, [&](std::size_t epoch, double loss) {
    log->debug("epoch {} loss {:.5f}", epoch + 1, loss);
  });
  const double mem = train::memorization_check(result.state, material.facts);
  const double mem_neighbors = train::memorization_check(result.state, material.neighbors);
  log->info("memorization {:.4f} (neighbors {:.4f})", mem, mem_neighbors);

  std::string loss_csv = "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, result.loss_trace[e]);
    loss_csv += buf;
  }
  json report{{"memorization", mem},
              {"neighbor_memorization", mem_neighbors},
              {"target_memorization", cfg.train.target_memorization},
              {"epochs", cfg.train.epochs},
              {"final_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()},
              {"config", json::parse(config_echo(cfg))}};

  Outputs out(cfg.out_dir);
  out.write("model.ckpt", model::serialize_checkpoint(result.state));
  out.write("train_loss.csv", loss_csv);
  out.write("train_report.json", report.dump(2) + "\n");
  out.metadata(cfg, seconds_since(t0));
  const bool ok = mem >= cfg.train.target_memorization;
  out.manifest("train", ok ? "complete" : "below_target", cfg);
  if (!ok) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "memorization %.4f below target %.4f", mem,
                  cfg.train.target_memorization);
    emit_error("memorization_below_target", buf, kExitRuntime);
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- edit / eval / sweep

struct Context {
  std::vector<data::DatasetRecord> records;
  model::ModelState state;
  train::Corpus corpus;
  std::map<std::pair<double, std::vector<std::size_t>>, edit::CovarianceMap> covariances;

  const edit::CovarianceMap& covariance_for(const edit::EditConfig& ec) {
    const auto key = std::make_pair(ec.lambda, ec.target_layers);
    auto it = covariances.find(key);
    if (it == covariances.end())
      it = covariances.emplace(key, edit::compute_covariances(state, ec, corpus.sequences)).first;
    return it->second;
  }
};

Context load_context(const RunConfig& cfg) {
  require_input(cfg.checkpoint, "checkpoint");
  auto records = load_records(cfg);
  auto state = model::load_checkpoint(cfg.checkpoint);
  auto material = data::training_material(records);
  auto corpus = data::build_training_corpus(state.tokenizer(), material, cfg.fact_repetitions,
                                            cfg.neighbor_repetitions, cfg.train.seed);
  return Context{std::move(records), std::move(state), std::move(corpus), {}};
}

struct PointResult {
  eval::EditReport report;
  model::ModelState state;
};

PointResult edit_point(Context& ctx, const RunConfig& cfg, const edit::EditConfig& ec,
                       std::size_t n_edits, std::uint64_t seed, const std::string& method) {
  auto log = logger();
  const auto t0 = std::chrono::steady_clock::now();
  const auto selected = data::select_records(ctx.records, n_edits, seed);
  const auto requests = data::to_requests(selected);
  auto batch = edit::edit_batch(ctx.state, requests, ec, ctx.covariance_for(ec));
  auto report = eval::evaluate(batch.state, requests, data::generation_prompts(selected),
                               data::references(selected), cfg.eval);
  report.method = method;
  report.seed = seed;
  report.diagnostics = std::move(batch.diagnostics);
  report.layers = std::move(batch.layers);
  json echo = json::parse(config_echo(cfg));
  echo["edit"]["alpha"] = ec.alpha;
  echo["run"]["n_edits"] = n_edits;
  echo["run"]["seeds"] = json::array({seed});
  report.config_json = echo.dump();
  report.wall_time = seconds_since(t0);
  log->info("{} N={} seed={}: efficacy {:.3f} generality {:.3f} locality {:.3f} score {:.3f}",
            method, report.n_edits, seed, report.efficacy, report.generality, report.locality,
            report.score);
  return {std::move(report), std::move(batch.state)};
}

int cmd_edit(const RunConfig& cfg) {
  auto ctx = load_context(cfg);
  const std::uint64_t seed = cfg.seeds.front();
  auto point = edit_point(ctx, cfg, cfg.edit, cfg.n_edits, seed, method_label(cfg, cfg.edit));
  // Everything is computed before the first byte is written.
  const std::string ckpt = model::serialize_checkpoint(point.state);
  const std::string report = eval::report_to_json(point.report);
  const std::string csv = csv_file({point.report}, cfg.write_wall_time);
  Outputs out(cfg.out_dir);
  out.write("edited.ckpt", ckpt);
  out.write("report.json", report);
  out.write("results.csv", csv);
  out.metadata(cfg, *point.report.wall_time);
  out.manifest("edit", "complete", cfg);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  auto log = logger();
  const auto t0 = std::chrono::steady_clock::now();
  require_input(cfg.checkpoint, "checkpoint");
  const auto records = load_records(cfg);
  const auto state = model::load_checkpoint(cfg.checkpoint);
  const std::uint64_t seed = cfg.seeds.front();
  const auto selected = data::select_records(records, cfg.n_edits, seed);
  const auto requests = data::to_requests(selected);
  auto report = eval::evaluate(state, requests, data::generation_prompts(selected),
                               data::references(selected), cfg.eval);
  report.method = cfg.label.empty() ? "eval" : cfg.label;
  report.seed = seed;
  report.config_json = config_echo(cfg);
  report.wall_time = seconds_since(t0);
  log->info("efficacy {:.3f} generality {:.3f} locality {:.3f} score {:.3f}", report.efficacy,
            report.generality, report.locality, report.score);
  Outputs out(cfg.out_dir);
  out.write("report.json", eval::report_to_json(report));
  out.write("results.csv", csv_file({report}, cfg.write_wall_time));
  out.metadata(cfg, *report.wall_time);
  out.manifest("eval", "complete", cfg);
  return kExitOk;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

int cmd_sweep(const RunConfig& cfg) {
  auto log = logger();
  const auto t0 = std::chrono::steady_clock::now();
  auto ctx = load_context(cfg);
  Outputs out(cfg.out_dir);
  fs::create_directories(out.dir() / "points");

  struct Point {
    std::string id;
    double alpha;
    std::size_t n_edits;
  };
  std::vector<Point> points;
  if (cfg.sweep_axis == SweepAxis::kAlpha) {
    for (double a : cfg.sweep_alpha) points.push_back({"alpha=" + format_value(a), a, cfg.n_edits});
  } else {
    for (auto n : cfg.sweep_n_edits)
      points.push_back({"n_edits=" + std::to_string(n), cfg.edit.alpha, n});
  }

  std::vector<eval::EditReport> rows;
  auto status = json::array();
  bool complete = true;
  std::string summary = "point,method,N_edits,efficacy,generality,locality,score,fluency,consistency,n_seeds\n";
  for (const auto& p : points) {
    edit::EditConfig ec = cfg.edit;
    ec.alpha = p.alpha;
    std::string method = method_label(cfg, ec);
    if (cfg.sweep_axis == SweepAxis::kAlpha) method += "(alpha=" + format_value(p.alpha) + ")";
    std::vector<eval::EditReport> done;
    for (auto seed : cfg.seeds) {
      json entry{{"point", p.id}, {"seed", seed}};
      try {
        auto r = edit_point(ctx, cfg, ec, p.n_edits, seed, method);
        const std::string name = "points/" + p.id + "_seed" + std::to_string(seed) + ".json";
        out.write(name, eval::report_to_json(r.report));
        entry["status"] = "complete";
        entry["report"] = name;
        done.push_back(r.report);
        rows.push_back(std::move(r.report));
      } catch (const Error& e) {
        complete = false;
        entry["status"] = "incomplete";
        entry["error"] = {{"code", error_code_name(e.code())}, {"message", e.what()}};
        log->error("point {} seed {} failed: {}", p.id, seed, e.what());
      }
      status.push_back(entry);
      out.write("sweep_results.csv", csv_file(rows, cfg.write_wall_time));
      out.manifest("sweep", "running", cfg, {{"points", status}});
    }
    if (done.empty()) continue;
    // Deterministic fold in seed order.
    auto mean = [&](auto field) {
      double s = 0.0;
      for (const auto& r : done) s += field(r);
      return s / static_cast<double>(done.size());
    };
    auto opt_mean = [&](auto field) -> std::string {
      double s = 0.0;
      for (const auto& r : done) {
        const std::optional<double> v = field(r);
        if (!v) return "";
        s += *v;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", s / static_cast<double>(done.size()));
      return buf;
    };
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f,%.6f,", p.id.c_str(), method.c_str(),
                  done.front().n_edits, mean([](const auto& r) { return r.efficacy; }),
                  mean([](const auto& r) { return r.generality; }),
                  mean([](const auto& r) { return r.locality; }),
                  mean([](const auto& r) { return r.score; }));
    summary += buf;
    summary += opt_mean([](const auto& r) { return r.fluency; }) + ",";
    summary += opt_mean([](const auto& r) { return r.consistency; }) + ",";
    summary += std::to_string(done.size()) + "\n";
  }
  out.write("sweep_summary.csv", summary);
  out.metadata(cfg, seconds_since(t0));
  out.manifest("sweep", complete ? "complete" : "incomplete", cfg, {{"points", status}});
  if (!complete) {
    emit_error("sweep_incomplete", "one or more sweep points failed; see manifest.json", kExitRuntime);
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Batch knowledge editing with conflict-free unlearning of outdated facts", "come"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&f](CLI::App* s) {
    s->add_option("--config", f.config, "JSON config overlay");
    s->add_option("--out-dir", f.out_dir, "Output directory");
    s->add_option("--seed", f.seed, "Seed (data seed for gen-data, model/train seed for train, run seed otherwise)");
    s->add_option("--dataset", f.dataset, "Dataset JSON");
    s->add_option("--lenient", f.lenient, "Skip invalid dataset records instead of failing")
        ->expected(0, 1)
        ->default_str("true");
  };
  auto editing = [&f](CLI::App* s) {
    s->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
    s->add_option("--mode", f.mode, "MEMIT | ROME | COME");
    s->add_option("--alpha", f.alpha, "Unlearning weight");
    s->add_option("--top-p", f.top_p, "Percentage of coordinates unlearned");
    s->add_option("--layers", f.layers, "Target layers, e.g. 1,2,3");
    s->add_option("--lambda", f.lambda, "Covariance weight");
    s->add_option("--ablation", f.ablation, "full | no_delta_old | no_delta_common | no_restriction");
    s->add_option("--n-edits", f.n_edits, "Number of records edited (0 = all)");
    s->add_option("--label", f.label, "Method label in reports");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  auto* trn = app.add_subcommand("train", "Train the toy model on a dataset");
  auto* edt = app.add_subcommand("edit", "Edit a batch of facts");
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* swp = app.add_subcommand("sweep", "Sweep alpha or the edit count");
  for (auto* s : {gen, trn, edt, evl, swp}) common(s);
  for (auto* s : {edt, evl, swp}) editing(s);
  swp->add_option("--axis", f.axis, "alpha | n_edits");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what(), kExitConfig);
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg = load_config(f, command);
    if (command == "gen-data") return cmd_gen_data(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "edit") return cmd_edit(cfg);
    if (command == "eval") return cmd_eval(cfg);
    return cmd_sweep(cfg);
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    emit_error(error_code_name(e.code()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    emit_error("internal", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

}  // namespace come::cli
