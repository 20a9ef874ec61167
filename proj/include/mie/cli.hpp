// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `mie` tool. Each command reads a config
// file, does its work, and writes deterministic artifacts (no timestamps).

#ifndef MIE_CLI_HPP
#define MIE_CLI_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mie/config.hpp"
#include "mie/data.hpp"
#include "mie/eval.hpp"
#include "mie/gradmod.hpp"
#include "mie/nn.hpp"
#include "mie/trainer.hpp"

namespace mie {

using json = nlohmann::ordered_json;

inline constexpr const char* kWeightedFusionNote =
    "weighted fusion = per-sample softmax of negative prediction entropy (confidence weighting)";

struct CliOptions {
  std::optional<std::uint64_t> seed;  // overrides the config seed
  std::optional<std::string> out;     // overrides the command's output path
};

inline json config_json(const RunConfig& rc) {
  json j = json::object();
  for (const auto& [k, v] : cfg::read_pairs(rc.to_text(), "<resolved>")) j[k] = v;
  return j;
}

inline json metadata_json(const RunConfig& rc, const std::string& kind) {
  json j;
  j["artifact"] = kArtifactVersion;
  j["kind"] = kind;
  j["label"] = rc.label();
  if (rc.train.ablation.sam_on) j["rho"] = rc.train.rho;
  if (rc.train.ablation.gm_on) j["tau"] = rc.train.gm.tau;
  j["fusion_note"] = kWeightedFusionNote;
  j["config"] = config_json(rc);
  return j;
}

inline json to_json(const Metrics& m) {
  json j;
  j["accuracy"] = m.accuracy;
  j["map"] = m.map;
  j["macro_f1"] = m.macro_f1;
  if (!m.map_excluded_classes.empty()) j["map_excluded_classes"] = m.map_excluded_classes;
  return j;
}

inline json to_json(const MetricsReport& r) {
  json j;
  j["fused_average"] = to_json(r.fused_average);
  j["fused_weighted"] = to_json(r.fused_weighted);
  json per = json::array();
  for (const auto& m : r.per_modality) per.push_back(to_json(m));
  j["per_modality"] = per;
  return j;
}

inline json to_json(const PhaseRecord& p) {
  json j;
  j["outer_iter"] = p.outer_iter;
  j["modality"] = p.modality;
  j["multi_accuracy"] = p.multi_accuracy;
  j["per_modality_accuracy"] = p.per_modality_accuracy;
  j["mean_train_loss"] = p.mean_train_loss;
  j["lr"] = p.lr;
  return j;
}

inline json to_json(const MeanStd& m) { return json{{"mean", m.mean}, {"stddev", m.stddev}}; }

inline json to_json(const MetricSummary& s) {
  return json{{"accuracy", to_json(s.accuracy)}, {"map", to_json(s.map)}, {"macro_f1", to_json(s.macro_f1)}};
}

/// One {modality, layer, max, mean} record per monitored layer.
inline json singular_json(const std::vector<SingularReport>& per_modality) {
  json arr = json::array();
  for (std::size_t j = 0; j < per_modality.size(); ++j)
    for (const auto& s : per_modality[j])
      arr.push_back(json{{"modality", j + 1}, {"layer", s.layer}, {"max", s.max}, {"mean", s.mean}});
  return arr;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline void warn_excluded(std::ostream& log, const std::string& what, const Metrics& m) {
  for (auto k : m.map_excluded_classes)
    log << "warning: " << what << ": class " << k << " has no positives in the evaluation split; excluded from MAP\n";
}

inline MultimodalDataset load_dataset_for(const RunConfig& rc) {
  if (!std::filesystem::exists(rc.data_path)) {
    throw std::runtime_error("dataset file not found: " + rc.data_path + " (set data.path or run gen-data)");
  }
  return load(rc.data_path);
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const std::string& config_path, const CliOptions& opt, std::ostream& out) {
  RunConfig rc = load_run_config(config_path);
  if (opt.seed) override_seed(rc, *opt.seed);
  const std::string path = opt.out.value_or(rc.data_path);
  const MultimodalDataset ds = generate(rc.data);
  save(ds, path);
  out << "wrote " << path << ": n=" << ds.size() << " m=" << ds.modalities() << " c=" << ds.num_classes << " dims=";
  for (std::size_t j = 0; j < ds.modalities(); ++j) out << (j ? "," : "") << ds.features[j].cols();
  out << " train=" << ds.indices(Split::train).size() << " val=" << ds.indices(Split::val).size()
      << " test=" << ds.indices(Split::test).size() << "\n";
  return 0;
}

inline int cmd_train(const std::string& config_path, const CliOptions& opt, std::ostream& out,
                     std::ostream& log = std::cerr) {
  RunConfig rc = load_run_config(config_path);
  if (opt.seed) override_seed(rc, *opt.seed);
  if (opt.out) rc.output_dir = *opt.out;
  const MultimodalDataset ds = load_dataset_for(rc);
  if (ds.modalities() != rc.data.dims.size()) {
    throw ValidationError("dataset has " + std::to_string(ds.modalities()) + " modalities but data.dims lists " +
                          std::to_string(rc.data.dims.size()));
  }
  TrainResult res = train(ds, rc.train);

  namespace fs = std::filesystem;
  const fs::path dir(rc.output_dir);
  fs::create_directories(dir);
  const json meta = metadata_json(rc, "train");
  write_text(dir / "metadata.json", meta.dump(2) + "\n");
  for (std::size_t j = 0; j < res.models.size(); ++j) {
    save_checkpoint((dir / ("model_" + std::to_string(j + 1) + ".ckpt")).string(), res.models[j]);
  }
  std::string trace = json{{"meta", meta}}.dump() + "\n";
  for (const auto& p : res.trace) trace += to_json(p).dump() + "\n";
  write_text(dir / "trace.jsonl", trace);

  json metrics{{"meta", meta}, {"metrics", to_json(res.final_metrics)}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  std::vector<SingularReport> sv;
  for (const auto& st : res.gm_states) sv.push_back(singular_report(st));
  write_text(dir / "singular.json", json{{"meta", meta}, {"singular", singular_json(sv)}}.dump(2) + "\n");

  warn_excluded(log, "fused_average", res.final_metrics.fused_average);
  const auto& fa = res.final_metrics.fused_average;
  const auto& fw = res.final_metrics.fused_weighted;
  out << "run '" << rc.label() << "' -> " << dir.string() << "\n"
      << std::fixed << std::setprecision(4) << "  average fusion : acc " << fa.accuracy << "  map " << fa.map
      << "  macro-f1 " << fa.macro_f1 << "\n"
      << "  weighted fusion: acc " << fw.accuracy << "  map " << fw.map << "  macro-f1 " << fw.macro_f1 << "\n";
  for (std::size_t j = 0; j < res.final_metrics.per_modality.size(); ++j) {
    const auto& m = res.final_metrics.per_modality[j];
    out << "  modality " << j + 1 << "     : acc " << m.accuracy << "  map " << m.map << "  macro-f1 " << m.macro_f1
        << "\n";
  }
  out.unsetf(std::ios::floatfield);
  return 0;
}

inline std::size_t worker_threads() {
  if (const char* env = std::getenv("MIE_THREADS")) {
    const auto n = std::strtoull(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

inline int cmd_ablate(const std::string& config_path, const std::string& grid_path, const CliOptions& opt,
                      std::ostream& out) {
  RunConfig rc = load_run_config(config_path);
  if (opt.seed) override_seed(rc, *opt.seed);
  if (opt.out) rc.output_dir = *opt.out;
  const GridSpec spec = parse_grid(cfg::read_file(grid_path), grid_path);
  const AblationGrid grid = expand_grid(rc, spec);
  const MultimodalDataset ds = load_dataset_for(rc);
  const AblationTable table = ablate(ds, grid, worker_threads());

  namespace fs = std::filesystem;
  const fs::path dir(rc.output_dir);
  fs::create_directories(dir);
  json meta = metadata_json(rc, "ablate");
  meta["grid_seeds"] = spec.seeds;

  std::string runs = json{{"meta", meta}}.dump() + "\n";
  for (const auto& r : table.runs) {
    json j{{"label", r.label}, {"seed", r.seed}, {"metrics", to_json(r.metrics)}, {"singular", singular_json(r.singular)}};
    runs += j.dump() + "\n";
  }
  write_text(dir / "runs.jsonl", runs);

  json cells = json::array();
  for (const auto& c : table.cells) {
    json per = json::array();
    for (const auto& p : c.per_modality) per.push_back(to_json(p));
    cells.push_back(json{{"label", c.label},
                         {"runs", c.runs},
                         {"fused_average", to_json(c.fused_average)},
                         {"fused_weighted", to_json(c.fused_weighted)},
                         {"per_modality", per}});
  }
  write_text(dir / "summary.json", json{{"meta", meta}, {"cells", cells}}.dump(2) + "\n");

  out << std::left << std::setw(36) << "variant";
  const std::size_t m = table.cells.empty() ? 0 : table.cells.front().per_modality.size();
  for (std::size_t j = 0; j < m; ++j) out << std::setw(18) << ("mod" + std::to_string(j + 1) + " acc");
  out << std::setw(18) << "multi acc" << std::setw(18) << "multi map" << "multi f1\n";
  out << std::fixed << std::setprecision(4);
  auto cell = [](const MeanStd& s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << s.mean << "±" << s.stddev;
    return os.str();
  };
  for (const auto& c : table.cells) {
    out << std::setw(36) << c.label;
    for (const auto& p : c.per_modality) out << std::setw(18) << cell(p.accuracy);
    out << std::setw(18) << cell(c.fused_average.accuracy) << std::setw(18) << cell(c.fused_average.map)
        << cell(c.fused_average.macro_f1) << "\n";
  }
  out.unsetf(std::ios::floatfield);
  out << std::right;
  return 0;
}

inline int cmd_landscape(const std::string& config_path, const std::string& checkpoint, const CliOptions& opt,
                         std::ostream& out) {
  RunConfig rc = load_run_config(config_path);
  if (opt.seed) override_seed(rc, *opt.seed);
  const std::string csv_path = opt.out.value_or(rc.output_dir + "/landscape.csv");
  const ModalityModel model = load_checkpoint(checkpoint);
  const MultimodalDataset ds = load_dataset_for(rc);
  const std::size_t j = rc.landscape.modality - 1;
  if (j >= ds.modalities()) throw ValidationError("landscape.modality exceeds the dataset's modality count");
  if (model.input_dim() != ds.features[j].cols()) {
    throw ValidationError("checkpoint expects " + std::to_string(model.input_dim()) + " input features but modality " +
                          std::to_string(j + 1) + " has " + std::to_string(ds.features[j].cols()));
  }
  auto idx = ds.indices(rc.landscape.split);
  if (idx.empty()) throw ValidationError("landscape split is empty");
  if (idx.size() > rc.landscape.samples) idx.resize(rc.landscape.samples);
  const Batch batch = ds.gather(j, idx);
  const LandscapeSlice slice = landscape_slice(model, batch, rc.landscape.radius, rc.landscape.points, rc.seed);

  const std::filesystem::path p(csv_path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ostringstream csv;
  write_landscape_csv(csv, slice);
  write_text(p, csv.str());
  json meta = metadata_json(rc, "landscape");
  meta["checkpoint"] = checkpoint;
  meta["samples"] = idx.size();
  write_text(p.string() + ".meta.json", meta.dump(2) + "\n");
  out << "wrote " << slice.cells.size() << " grid points to " << csv_path << "\n";
  return 0;
}

struct RunArtifacts {
  std::string dir;
  json metadata;
  json singular;
  std::vector<json> trace;
};

inline RunArtifacts read_run_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::vector<std::string> expected = {"metadata.json", "singular.json", "trace.jsonl"};
  std::vector<std::string> missing;
  for (const auto& f : expected)
    if (!fs::exists(fs::path(dir) / f)) missing.push_back(f);
  if (!missing.empty()) {
    std::string msg = "run directory " + dir + " is missing:";
    for (const auto& f : missing) msg += " " + f;
    msg += " (expected metadata.json, singular.json, trace.jsonl)";
    throw ValidationError(msg);
  }
  auto slurp = [&](const std::string& f) {
    std::ifstream is(fs::path(dir) / f);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  RunArtifacts a;
  a.dir = dir;
  try {
    a.metadata = json::parse(slurp("metadata.json"));
    a.singular = json::parse(slurp("singular.json")).at("singular");
    std::istringstream lines(slurp("trace.jsonl"));
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      if (!j.contains("meta")) a.trace.push_back(std::move(j));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed run artifact in " + dir + ": " + e.what());
  }
  return a;
}

/// Prints singular-value statistics side by side for every run directory,
/// then each run's per-phase accuracy table.
inline int cmd_report(const std::vector<std::string>& run_dirs, std::ostream& out) {
  if (run_dirs.empty()) throw ValidationError("report: give at least one run directory");
  std::vector<RunArtifacts> runs;
  for (const auto& d : run_dirs) runs.push_back(read_run_dir(d));

  out << "Singular values of the cumulative feature covariance\n";
  out << std::left << std::setw(10) << "modality" << std::setw(8) << "layer" << std::setw(8) << "stat";
  for (const auto& r : runs) out << std::setw(22) << r.metadata.value("label", r.dir);
  out << "\n" << std::fixed << std::setprecision(4);
  const json& ref = runs.front().singular;
  for (const auto& rec : ref) {
    for (const char* stat : {"max", "mean"}) {
      out << std::setw(10) << rec.at("modality").get<std::size_t>() << std::setw(8)
          << rec.at("layer").get<std::size_t>() << std::setw(8) << stat;
      for (const auto& r : runs) {
        std::string cell = "-";
        for (const auto& other : r.singular)
          if (other.at("modality") == rec.at("modality") && other.at("layer") == rec.at("layer")) {
            std::ostringstream os;
            os << std::fixed << std::setprecision(4) << other.at(stat).get<double>();
            cell = os.str();
          }
        out << std::setw(22) << cell;
      }
      out << "\n";
    }
  }
  for (const auto& r : runs) {
    out << "\nPhase trace: " << r.dir << " (" << r.metadata.value("label", "") << ")\n";
    out << std::setw(8) << "phase" << std::setw(8) << "outer" << std::setw(10) << "modality" << std::setw(12)
        << "multi acc";
    const std::size_t m = r.trace.empty() ? 0 : r.trace.front().at("per_modality_accuracy").size();
    for (std::size_t j = 0; j < m; ++j) out << std::setw(12) << ("mod" + std::to_string(j + 1) + " acc");
    out << "train loss\n";
    std::size_t phase = 0;
    for (const auto& p : r.trace) {
      out << std::setw(8) << ++phase << std::setw(8) << p.at("outer_iter").get<std::size_t>() << std::setw(10)
          << p.at("modality").get<std::size_t>() << std::setw(12) << p.at("multi_accuracy").get<double>();
      for (const auto& a : p.at("per_modality_accuracy")) out << std::setw(12) << a.get<double>();
      out << p.at("mean_train_loss").get<double>() << "\n";
    }
  }
  out.unsetf(std::ios::floatfield);
  out << std::right;
  return 0;
}

/// Exit code for an exception escaping a command: 1 for validation errors,
/// 2 for runtime, numeric, format and I/O errors.
inline int exit_code_for(const std::exception& e) {
  return dynamic_cast<const ValidationError*>(&e) != nullptr ? 1 : 2;
}

inline std::string error_json(const std::exception& e) {
  std::string kind = "runtime";
  if (dynamic_cast<const ValidationError*>(&e)) kind = "validation";
  else if (dynamic_cast<const NumericError*>(&e)) kind = "numeric";
  else if (dynamic_cast<const FormatError*>(&e)) kind = "format";
  return json{{"error", kind}, {"message", e.what()}}.dump();
}

}  // namespace mie

#endif  // MIE_CLI_HPP
