#pragma once

// Pipeline commands behind the kgsp executable. Each command reads its
// inputs, writes its artifacts and prints a short report to `log`; errors
// surface as DomainError / IoError.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kgsp/synth.hpp"
#include "kgsp/trainer.hpp"

namespace kgsp {

namespace fs = std::filesystem;

enum class EvalMode { kBiased, kUnbiased, kBoth };

std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

struct ExperimentConfig {
  fs::path manifest;
  fs::path features;
  fs::path feasibility;  // optional for training, required when the mask is on
  fs::path checkpoint;   // eval input; train writes <out>/model.kgsm
  fs::path out;
  TrainConfig train;
  int depth = 3;
  double dropout = 0.5;
  EvalMode eval_mode = EvalMode::kBoth;
  Split eval_split = Split::kTest;
  bool mask = false;
  double mask_threshold = 0.0;
  std::optional<std::uint64_t> seed;
};

// Flat "key = value" lines; '#' starts a comment. Keys are the long CLI
// flag names without the leading dashes.
std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text,
                                                              const std::string& source);
std::vector<std::pair<std::string, std::string>> load_config(const fs::path& path);

// Throws IoError for a missing input path.
void require_file(const fs::path& path, const std::string& what);

void cmd_split_pczsl(const fs::path& manifest, std::uint64_t seed, const fs::path& out,
                     std::ostream& log);

void cmd_feasibility(const fs::path& embeddings, const fs::path& manifest,
                     const std::string& method, const fs::path& out, std::ostream& log);

// Writes <out>/model.kgsm and <out>/train_log.csv.
void cmd_train(const ExperimentConfig& config, std::ostream& log);

// Writes <out>/metrics_<mode>.csv and <out>/metrics_<mode>.txt for each
// requested mode.
void cmd_eval(const ExperimentConfig& config, std::ostream& log);

// Writes <out>/manifest.tsv, <out>/features.bin, <out>/feasibility.txt.
void cmd_synth(const SynthSpec& spec, const fs::path& out, std::ostream& log);

// Prints the table for a metrics CSV.
void cmd_report(const fs::path& metrics, std::ostream& log);

}  // namespace kgsp
