#pragma once

// Command implementations behind the `tcem` executable. Every command takes a
// resolved key=value configuration (config file overlaid with flags) and an
// output directory, and finishes by atomically writing `manifest.txt` there.
// A manifest can be fed back through --config to reproduce the run.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tcem/clustering.hpp"
#include "tcem/config.hpp"
#include "tcem/data.hpp"
#include "tcem/gradcheck.hpp"
#include "tcem/training.hpp"

namespace tcem::cli {

// git-describe style string baked in at build time.
std::string version();

// Keys read by each command. Unknown keys are carried into the manifest
// untouched but otherwise ignored.
SyntheticConfig synthetic_config(const KeyValueConfig& cfg);
TrainConfig train_config(const KeyValueConfig& cfg);
void store_train_config(const TrainConfig& tc, KeyValueConfig& cfg);

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t folds = 0;  // 0: 3/1/1 split; otherwise k-fold rotation
  std::size_t fold = 0;
};

// Splits a raw (unimputed, unnormalized) cohort, imputes each split and
// z-scores it with `stats`, or with train-split statistics when stats is null.
struct PreparedCohort {
  CohortSplit split;
  NormalizationStats stats;
};
PreparedCohort prepare_cohort(const Cohort& raw, const SplitSpec& spec,
                              const NormalizationStats* stats = nullptr);

struct RunManifest {
  std::string command;
  KeyValueConfig config;  // resolved configuration snapshot, including seed
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;
  std::vector<std::pair<std::string, double>> timings;  // seconds per phase
  std::vector<std::pair<std::string, std::string>> results;

  std::string format() const;
};

// Drops manifest bookkeeping keys so a manifest can serve as a config.
KeyValueConfig config_from_manifest(const KeyValueConfig& manifest);

struct EvalSummary {
  MetricsReport model;
  MetricsReport features_baseline;
  std::size_t visits = 0;
  std::size_t labeled_visits = 0;
  std::size_t k = 0;
};

// Formats the metrics report. Deterministic: contains no timings.
std::string format_metrics(const EvalSummary& s, const Vec& explained_ratio);

std::string scatter_svg(const Matrix& projected, std::span<const int> clusters,
                        std::size_t k);

void cmd_generate(const KeyValueConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_train(const KeyValueConfig& cfg, const std::filesystem::path& out, std::ostream& log);
EvalSummary cmd_eval(const KeyValueConfig& cfg, const std::filesystem::path& out,
                     std::ostream& log);
// Returns true when every tensor in both modes passes.
bool cmd_gradcheck(const KeyValueConfig& cfg, const std::filesystem::path& out,
                   std::ostream& log);

// Full command-line entry point. Exit codes: 0 success, 1 error (reported on
// `err` as `error_code=<code> <message>`), 2 gradient check failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tcem::cli
