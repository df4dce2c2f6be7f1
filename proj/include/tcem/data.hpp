#pragma once

// Cohorts of visit-ordered patient sequences: synthetic generation, long-format
// CSV I/O, imputation, z-score normalization and patient-level splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tcem/matrix.hpp"

namespace tcem {

inline constexpr int kMissingLabel = -1;

struct PatientSequence {
  std::string id;
  Matrix values;                 // T x F; NaN where unobserved until imputed
  std::vector<std::uint8_t> observed;  // T*F row-major, original observation mask
  std::vector<int> labels;       // empty, or one per visit (kMissingLabel if absent)
  std::vector<int> stages;       // synthetic ground truth, may be empty
  std::vector<long long> visit_ids;  // source visit_index per visit; empty means 0..T-1

  std::size_t visits() const { return values.rows(); }
  std::size_t features() const { return values.cols(); }
  bool is_observed(std::size_t t, std::size_t f) const { return observed[t * features() + f] != 0; }
  bool has_labels() const { return !labels.empty(); }
  bool has_complete_labels() const;
  long long visit_id(std::size_t t) const {
    return visit_ids.empty() ? static_cast<long long>(t) : visit_ids[t];
  }
  std::size_t observed_count() const;
};

struct NormalizationStats {
  Vec mean;
  Vec stddev;
};

struct Cohort {
  std::vector<PatientSequence> patients;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_vocab;
  std::optional<NormalizationStats> norm;
  bool normalized = false;  // values are z-scores under `norm`

  std::size_t features() const { return feature_names.size(); }
  std::size_t total_visits() const;
  bool has_labels() const;
};

struct SyntheticConfig {
  std::size_t patients = 200;
  std::size_t visits_min = 10;
  std::size_t visits_max = 10;
  std::size_t features = 10;
  std::size_t stages = 3;
  Matrix transition;  // S x S, row-stochastic
  Matrix means;       // S x F; generated from `separation` when empty
  double noise = 1.0;
  double separation = 4.0;  // pairwise mean distance in units of `noise`
  double missing_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// The "sep3" benchmark: 3 left-to-right stages, 10 features, 200 patients of
// 10 visits, stage means 4 noise units apart, 10% missing.
SyntheticConfig sep3_config();

Matrix separated_means(std::size_t stages, std::size_t features, double distance,
                       std::uint64_t seed);

Cohort generate_synthetic(const SyntheticConfig& config);

// Per-feature mean/std over observed entries. Throws DataError naming any
// feature with no observation.
NormalizationStats compute_normalization(const Cohort& train);

void normalize(Cohort& cohort, const NormalizationStats& stats);
void denormalize(Cohort& cohort, const NormalizationStats& stats);

// Last observation carried forward; leading gaps take the column mean.
// Requires cohort.norm. Observed entries and the original mask are untouched.
Cohort impute(const Cohort& cohort);

struct CohortSplit {
  Cohort train, val, test;
};

CohortSplit split(const Cohort& cohort, std::array<std::size_t, 3> ratios, std::uint64_t seed);
inline CohortSplit split(const Cohort& cohort, std::uint64_t seed) {
  return split(cohort, {3, 1, 1}, seed);
}

// Fold `fold` of a k-fold rotation: test = fold, val = fold+1 (mod k),
// train = the rest. With k = 5 this is a 3/1/1 split.
CohortSplit kfold_split(const Cohort& cohort, std::size_t k, std::size_t fold,
                        std::uint64_t seed);

Cohort load_long_csv(const std::filesystem::path& path);
void write_long_csv(const Cohort& cohort, const std::filesystem::path& path);
std::string format_long_csv(const Cohort& cohort);

}  // namespace tcem
