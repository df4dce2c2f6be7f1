#include "tcem/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tcem/errors.hpp"

namespace tcem {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string number_to_string(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

Cohort subset(const Cohort& cohort, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  Cohort out;
  out.feature_names = cohort.feature_names;
  out.label_vocab = cohort.label_vocab;
  out.norm = cohort.norm;
  out.normalized = cohort.normalized;
  out.patients.reserve(idx.size());
  for (std::size_t i : idx) out.patients.push_back(cohort.patients[i]);
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

bool PatientSequence::has_complete_labels() const {
  if (labels.size() != visits()) return false;
  return std::none_of(labels.begin(), labels.end(), [](int l) { return l == kMissingLabel; });
}

std::size_t PatientSequence::observed_count() const {
  return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), 1));
}

std::size_t Cohort::total_visits() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.visits();
  return n;
}

bool Cohort::has_labels() const {
  return !patients.empty() &&
         std::all_of(patients.begin(), patients.end(), [](const auto& p) { return p.has_labels(); });
}

void SyntheticConfig::validate() const {
  if (patients == 0) throw ConfigError("synthetic: patients must be positive");
  if (visits_min == 0 || visits_min > visits_max)
    throw ConfigError("synthetic: need 1 <= visits_min <= visits_max");
  if (features == 0 || stages == 0) throw ConfigError("synthetic: features and stages must be positive");
  if (!(noise > 0.0)) throw ConfigError("synthetic: noise scale must be > 0");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0))
    throw ConfigError("synthetic: missing_rate must lie in [0, 1)");
  if (transition.rows() != stages || transition.cols() != stages)
    throw ConfigError("synthetic: transition matrix must be " + shape_str(stages, stages) + ", got " +
                      transition.shape_str());
  for (std::size_t r = 0; r < stages; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < stages; ++c) {
      const double p = transition(r, c);
      if (!(p >= 0.0) || !std::isfinite(p))
        throw ConfigError("synthetic: transition entry (" + std::to_string(r) + "," +
                          std::to_string(c) + ") is not a probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw ConfigError("synthetic: transition row " + std::to_string(r) + " sums to " +
                        number_to_string(sum));
  }
  if (!means.empty() && (means.rows() != stages || means.cols() != features))
    throw ConfigError("synthetic: means must be " + shape_str(stages, features));
  if (means.empty() && stages > features)
    throw ConfigError("synthetic: generated means need stages <= features");
}

SyntheticConfig sep3_config() {
  SyntheticConfig c;
  c.transition = Matrix(3, 3, {0.8, 0.2, 0.0,  //
                               0.0, 0.8, 0.2,  //
                               0.0, 0.0, 1.0});
  return c;
}

Matrix separated_means(std::size_t stages, std::size_t features, double distance,
                       std::uint64_t seed) {
  if (stages > features) throw ConfigError("separated_means: stages must not exceed features");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Gram-Schmidt on random directions; orthonormal u_s give |a u_i - a u_j| = a sqrt(2).
  std::vector<Vec> basis;
  while (basis.size() < stages) {
    Vec v(features);
    for (double& x : v) x = normal(rng);
    for (const Vec& b : basis) axpy(-dot(v, b), b, v);
    const double n = norm2(v);
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  const double scale = distance / std::sqrt(2.0);
  Matrix means(stages, features);
  for (std::size_t s = 0; s < stages; ++s)
    for (std::size_t f = 0; f < features; ++f) means(s, f) = scale * basis[s][f];
  return means;
}

Cohort generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const Matrix means = config.means.empty()
                           ? separated_means(config.stages, config.features,
                                             config.separation * config.noise,
                                             config.seed ^ 0x9e3779b97f4a7c15ULL)
                           : config.means;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(config.visits_min, config.visits_max);

  Cohort cohort;
  for (std::size_t f = 0; f < config.features; ++f)
    cohort.feature_names.push_back("x" + std::to_string(f + 1));
  for (std::size_t s = 0; s < config.stages; ++s) cohort.label_vocab.push_back(std::to_string(s + 1));

  const int width = static_cast<int>(std::to_string(config.patients).size());
  for (std::size_t n = 0; n < config.patients; ++n) {
    PatientSequence p;
    std::string num = std::to_string(n + 1);
    p.id = "P" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
    const std::size_t T = length(rng);
    p.values = Matrix(T, config.features);
    p.observed.assign(T * config.features, 1);
    int stage = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) {
        const double u = unit(rng);
        double acc = 0.0;
        int next = static_cast<int>(config.stages) - 1;
        for (std::size_t s = 0; s < config.stages; ++s) {
          acc += config.transition(static_cast<std::size_t>(stage), s);
          if (u < acc) {
            next = static_cast<int>(s);
            break;
          }
        }
        // Guard against round-off landing on a zero-probability tail state.
        while (config.transition(static_cast<std::size_t>(stage), static_cast<std::size_t>(next)) == 0.0)
          --next;
        stage = next;
      }
      p.stages.push_back(stage);
      p.labels.push_back(stage);
      for (std::size_t f = 0; f < config.features; ++f) {
        const double value = means(static_cast<std::size_t>(stage), f) + config.noise * normal(rng);
        const bool missing = unit(rng) < config.missing_rate;
        p.values(t, f) = missing ? kNaN : value;
        p.observed[t * config.features + f] = missing ? 0 : 1;
      }
    }
    cohort.patients.push_back(std::move(p));
  }
  return cohort;
}

NormalizationStats compute_normalization(const Cohort& train) {
  const std::size_t F = train.features();
  NormalizationStats stats;
  stats.mean.assign(F, 0.0);
  stats.stddev.assign(F, 1.0);
  for (std::size_t f = 0; f < F; ++f) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& p : train.patients)
      for (std::size_t t = 0; t < p.visits(); ++t)
        if (p.is_observed(t, f)) {
          sum += p.values(t, f);
          ++count;
        }
    if (count == 0)
      throw DataError("feature '" + train.feature_names[f] +
                      "' is never observed in the training split");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto& p : train.patients)
      for (std::size_t t = 0; t < p.visits(); ++t)
        if (p.is_observed(t, f)) {
          const double dlt = p.values(t, f) - mean;
          ss += dlt * dlt;
        }
    const double sd = std::sqrt(ss / static_cast<double>(count));
    stats.mean[f] = mean;
    stats.stddev[f] = sd < 1e-12 ? 1.0 : sd;
  }
  return stats;
}

void normalize(Cohort& cohort, const NormalizationStats& stats) {
  if (cohort.normalized) throw StateError("cohort is already normalized");
  for (auto& p : cohort.patients)
    for (std::size_t t = 0; t < p.visits(); ++t)
      for (std::size_t f = 0; f < p.features(); ++f)
        p.values(t, f) = (p.values(t, f) - stats.mean[f]) / stats.stddev[f];
  cohort.normalized = true;
}

void denormalize(Cohort& cohort, const NormalizationStats& stats) {
  if (!cohort.normalized) throw StateError("cohort is not normalized");
  for (auto& p : cohort.patients)
    for (std::size_t t = 0; t < p.visits(); ++t)
      for (std::size_t f = 0; f < p.features(); ++f)
        p.values(t, f) = p.values(t, f) * stats.stddev[f] + stats.mean[f];
  cohort.normalized = false;
}

Cohort impute(const Cohort& cohort) {
  if (!cohort.norm) throw StateError("impute needs normalization statistics for column means");
  const NormalizationStats& stats = *cohort.norm;
  Cohort out = cohort;
  for (auto& p : out.patients) {
    for (std::size_t f = 0; f < p.features(); ++f) {
      bool seen = false;
      double last = 0.0;
      for (std::size_t t = 0; t < p.visits(); ++t) {
        if (p.is_observed(t, f)) {
          seen = true;
          last = p.values(t, f);
        } else if (seen) {
          p.values(t, f) = last;
        } else {
          p.values(t, f) = cohort.normalized ? 0.0 : stats.mean[f];
        }
      }
    }
  }
  return out;
}

CohortSplit split(const Cohort& cohort, std::array<std::size_t, 3> ratios, std::uint64_t seed) {
  const std::size_t n = cohort.patients.size();
  if (n < 5) throw ArgumentError("split needs at least 5 patients, got " + std::to_string(n));
  const std::size_t total = ratios[0] + ratios[1] + ratios[2];
  if (total == 0) throw ArgumentError("split ratios must not all be zero");
  const auto share = [&](std::size_t r) {
    return static_cast<std::size_t>(
        std::floor(static_cast<double>(n * r) / static_cast<double>(total) + 0.5));
  };
  const std::size_t n_train = share(ratios[0]);
  const std::size_t n_val = std::min(share(ratios[1]), n - n_train);

  const auto idx = shuffled_indices(n, seed);
  CohortSplit s;
  s.train = subset(cohort, {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)});
  s.val = subset(cohort, {idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                          idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val)});
  s.test = subset(cohort, {idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end()});
  return s;
}

CohortSplit kfold_split(const Cohort& cohort, std::size_t k, std::size_t fold,
                        std::uint64_t seed) {
  const std::size_t n = cohort.patients.size();
  if (k < 3) throw ArgumentError("k-fold needs k >= 3");
  if (fold >= k) throw ArgumentError("fold index " + std::to_string(fold) + " out of range");
  if (n < k) throw ArgumentError("k-fold needs at least k patients");
  const auto idx = shuffled_indices(n, seed);
  std::vector<std::size_t> train, val, test;
  const std::size_t val_fold = (fold + 1) % k;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t f = pos * k / n;
    if (f == fold)
      test.push_back(idx[pos]);
    else if (f == val_fold)
      val.push_back(idx[pos]);
    else
      train.push_back(idx[pos]);
  }
  return {subset(cohort, train), subset(cohort, val), subset(cohort, test)};
}

Cohort load_long_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);
  if (header.size() < 3 || header[0] != "patient_id" || header[1] != "visit_index")
    throw ParseError(path.string() + ": header must start with patient_id,visit_index");
  const bool has_label = header[2] == "label";
  const std::size_t first_feature = has_label ? 3 : 2;
  if (header.size() <= first_feature) throw ParseError(path.string() + ": no feature columns");

  Cohort cohort;
  for (std::size_t c = first_feature; c < header.size(); ++c) {
    if (header[c].rfind("f_", 0) != 0 || header[c].size() == 2)
      throw ParseError(path.string() + ": feature column " + std::to_string(c + 1) +
                       " must be named f_<name>, got '" + header[c] + "'");
    cohort.feature_names.push_back(header[c].substr(2));
  }
  const std::size_t F = cohort.feature_names.size();

  struct Row {
    long long visit;
    std::size_t line_no;
    std::string label;
    Vec values;
    std::vector<std::uint8_t> observed;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError(path.string() + ": row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, header has " +
                       std::to_string(header.size()));
    Row row;
    row.line_no = line_no;
    if (fields[0].empty())
      throw ParseError(path.string() + ": row " + std::to_string(line_no) + " has no patient_id");
    if (!parse_int(fields[1], row.visit) || row.visit < 0)
      throw ParseError(path.string() + ": row " + std::to_string(line_no) + " column 2: visit_index '" +
                       fields[1] + "' is not a non-negative integer");
    if (has_label) row.label = fields[2];
    row.values.resize(F);
    row.observed.resize(F);
    for (std::size_t f = 0; f < F; ++f) {
      const std::string& cell = fields[first_feature + f];
      if (cell.empty()) {
        row.values[f] = kNaN;
        row.observed[f] = 0;
      } else if (double v; parse_double(cell, v) && std::isfinite(v)) {
        row.values[f] = v;
        row.observed[f] = 1;
      } else {
        throw ParseError(path.string() + ": row " + std::to_string(line_no) + " column " +
                         std::to_string(first_feature + f + 1) + ": '" + cell + "' is not numeric");
      }
    }
    auto [it, inserted] = rows.try_emplace(fields[0]);
    if (inserted) order.push_back(fields[0]);
    it->second.push_back(std::move(row));
  }

  // Label vocabulary: numeric order when every label is a number.
  std::set<std::string> label_set;
  for (const auto& [id, rs] : rows)
    for (const auto& r : rs)
      if (!r.label.empty()) label_set.insert(r.label);
  cohort.label_vocab.assign(label_set.begin(), label_set.end());
  const bool numeric = std::all_of(label_set.begin(), label_set.end(), [](const std::string& s) {
    double v;
    return parse_double(s, v);
  });
  if (numeric) {
    std::stable_sort(cohort.label_vocab.begin(), cohort.label_vocab.end(),
                     [](const std::string& a, const std::string& b) {
                       double x = 0, y = 0;
                       parse_double(a, x);
                       parse_double(b, y);
                       return x < y;
                     });
  }
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < cohort.label_vocab.size(); ++i)
    label_index[cohort.label_vocab[i]] = static_cast<int>(i);

  for (const auto& id : order) {
    auto& rs = rows[id];
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.visit < b.visit; });
    for (std::size_t i = 1; i < rs.size(); ++i) {
      if (rs[i].visit == rs[i - 1].visit)
        throw DataError(path.string() + ": row " + std::to_string(std::max(rs[i].line_no, rs[i - 1].line_no)) +
                        " duplicates visit " + std::to_string(rs[i].visit) + " of patient " + id);
    }
    PatientSequence p;
    p.id = id;
    p.values = Matrix(rs.size(), F);
    p.observed.resize(rs.size() * F);
    for (std::size_t t = 0; t < rs.size(); ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        p.values(t, f) = rs[t].values[f];
        p.observed[t * F + f] = rs[t].observed[f];
      }
      p.visit_ids.push_back(rs[t].visit);
      if (has_label)
        p.labels.push_back(rs[t].label.empty() ? kMissingLabel : label_index[rs[t].label]);
    }
    cohort.patients.push_back(std::move(p));
  }
  return cohort;
}

std::string format_long_csv(const Cohort& cohort) {
  const bool with_labels = cohort.has_labels();
  std::ostringstream os;
  os << "patient_id,visit_index";
  if (with_labels) os << ",label";
  for (const auto& name : cohort.feature_names) os << ",f_" << name;
  os << '\n';
  for (const auto& p : cohort.patients) {
    for (std::size_t t = 0; t < p.visits(); ++t) {
      os << p.id << ',' << p.visit_id(t);
      if (with_labels) {
        os << ',';
        if (p.labels[t] != kMissingLabel) os << cohort.label_vocab.at(static_cast<std::size_t>(p.labels[t]));
      }
      for (std::size_t f = 0; f < p.features(); ++f) {
        os << ',';
        if (p.is_observed(t, f)) os << number_to_string(p.values(t, f));
      }
      os << '\n';
    }
  }
  return os.str();
}

void write_long_csv(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_long_csv(cohort);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace tcem
