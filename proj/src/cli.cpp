#include "tcem/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>

#include "tcem/batch.hpp"
#include "tcem/checkpoint.hpp"
#include "tcem/errors.hpp"
#include "tcem/io.hpp"
#include "tcem/model_check.hpp"

#ifndef TCEM_VERSION
#define TCEM_VERSION "unknown"
#endif

namespace tcem::cli {

namespace fs = std::filesystem;

namespace {

class PhaseTimer {
 public:
  PhaseTimer() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

std::string join_hex(const Vec& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += hexfloat(v[i]);
  }
  return out;
}

Vec parse_hex_list(const std::string& s, const std::string& what) {
  Vec out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw CompatibilityError("checkpoint metadata '" + what + "' has a malformed number: " + tok);
    out.push_back(v);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory " + dir.string() +
                  (ec ? ": " + ec.message() : std::string()));
}

std::string required(const KeyValueConfig& cfg, const std::string& key, const std::string& hint) {
  auto v = cfg.get(key);
  if (!v || v->empty()) throw ConfigError("missing required setting '" + key + "' (" + hint + ")");
  return *v;
}

SplitSpec split_spec(const KeyValueConfig& cfg, std::uint64_t seed_default) {
  SplitSpec s;
  s.seed = cfg.get_u64("split_seed", seed_default);
  s.folds = cfg.get_size("folds", 0);
  s.fold = cfg.get_size("fold", 0);
  if ((s.folds > 0 && s.folds < 3) || (s.folds >= 3 && s.fold >= s.folds))
    throw ConfigError("folds must be 0 (3/1/1 split) or >= 3 with fold < folds");
  return s;
}

void store_split(const SplitSpec& s, KeyValueConfig& cfg) {
  cfg.set("split_seed", std::to_string(s.seed));
  cfg.set("folds", std::to_string(s.folds));
  cfg.set("fold", std::to_string(s.fold));
}

const Cohort& pick_split(const CohortSplit& sp, const std::string& which) {
  if (which == "test") return sp.test;
  if (which == "val") return sp.val;
  if (which == "train") return sp.train;
  throw ConfigError("eval_split must be one of train, val, test; got '" + which + "'");
}

// Reference label per visit in patient order; kMissingLabel where unknown.
std::vector<int> reference_labels(const Cohort& c) {
  std::vector<int> out;
  out.reserve(c.total_visits());
  for (const auto& p : c.patients) {
    for (std::size_t t = 0; t < p.visits(); ++t)
      out.push_back(p.has_labels() ? p.labels[t] : kMissingLabel);
  }
  return out;
}

Matrix stack_features(const Cohort& c) {
  Matrix out(c.total_visits(), c.features());
  std::size_t r = 0;
  for (const auto& p : c.patients) {
    for (std::size_t t = 0; t < p.visits(); ++t, ++r) {
      for (std::size_t f = 0; f < c.features(); ++f) out(r, f) = p.values(t, f);
    }
  }
  return out;
}

MetricsReport labeled_metrics(const std::vector<int>& assignments, const std::vector<int>& labels) {
  std::vector<int> a, y;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kMissingLabel) continue;
    a.push_back(assignments[i]);
    y.push_back(labels[i]);
  }
  return evaluate_clustering(a, y);
}

}  // namespace

std::string version() { return TCEM_VERSION; }

SyntheticConfig synthetic_config(const KeyValueConfig& cfg) {
  const std::string preset = cfg.get_string("preset", "sep3");
  if (preset != "sep3") throw ConfigError("unknown synthetic preset '" + preset + "'");
  SyntheticConfig sc = sep3_config();
  sc.patients = cfg.get_size("patients", sc.patients);
  const std::size_t visits = cfg.get_size("visits", sc.visits_min);
  sc.visits_min = cfg.get_size("visits_min", visits);
  sc.visits_max = cfg.get_size("visits_max", std::max(visits, sc.visits_min));
  sc.features = cfg.get_size("features", sc.features);
  sc.stages = cfg.get_size("stages", sc.stages);
  sc.noise = cfg.get_double("noise", sc.noise);
  sc.separation = cfg.get_double("separation", sc.separation);
  sc.missing_rate = cfg.get_double("missing_rate", sc.missing_rate);
  sc.seed = cfg.get_u64("seed", sc.seed);
  const double stay = cfg.get_double("stay_probability", 0.8);
  if (!(stay >= 0.0 && stay <= 1.0)) throw ConfigError("stay_probability must lie in [0, 1]");
  sc.transition = Matrix(sc.stages, sc.stages);
  for (std::size_t s = 0; s < sc.stages; ++s) {
    if (s + 1 < sc.stages) {
      sc.transition(s, s) = stay;
      sc.transition(s, s + 1) = 1.0 - stay;
    } else {
      sc.transition(s, s) = 1.0;
    }
  }
  sc.validate();
  return sc;
}

TrainConfig train_config(const KeyValueConfig& cfg) {
  TrainConfig tc;
  tc.mode = parse_mode(cfg.get_string("mode", to_string(tc.mode)));
  tc.anneal_steps = cfg.get_size("anneal_steps", tc.anneal_steps);
  tc.learning_rate = cfg.get_double("learning_rate", tc.learning_rate);
  tc.batch_size = cfg.get_size("batch_size", tc.batch_size);
  tc.epochs = cfg.get_size("epochs", tc.epochs);
  tc.hidden = cfg.get_size("hidden", tc.hidden);
  tc.latent = cfg.get_size("latent", tc.latent);
  tc.memory_slots = cfg.get_size("memory_slots", tc.memory_slots);
  tc.memory_width = cfg.get_size("memory_width", tc.memory_width);
  tc.label_dim = cfg.get_size("label_dim", tc.label_dim);
  tc.clusters = cfg.get_size("k", tc.clusters);
  tc.seed = cfg.get_u64("seed", tc.seed);
  tc.workers = static_cast<int>(cfg.get_size("workers", 1));
  tc.score = parse_score_mode(cfg.get_string("score", to_string(tc.score)));
  tc.prior = parse_prior(cfg.get_string("prior", to_string(tc.prior)));
  tc.global_memory = parse_global_memory(cfg.get_string("global_memory", to_string(tc.global_memory)));
  tc.validate();
  return tc;
}

void store_train_config(const TrainConfig& tc, KeyValueConfig& cfg) {
  cfg.set("mode", to_string(tc.mode));
  cfg.set("anneal_steps", std::to_string(tc.anneal_steps));
  cfg.set("learning_rate", format_double(tc.learning_rate));
  cfg.set("batch_size", std::to_string(tc.batch_size));
  cfg.set("epochs", std::to_string(tc.epochs));
  cfg.set("hidden", std::to_string(tc.hidden));
  cfg.set("latent", std::to_string(tc.latent));
  cfg.set("memory_slots", std::to_string(tc.memory_slots));
  cfg.set("memory_width", std::to_string(tc.memory_width));
  cfg.set("label_dim", std::to_string(tc.label_dim));
  cfg.set("k", std::to_string(tc.clusters));
  cfg.set("seed", std::to_string(tc.seed));
  cfg.set("workers", std::to_string(tc.workers));
  cfg.set("score", to_string(tc.score));
  cfg.set("prior", to_string(tc.prior));
  cfg.set("global_memory", to_string(tc.global_memory));
}

PreparedCohort prepare_cohort(const Cohort& raw, const SplitSpec& spec,
                              const NormalizationStats* stats) {
  if (raw.normalized) throw StateError("prepare_cohort expects raw feature values");
  PreparedCohort out;
  out.split = spec.folds == 0 ? split(raw, spec.seed)
                              : kfold_split(raw, spec.folds, spec.fold, spec.seed);
  out.stats = stats ? *stats : compute_normalization(out.split.train);
  if (out.stats.mean.size() != raw.features())
    throw CompatibilityError("normalization statistics cover " +
                             std::to_string(out.stats.mean.size()) + " features, data has " +
                             std::to_string(raw.features()));
  for (Cohort* c : {&out.split.train, &out.split.val, &out.split.test}) {
    c->norm = out.stats;
    *c = impute(*c);
    normalize(*c, out.stats);
  }
  return out;
}

std::string RunManifest::format() const {
  KeyValueConfig m = config;
  m.set("manifest.command", command);
  m.set("manifest.version", version());
  for (const auto& [k, v] : inputs) m.set("manifest.input." + k, v);
  for (const auto& [k, v] : outputs) m.set("manifest.output." + k, v);
  for (const auto& [k, v] : results) m.set("manifest.result." + k, v);
  for (const auto& [k, v] : timings) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    m.set("manifest.timing." + k + "_seconds", buf);
  }
  return m.format();
}

KeyValueConfig config_from_manifest(const KeyValueConfig& manifest) {
  KeyValueConfig out;
  for (const auto& [k, v] : manifest.entries()) {
    if (k.rfind("manifest.", 0) == 0) continue;
    out.set(k, v);
  }
  return out;
}

std::string format_metrics(const EvalSummary& s, const Vec& explained_ratio) {
  std::ostringstream os;
  auto line = [&](const char* metric, double value, const char* source) {
    os << "metric=" << metric << " value=" << format_double(value) << " k=" << s.k
       << " n=" << s.labeled_visits << " source=" << source << '\n';
  };
  line("purity", s.model.purity, "model");
  line("nmi", s.model.nmi, "model");
  line("ari", s.model.ari, "model");
  line("purity", s.features_baseline.purity, "features_baseline");
  line("nmi", s.features_baseline.nmi, "features_baseline");
  line("ari", s.features_baseline.ari, "features_baseline");
  for (std::size_t i = 0; i < explained_ratio.size(); ++i)
    os << "metric=explained_variance_ratio value=" << format_double(explained_ratio[i])
       << " component=pc" << (i + 1) << " source=model\n";
  return os.str();
}

std::string scatter_svg(const Matrix& projected, std::span<const int> clusters, std::size_t k) {
  if (projected.cols() < 2 || projected.rows() != clusters.size())
    throw DimensionError("scatter_svg: need n x 2 coordinates and n cluster ids");
  static const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e",
                                   "#e6ab02", "#a6761d", "#666666", "#1f78b4", "#b15928"};
  constexpr double W = 640, H = 480, M = 48;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (projected.rows() > 0) {
    x0 = x1 = projected(0, 0);
    y0 = y1 = projected(0, 1);
    for (std::size_t i = 0; i < projected.rows(); ++i) {
      x0 = std::min(x0, projected(i, 0));
      x1 = std::max(x1, projected(i, 0));
      y0 = std::min(y0, projected(i, 1));
      y1 = std::max(y1, projected(i, 1));
    }
  }
  const double sx = (W - 2 * M) / std::max(x1 - x0, 1e-12);
  const double sy = (H - 2 * M) / std::max(y1 - y0, 1e-12);
  std::ostringstream os;
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
        "viewBox=\"0 0 640 480\">\n";
  os << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.0f\" y=\"%.0f\" width=\"%.0f\" height=\"%.0f\" fill=\"none\" "
                "stroke=\"#999\"/>\n",
                M, M, W - 2 * M, H - 2 * M);
  os << buf;
  os << "<text x=\"320\" y=\"470\" text-anchor=\"middle\" font-size=\"14\">pc1</text>\n";
  os << "<text x=\"14\" y=\"240\" text-anchor=\"middle\" font-size=\"14\" "
        "transform=\"rotate(-90 14 240)\">pc2</text>\n";
  for (std::size_t i = 0; i < projected.rows(); ++i) {
    const double px = M + (projected(i, 0) - x0) * sx;
    const double py = H - M - (projected(i, 1) - y0) * sy;
    const int c = clusters[i];
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"0.75\"/>\n",
                  px, py, kPalette[static_cast<std::size_t>(std::max(c, 0)) % 10]);
    os << buf;
  }
  for (std::size_t c = 0; c < k; ++c) {
    const double y = M + 16.0 * static_cast<double>(c);
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.0f\" cy=\"%.0f\" r=\"5\" fill=\"%s\"/>"
                  "<text x=\"%.0f\" y=\"%.0f\" font-size=\"12\">cluster %zu</text>\n",
                  W - M - 70, y + 4, kPalette[c % 10], W - M - 60, y + 8, c);
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

void cmd_generate(const KeyValueConfig& cfg, const fs::path& out, std::ostream& log) {
  PhaseTimer timer;
  const SyntheticConfig sc = synthetic_config(cfg);
  const Cohort cohort = generate_synthetic(sc);
  const double t_gen = timer.lap();

  ensure_directory(out);
  const fs::path csv = out / "cohort.csv";
  write_file_atomic(csv, format_long_csv(cohort));
  const double t_write = timer.lap();

  RunManifest m;
  m.command = "generate";
  m.config = cfg;
  m.config.set("preset", cfg.get_string("preset", "sep3"));
  m.config.set("patients", std::to_string(sc.patients));
  m.config.set("visits_min", std::to_string(sc.visits_min));
  m.config.set("visits_max", std::to_string(sc.visits_max));
  m.config.erase("visits");
  m.config.set("features", std::to_string(sc.features));
  m.config.set("stages", std::to_string(sc.stages));
  m.config.set("noise", format_double(sc.noise));
  m.config.set("separation", format_double(sc.separation));
  m.config.set("missing_rate", format_double(sc.missing_rate));
  m.config.set("seed", std::to_string(sc.seed));
  m.outputs = {{"cohort", csv.string()}};
  m.results = {{"patients", std::to_string(cohort.patients.size())},
               {"visits", std::to_string(cohort.total_visits())}};
  m.timings = {{"generate", t_gen}, {"write", t_write}};
  write_file_atomic(out / "manifest.txt", m.format());
  log << "wrote " << csv.string() << " (" << cohort.patients.size() << " patients, "
      << cohort.total_visits() << " visits)\n";
}

void cmd_train(const KeyValueConfig& cfg, const fs::path& out, std::ostream& log) {
  PhaseTimer timer;
  const TrainConfig tc = train_config(cfg);
  const SplitSpec spec = split_spec(cfg, tc.seed);
  const std::string data_path = required(cfg, "data", "path to a long-format cohort CSV");
  const Cohort raw = load_long_csv(data_path);
  if (tc.mode == Mode::supervised && !raw.has_labels())
    throw ConfigError("supervised mode needs a label column in " + data_path);
  if (tc.mode == Mode::supervised) {
    for (const auto& p : raw.patients)
      if (!p.has_complete_labels())
        throw ConfigError("supervised mode needs a label at every visit; patient " + p.id +
                          " has gaps");
  }
  ensure_directory(out);
  const double t_load = timer.lap();

  const PreparedCohort prep = prepare_cohort(raw, spec);
  const double t_prep = timer.lap();

  std::string log_text;
  TrainResult result = train(tc, prep.split.train, prep.split.val, [&](const EpochRecord& r) {
    const std::string line = format_epoch_record(r);
    log_text += line + '\n';
    log << line << '\n';
  });
  const double t_train = timer.lap();

  Checkpoint ckpt{std::move(result.params), {}};
  ckpt.meta["data.features"] = join(raw.feature_names, ',');
  ckpt.meta["data.labels"] = join(raw.label_vocab, ',');
  ckpt.meta["norm.mean"] = join_hex(prep.stats.mean);
  ckpt.meta["norm.std"] = join_hex(prep.stats.stddev);
  ckpt.meta["split.seed"] = std::to_string(spec.seed);
  ckpt.meta["split.folds"] = std::to_string(spec.folds);
  ckpt.meta["split.fold"] = std::to_string(spec.fold);
  ckpt.meta["train.seed"] = std::to_string(tc.seed);
  ckpt.meta["train.k"] = std::to_string(tc.clusters);
  ckpt.meta["train.best_epoch"] = std::to_string(result.best_epoch);
  ckpt.meta["train.steps"] = std::to_string(result.steps);
  ckpt.meta["eval.repr"] = cfg.get_string("repr", "mu_e");
  ckpt.meta["eval.restarts"] = std::to_string(cfg.get_size("restarts", 10));
  const fs::path ckpt_path = out / "checkpoint.tcem";
  const fs::path log_path = out / "train_log.txt";
  save_checkpoint(ckpt, ckpt_path);
  write_file_atomic(log_path, log_text);
  const double t_write = timer.lap();

  RunManifest m;
  m.command = "train";
  m.config = cfg;
  store_train_config(tc, m.config);
  store_split(spec, m.config);
  m.config.set("data", data_path);
  m.inputs = {{"data", data_path}};
  m.outputs = {{"checkpoint", ckpt_path.string()}, {"train_log", log_path.string()}};
  m.results = {{"best_epoch", std::to_string(result.best_epoch)},
               {"steps", std::to_string(result.steps)},
               {"train_patients", std::to_string(prep.split.train.patients.size())},
               {"val_patients", std::to_string(prep.split.val.patients.size())},
               {"test_patients", std::to_string(prep.split.test.patients.size())}};
  m.timings = {{"load", t_load}, {"prepare", t_prep}, {"train", t_train}, {"write", t_write}};
  write_file_atomic(out / "manifest.txt", m.format());
  log << "best_epoch=" << result.best_epoch << " checkpoint=" << ckpt_path.string() << '\n';
}

EvalSummary cmd_eval(const KeyValueConfig& cfg, const fs::path& out, std::ostream& log) {
  PhaseTimer timer;
  const std::string ckpt_path = required(cfg, "checkpoint", "checkpoint written by train");
  const std::string data_path = required(cfg, "data", "path to a long-format cohort CSV");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TcemParams& params = ckpt.params;
  const Cohort raw = load_long_csv(data_path);

  auto meta = [&](const std::string& key) -> std::string {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end())
      throw CompatibilityError("checkpoint " + ckpt_path + " lacks metadata '" + key + "'");
    return it->second;
  };
  if (raw.features() != params.config.features)
    throw CompatibilityError("checkpoint expects " + std::to_string(params.config.features) +
                             " features, " + data_path + " has " + std::to_string(raw.features()));
  if (meta("data.features") != join(raw.feature_names, ','))
    throw CompatibilityError("feature columns of " + data_path +
                             " differ from those the checkpoint was trained on");
  if (params.config.supervised() && meta("data.labels") != join(raw.label_vocab, ','))
    throw CompatibilityError("label vocabulary of " + data_path +
                             " differs from the supervised checkpoint's");

  const NormalizationStats stats{parse_hex_list(meta("norm.mean"), "norm.mean"),
                                 parse_hex_list(meta("norm.std"), "norm.std")};
  KeyValueConfig split_cfg;
  split_cfg.set("split_seed", meta("split.seed"));
  split_cfg.set("folds", meta("split.folds"));
  split_cfg.set("fold", meta("split.fold"));
  split_cfg.merge(cfg);
  const SplitSpec spec = split_spec(split_cfg, 0);
  const PreparedCohort prep = prepare_cohort(raw, spec, &stats);
  const std::string which = cfg.get_string("eval_split", "test");
  const Cohort& cohort = pick_split(prep.split, which);
  const double t_load = timer.lap();

  const Representation repr = parse_representation(cfg.get_string("repr", meta("eval.repr")));
  const int workers = static_cast<int>(cfg.get_size("workers", 1));
  if (workers < 1) throw ConfigError("workers must be at least 1");
  const Matrix reps = encode_cohort(params, cohort.patients, repr, workers);
  const double t_encode = timer.lap();

  KMeansOptions ko;
  ko.k = cfg.get_size("k", std::stoul(meta("train.k")));
  ko.restarts = cfg.get_size("restarts", std::stoul(meta("eval.restarts")));
  ko.max_iters = cfg.get_size("max_iters", ko.max_iters);
  ko.seed = cfg.get_u64("seed", std::stoull(meta("train.seed")));
  ko.workers = workers;
  const std::vector<int> labels = reference_labels(cohort);
  const std::size_t labeled = static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int y) { return y != kMissingLabel; }));
  if (labeled < 2)
    throw DataError(data_path + " has fewer than two labeled visits in the " + which +
                    " split; metrics need reference labels");

  const ClusterResult model_clusters = kmeans(reps, ko);
  const ClusterResult base_clusters = kmeans(stack_features(cohort), ko);
  EvalSummary s;
  s.model = labeled_metrics(model_clusters.assignments, labels);
  s.features_baseline = labeled_metrics(base_clusters.assignments, labels);
  s.visits = labels.size();
  s.labeled_visits = labeled;
  s.k = ko.k;
  const PcaResult pca = pca_project(reps, 2);
  const double t_cluster = timer.lap();

  ensure_directory(out);
  std::ostringstream assign_csv, proj_csv;
  assign_csv << "patient_id,visit_index,cluster,label,baseline_cluster\n";
  proj_csv << "patient_id,visit_index,cluster,pc1,pc2\n";
  std::size_t r = 0;
  for (const auto& p : cohort.patients) {
    for (std::size_t t = 0; t < p.visits(); ++t, ++r) {
      const int y = labels[r];
      assign_csv << p.id << ',' << p.visit_id(t) << ',' << model_clusters.assignments[r] << ','
                 << (y == kMissingLabel ? std::string() : cohort.label_vocab[static_cast<std::size_t>(y)])
                 << ',' << base_clusters.assignments[r] << '\n';
      proj_csv << p.id << ',' << p.visit_id(t) << ',' << model_clusters.assignments[r] << ','
               << format_double(pca.projected(r, 0)) << ',' << format_double(pca.projected(r, 1))
               << '\n';
    }
  }
  const fs::path metrics_path = out / "metrics.txt";
  const fs::path assign_path = out / "assignments.csv";
  const fs::path proj_path = out / "projection.csv";
  const fs::path svg_path = out / "scatter.svg";
  const std::string metrics_text = format_metrics(s, pca.explained_ratio);
  write_file_atomic(metrics_path, metrics_text);
  write_file_atomic(assign_path, assign_csv.str());
  write_file_atomic(proj_path, proj_csv.str());
  write_file_atomic(svg_path, scatter_svg(pca.projected, model_clusters.assignments, ko.k));
  const double t_write = timer.lap();

  RunManifest m;
  m.command = "eval";
  m.config = cfg;
  m.config.set("checkpoint", ckpt_path);
  m.config.set("data", data_path);
  m.config.set("k", std::to_string(ko.k));
  m.config.set("restarts", std::to_string(ko.restarts));
  m.config.set("max_iters", std::to_string(ko.max_iters));
  m.config.set("seed", std::to_string(ko.seed));
  m.config.set("repr", to_string(repr));
  m.config.set("eval_split", which);
  m.config.set("workers", std::to_string(workers));
  store_split(spec, m.config);
  m.inputs = {{"checkpoint", ckpt_path}, {"data", data_path}};
  m.outputs = {{"metrics", metrics_path.string()},
               {"assignments", assign_path.string()},
               {"projection", proj_path.string()},
               {"scatter", svg_path.string()}};
  m.timings = {{"load", t_load}, {"encode", t_encode}, {"cluster", t_cluster}, {"write", t_write}};
  write_file_atomic(out / "manifest.txt", m.format());
  log << metrics_text;
  return s;
}

bool cmd_gradcheck(const KeyValueConfig& cfg, const fs::path& out, std::ostream& log) {
  PhaseTimer timer;
  const std::string which = cfg.get_string("mode", "both");
  std::vector<Mode> modes;
  if (which == "both") modes = {Mode::supervised, Mode::unsupervised};
  else modes = {parse_mode(which)};

  ModelGradcheckOptions o;
  o.patients = cfg.get_size("patients", o.patients);
  o.visits = cfg.get_size("visits", o.visits);
  o.kl_weight = cfg.get_double("kl_weight", o.kl_weight);
  o.step = cfg.get_double("step", o.step);
  o.tolerance = cfg.get_double("tolerance", o.tolerance);
  o.seed = cfg.get_u64("seed", o.seed);
  o.corrupt_tensor = cfg.get_string("corrupt", "");

  std::string report;
  bool ok = true;
  RunManifest m;
  m.command = "gradcheck";
  m.config = cfg;
  for (Mode mode : modes) {
    ModelConfig mc = toy_model_config(mode);
    mc.features = cfg.get_size("features", mc.features);
    mc.hidden = cfg.get_size("hidden", mc.hidden);
    mc.latent = cfg.get_size("latent", mc.latent);
    mc.memory_slots = cfg.get_size("memory_slots", mc.memory_slots);
    mc.memory_width = cfg.get_size("memory_width", mc.memory_width);
    mc.label_dim = cfg.get_size("label_dim", mc.label_dim);
    if (mode == Mode::supervised) mc.labels = cfg.get_size("labels", mc.labels);
    mc.score = parse_score_mode(cfg.get_string("score", to_string(mc.score)));
    mc.prior = parse_prior(cfg.get_string("prior", to_string(mc.prior)));
    mc.validate();
    const GradcheckReport r = model_gradcheck(mc, o);
    report += "mode=" + to_string(mode) + '\n' + r.format();
    ok = ok && r.passed();
    m.results.emplace_back(to_string(mode) + ".max_rel_error", format_double(r.max_rel_error()));
    m.results.emplace_back(to_string(mode) + ".status", r.passed() ? "pass" : "fail");
    m.timings.emplace_back(to_string(mode), timer.lap());
  }
  log << report;
  if (!out.empty()) {
    ensure_directory(out);
    write_file_atomic(out / "gradcheck.txt", report);
    m.outputs = {{"report", (out / "gradcheck.txt").string()}};
    write_file_atomic(out / "manifest.txt", m.format());
  }
  return ok;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-augmented variational sequence model for disease-stage clustering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version());

  struct Flags {
    std::string config, seed, out = "out", mode, k, workers, data, checkpoint, corrupt, epochs,
        repr;
    std::vector<std::string> sets;
  } f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key=value configuration file (a manifest works too)");
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output directory")->capture_default_str();
    sub->add_option("--mode", f.mode, "supervised or unsupervised")
        ->check(CLI::IsMember({"supervised", "unsupervised", "both"}));
    sub->add_option("--k", f.k, "number of clusters");
    sub->add_option("--workers", f.workers, "maximum parallel patients");
    sub->add_option("--set", f.sets, "extra key=value override (repeatable)");
  };
  CLI::App* gen = app.add_subcommand("generate", "write a synthetic cohort CSV");
  common(gen);
  CLI::App* trn = app.add_subcommand("train", "fit a model and write a checkpoint");
  common(trn);
  trn->add_option("--data", f.data, "long-format cohort CSV");
  trn->add_option("--epochs", f.epochs, "training epochs");
  CLI::App* evl = app.add_subcommand("eval", "cluster test-split representations and score them");
  common(evl);
  evl->add_option("--data", f.data, "long-format cohort CSV");
  evl->add_option("--checkpoint", f.checkpoint, "checkpoint written by train");
  evl->add_option("--repr", f.repr, "mu_e or z")->check(CLI::IsMember({"mu_e", "z"}));
  CLI::App* gck = app.add_subcommand("gradcheck", "finite-difference check of the toy model");
  common(gck);
  gck->add_option("--corrupt", f.corrupt, "perturb this tensor's gradient (self-test)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    if (e.get_exit_code() == 0) {
      out << sub->help();
      return 0;
    }
    err << "error_code=usage " << e.what() << '\n';
    return 1;
  }

  try {
    KeyValueConfig cfg;
    if (!f.config.empty()) cfg = config_from_manifest(KeyValueConfig::load(f.config));
    KeyValueConfig flags;
    for (const std::string& kv : f.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      flags.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    auto flag = [&](const char* key, const std::string& v) {
      if (!v.empty()) flags.set(key, v);
    };
    flag("seed", f.seed);
    flag("mode", f.mode);
    flag("k", f.k);
    flag("workers", f.workers);
    flag("data", f.data);
    flag("checkpoint", f.checkpoint);
    flag("epochs", f.epochs);
    flag("repr", f.repr);
    flag("corrupt", f.corrupt);
    cfg.merge(flags);

    if (gen->parsed()) {
      cmd_generate(cfg, f.out, out);
    } else if (trn->parsed()) {
      cmd_train(cfg, f.out, out);
    } else if (evl->parsed()) {
      cmd_eval(cfg, f.out, out);
    } else if (gck->parsed()) {
      const bool explicit_out = gck->count("--out") > 0;
      if (!cmd_gradcheck(cfg, explicit_out ? fs::path(f.out) : fs::path(), out)) {
        err << "error_code=gradcheck gradient check failed; see tensors marked FAIL\n";
        return 2;
      }
    }
  } catch (const Error& e) {
    err << "error_code=" << e.code() << ' ' << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error_code=internal " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace tcem::cli
