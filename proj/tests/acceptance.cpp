// Acceptance runner. Prints one line per criterion:
//
//   criterion=<n> status=PASS|FAIL name=<slug> <key=value details>
//
// and exits 0 only if every criterion passes. Criteria 6-8 drive the `tcem`
// command surface end to end on the sep3 benchmark with default
// hyperparameters, writing all artifacts under --workdir.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tcem/batch.hpp"
#include "tcem/cli.hpp"
#include "tcem/clustering.hpp"
#include "tcem/data.hpp"
#include "tcem/io.hpp"
#include "tcem/memory.hpp"
#include "tcem/model.hpp"
#include "tcem/model_check.hpp"
#include "tcem/training.hpp"

namespace fs = std::filesystem;
using namespace tcem;

namespace {

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradcheckSeconds = 60.0;
constexpr double kWeightSumTolerance = 1e-9;
constexpr double kLn3Tolerance = 1e-9;
constexpr double kAriMeanTolerance = 0.02;
constexpr double kNmiThreshold = 0.6;
constexpr int kSeedsRequired = 4;
constexpr double kEndToEndSeconds = 15.0 * 60.0;
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (detail.find("failed=") == std::string::npos) detail += " failed=" + what;
    }
  }
  void note(const std::string& kv) { detail += " " + kv; }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs one tcem command line; throws with the diagnostic text on failure.
void tcem(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) {
    std::string line;
    for (const auto& a : args) line += a + " ";
    throw std::runtime_error("tcem " + line + "exited " + std::to_string(code) + ": " + err.str());
  }
}

// Value of `metric` for `source` in a metrics report.
double read_metric(const fs::path& report, const std::string& metric, const std::string& source) {
  std::istringstream in(read_file(report));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("metric=" + metric + " ", 0) != 0) continue;
    if (line.find("source=" + source) == std::string::npos) continue;
    const std::size_t at = line.find("value=");
    return std::stod(line.substr(at + 6));
  }
  throw std::runtime_error("no " + metric + "/" + source + " line in " + report.string());
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  for (Mode mode : {Mode::supervised, Mode::unsupervised}) {
    ModelGradcheckOptions opt;
    opt.patients = 2;
    opt.visits = 4;
    opt.tolerance = kGradTolerance;
    const ModelConfig mc = toy_model_config(mode);
    o.require(mc.features == 5 && mc.hidden == 6 && mc.memory_width == 6 &&
                  mc.memory_slots == 3 && mc.latent == 4,
              "toy_dimensions");
    const GradcheckReport r = model_gradcheck(mc, opt);
    o.note(to_string(mode) + ".max_rel_error=" + fmt(r.max_rel_error()));
    o.require(r.passed() && r.max_rel_error() < kGradTolerance, to_string(mode));
  }
  const double secs = seconds_since(t0);
  o.note("seconds=" + fmt(secs, 3));
  o.require(secs < kGradcheckSeconds, "runtime");
  return o;
}

Outcome closed_forms() {
  Outcome o;
  o.require(gaussian_kl(Vec{1.0}, Vec{1.0}, Vec{0.0}, Vec{1.0}) == 0.5, "kl_half");
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> m(-3, 3), ls(-2, 2);
  double min_kl = 1e300;
  for (int i = 0; i < 1000; ++i) {
    Vec mq(3), sq(3), mp(3), sp(3);
    for (std::size_t k = 0; k < 3; ++k) {
      mq[k] = m(rng);
      mp[k] = m(rng);
      sq[k] = std::exp(ls(rng));
      sp[k] = std::exp(ls(rng));
    }
    min_kl = std::min(min_kl, gaussian_kl(mq, sq, mp, sp));
  }
  o.note("min_kl=" + fmt(min_kl));
  o.require(min_kl >= 0.0, "kl_nonnegative");
  o.require(anneal_weight(350, 700) == 0.5, "anneal_half");
  o.require(anneal_weight(0, 700) == 0.0, "anneal_zero");
  for (std::size_t s : {700u, 701u, 5000u}) o.require(anneal_weight(s, 700) == 1.0, "anneal_one");
  const std::vector<Vec> uniform(5, Vec(3, 1.0 / 3.0));
  const std::vector<int> labels{0, 1, 2, 0, 1};
  const double ce = cross_entropy(uniform, labels);
  o.note("ce_uniform=" + fmt(ce, 12));
  o.require(std::abs(ce - std::log(3.0)) <= kLn3Tolerance, "ce_ln3");
  return o;
}

Outcome memory_semantics() {
  Outcome o;
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<double> u(-1, 1);
  auto rvec = [&](std::size_t n) {
    Vec v(n);
    for (double& x : v) x = u(rng);
    return v;
  };
  auto params = [&](std::size_t L, std::size_t d, std::size_t q) {
    MemoryParams p("mem", L, d, q, q);
    p.init(rng);
    for (double& s : p.strengths.value.flat()) s = u(rng);
    return p;
  };
  const Vec zeros4(4, 0.0), ones4(4, 1.0);

  {  // empty bank
    const MemoryParams p = params(5, 4, 3);
    const ReadResult r = memory_read(p.empty_bank(), p, rvec(3));
    o.require(r.e == Vec(4, 0.0) && r.weights == Vec(5, 0.0), "empty_read");
  }
  for (ScoreMode mode : {ScoreMode::additive, ScoreMode::multiplicative}) {  // one slot
    const MemoryParams p = params(5, 4, 3);
    MemoryBank bank = p.empty_bank();
    write_with_gates(bank, rvec(4), zeros4, ones4);
    const ReadResult r = memory_read(bank, p, rvec(3), mode);
    bool exact = r.weights[0] == 1.0;
    for (std::size_t j = 0; j < 4; ++j) exact = exact && r.e[j] == bank.slots(0, j);
    o.require(exact, "single_slot_read");
  }
  double worst_sum = 0.0;
  for (int trial = 0; trial < 500; ++trial) {  // weight normalization
    const std::size_t L = 1 + static_cast<std::size_t>(trial) % 8;
    const MemoryParams p = params(L, 4, 3);
    MemoryBank bank = p.empty_bank();
    const std::size_t n = 1 + static_cast<std::size_t>(trial / 8) % L;
    for (std::size_t i = 0; i < n; ++i) write_with_gates(bank, rvec(4), zeros4, ones4);
    const ReadResult r = memory_read(bank, p, rvec(3),
                                     trial % 2 ? ScoreMode::multiplicative : ScoreMode::additive);
    const double s = std::accumulate(r.weights.begin(), r.weights.end(), 0.0);
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    for (std::size_t l = n; l < L; ++l) o.require(r.weights[l] == 0.0, "unoccupied_weight");
  }
  o.note("max_weight_sum_error=" + fmt(worst_sum));
  o.require(worst_sum <= kWeightSumTolerance, "weight_sum");

  bool local = true;
  for (std::size_t L = 1; L <= 8; ++L) {  // write locality and ring wrap
    const MemoryParams p = params(L, 4, 3);
    MemoryBank bank = p.empty_bank();
    for (std::size_t w = 0; w < 3 * L; ++w) {
      const MemoryBank before = bank;
      memory_write(bank, p, rvec(3));
      const std::size_t target = w % L;
      local = local && bank.cursor == (target + 1) % L && bank.occupied == std::min(w + 1, L);
      for (std::size_t l = 0; l < L; ++l)
        if (l != target)
          for (std::size_t j = 0; j < 4; ++j) local = local && bank.slots(l, j) == before.slots(l, j);
    }
  }
  o.require(local, "write_locality_wrap");

  {  // forced gates
    const MemoryParams p = params(3, 4, 3);
    const Vec h = rvec(3);
    const Vec ah = linear_forward(p.project.value, Vec(4, 0.0), h);
    MemoryBank bank = p.empty_bank();
    write_with_gates(bank, ah, zeros4, ones4);
    bool overwrite = true;
    for (std::size_t j = 0; j < 4; ++j) overwrite = overwrite && bank.slots(0, j) == ah[j];
    o.require(overwrite, "gates_r0_v1");
    for (int i = 0; i < 4; ++i) write_with_gates(bank, rvec(4), zeros4, ones4);
    const Matrix before = bank.slots;
    write_with_gates(bank, ah, ones4, zeros4);
    o.require(bank.slots == before, "gates_r1_v0");
  }
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  double worst = 0.0;
  std::size_t partitions = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    std::mt19937_64 rng(40 + n);
    for (int labeling = 0; labeling < 3; ++labeling) {
      std::vector<int> labels(n);
      for (int& y : labels) y = static_cast<int>(rng() % 3);
      for (const auto& c : oracle::all_labelings(n, 3)) {
        ++partitions;
        worst = std::max(worst, std::abs(purity(c, labels) - oracle::purity_oracle(c, labels)));
        worst = std::max(worst, std::abs(nmi(c, labels) - oracle::nmi_oracle(c, labels)));
        if (n >= 2) worst = std::max(worst, std::abs(ari(c, labels) - oracle::ari_oracle(c, labels)));
      }
    }
  }
  o.note("partitions=" + std::to_string(partitions) + " max_oracle_gap=" + fmt(worst));
  o.require(worst <= 1e-12, "exhaustive_metrics");

  std::mt19937_64 rng(41);
  double sum = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> c(200), l(200);
    for (std::size_t i = 0; i < 200; ++i) {
      c[i] = static_cast<int>(rng() % 3);
      l[i] = static_cast<int>(rng() % 3);
    }
    sum += ari(c, l);
  }
  o.note("random_ari_mean=" + fmt(sum / 500.0));
  o.require(std::abs(sum / 500.0) <= kAriMeanTolerance, "random_ari_mean");

  bool monotone = true;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 g(seed);
    Matrix p(150, 4);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& x : p.flat()) x = nd(g) + static_cast<double>(g() % 3) * 3.0;
    KMeansOptions ko;
    ko.k = 2 + seed % 4;
    ko.seed = seed;
    ko.restarts = 5;
    const ClusterResult r = kmeans(p, ko);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      monotone = monotone && r.inertia_history[i] <= r.inertia_history[i - 1] * (1 + 1e-12);
  }
  o.require(monotone, "inertia_monotone");

  int optimal = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 g(500 + seed);
    std::uniform_real_distribution<double> u(-5, 5);
    Matrix p(8, 2);
    for (double& x : p.flat()) x = u(g);
    KMeansOptions ko;
    ko.k = 2;
    ko.seed = seed;
    const double best = oracle::best_two_cluster_inertia(p);
    optimal += std::abs(kmeans(p, ko).inertia - best) <= 1e-9 * std::max(1.0, best);
  }
  o.note("eight_point_optimal=" + std::to_string(optimal) + "/20");
  o.require(optimal == 20, "kmeans_optimum");
  return o;
}

Outcome label_causality() {
  Outcome o;
  ModelConfig mc = toy_model_config(Mode::supervised);
  const TcemParams p = init_params(mc, 50);
  std::mt19937_64 rng(51);
  int identical = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Cohort cohort = toy_cohort(mc.features, mc.labels, 1, 7, 600 + static_cast<std::uint64_t>(trial));
    const PatientSequence& seq = cohort.patients[0];
    const std::size_t t = rng() % seq.visits();
    PatientSequence mutated = seq;
    for (std::size_t u = t; u < seq.visits(); ++u)
      mutated.labels[u] = static_cast<int>((static_cast<std::size_t>(seq.labels[u]) + 1 + rng() % 2) % 3);
    ForwardOptions fo;
    fo.noise_seed = 9 + static_cast<std::uint64_t>(trial);
    const ForwardTrace a = forward_sequence(p, seq, fo), b = forward_sequence(p, mutated, fo);
    bool same = true;
    for (std::size_t u = 0; u <= t; ++u)
      same = same && a.steps[u].output == b.steps[u].output && a.steps[u].z == b.steps[u].z &&
             a.steps[u].e == b.steps[u].e;
    identical += same;
  }
  o.note("unchanged_trials=" + std::to_string(identical) + "/100");
  o.require(identical == 100, "causality");
  return o;
}

struct EndToEnd {
  std::vector<double> nmi, purity, baseline_nmi, baseline_purity;
  double seconds = 0.0;
};

// generate -> train -> eval for one mode over all seeds.
EndToEnd run_benchmark(const fs::path& work, const std::string& mode) {
  EndToEnd r;
  for (std::uint64_t seed : kSeeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = work / ("seed" + std::to_string(seed));
    const std::string s = std::to_string(seed);
    const fs::path csv = dir / "data" / "cohort.csv";
    if (!fs::exists(csv)) tcem({"generate", "--out", (dir / "data").string(), "--seed", s});
    tcem({"train", "--data", csv.string(), "--out", (dir / mode).string(), "--seed", s, "--mode",
          mode, "--workers", "1"});
    tcem({"eval", "--checkpoint", (dir / mode / "checkpoint.tcem").string(), "--data", csv.string(),
          "--out", (dir / (mode + "_eval")).string(), "--workers", "1"});
    const fs::path report = dir / (mode + "_eval") / "metrics.txt";
    r.nmi.push_back(read_metric(report, "nmi", "model"));
    r.purity.push_back(read_metric(report, "purity", "model"));
    r.baseline_nmi.push_back(read_metric(report, "nmi", "features_baseline"));
    r.baseline_purity.push_back(read_metric(report, "purity", "features_baseline"));
    const double secs = seconds_since(t0);
    r.seconds += secs;
    std::cout << "# " << mode << " seed=" << seed << " nmi=" << fmt(r.nmi.back())
              << " purity=" << fmt(r.purity.back()) << " baseline_nmi=" << fmt(r.baseline_nmi.back())
              << " seconds=" << fmt(secs, 3) << std::endl;
  }
  return r;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + fmt(x);
  return s;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome synthetic_end_to_end(const EndToEnd& u) {
  Outcome o;
  int passing = 0;
  for (double v : u.nmi) passing += v >= kNmiThreshold;
  o.note("nmi=" + join(u.nmi) + " baseline_nmi=" + join(u.baseline_nmi) +
         " seeds_ok=" + std::to_string(passing) + "/5 seconds=" + fmt(u.seconds, 4));
  o.require(passing >= kSeedsRequired, "nmi_threshold");
  o.require(u.seconds < kEndToEndSeconds, "runtime");
  return o;
}

Outcome supervised_beats_unsupervised(const EndToEnd& s, const EndToEnd& u) {
  Outcome o;
  o.note("supervised_purity=" + join(s.purity) + " unsupervised_purity=" + join(u.purity) +
         " means=" + fmt(mean(s.purity)) + "/" + fmt(mean(u.purity)));
  o.require(mean(s.purity) > mean(u.purity), "mean_purity");
  return o;
}

Outcome reproducibility(const fs::path& work) {
  Outcome o;
  const fs::path dir = work / ("seed" + std::to_string(kSeeds.front()));
  const fs::path again = work / "rerun";
  auto same = [&](const fs::path& a, const fs::path& b, const std::string& what) {
    const bool eq = read_file(a) == read_file(b);
    o.require(eq, what);
    return eq;
  };
  tcem({"generate", "--config", (dir / "data" / "manifest.txt").string(), "--out", (again / "data").string()});
  same(dir / "data" / "cohort.csv", again / "data" / "cohort.csv", "generate");

  tcem({"train", "--config", (dir / "unsupervised" / "manifest.txt").string(), "--out",
        (again / "unsupervised").string()});
  same(dir / "unsupervised" / "checkpoint.tcem", again / "unsupervised" / "checkpoint.tcem", "train_checkpoint");
  same(dir / "unsupervised" / "train_log.txt", again / "unsupervised" / "train_log.txt", "train_log");

  for (const std::string mode : {"unsupervised", "supervised"}) {
    const fs::path out = again / (mode + "_eval");
    tcem({"eval", "--config", (dir / (mode + "_eval") / "manifest.txt").string(), "--out", out.string()});
    same(dir / (mode + "_eval") / "metrics.txt", out / "metrics.txt", mode + "_metrics");
    same(dir / (mode + "_eval") / "assignments.csv", out / "assignments.csv", mode + "_assignments");
  }

  tcem({"gradcheck", "--out", (again / "gc1").string()});
  tcem({"gradcheck", "--config", (again / "gc1" / "manifest.txt").string(), "--out", (again / "gc2").string()});
  same(again / "gc1" / "gradcheck.txt", again / "gc2" / "gradcheck.txt", "gradcheck");
  o.note("reruns=generate,train,eval_unsupervised,eval_supervised,gradcheck");
  return o;
}

Outcome data_layer() {
  Outcome o;
  std::mt19937_64 rng(90);
  std::uniform_real_distribution<double> u(-3, 3);
  int mismatches = 0, touched = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t T = 6, F = 4;
    Cohort c;
    PatientSequence p;
    p.id = "p";
    p.values = Matrix(T, F);
    p.observed.assign(T * F, 0);
    std::vector<std::vector<double>> cols(F, std::vector<double>(T));
    Vec means(F);
    for (std::size_t f = 0; f < F; ++f) {
      c.feature_names.push_back("f" + std::to_string(f));
      means[f] = u(rng);
      for (std::size_t t = 0; t < T; ++t) {
        const double v = u(rng);
        const bool seen = rng() % 3 != 0;
        cols[f][t] = seen ? v : std::numeric_limits<double>::quiet_NaN();
        p.values(t, f) = cols[f][t];
        p.observed[t * F + f] = seen;
      }
    }
    c.patients.push_back(p);
    c.norm = NormalizationStats{means, Vec(F, 1.0)};
    const Cohort out = impute(c);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < T; ++t) {
        const double got = out.patients[0].values(t, f);
        mismatches += got != oracle::locf_scan(cols[f], t, means[f]);
        if (p.observed[t * F + f]) touched += got != cols[f][t];
      }
  }
  o.note("scan_mismatches=" + std::to_string(mismatches) + " observed_modified=" + std::to_string(touched));
  o.require(mismatches == 0, "scan_oracle");
  o.require(touched == 0, "observed_untouched");

  const Cohort cohort = generate_synthetic(sep3_config());
  bool split_ok = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const CohortSplit a = split(cohort, seed), b = split(cohort, seed);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const Cohort* part : {&a.train, &a.val, &a.test})
      for (const auto& pt : part->patients) {
        seen.insert(pt.id);
        ++total;
      }
    split_ok = split_ok && seen.size() == 200 && total == 200 && a.train.patients.size() == 120 &&
               a.val.patients.size() == 40 && a.test.patients.size() == 40;
    for (std::size_t i = 0; i < a.test.patients.size(); ++i)
      split_ok = split_ok && a.test.patients[i].id == b.test.patients[i].id;
    for (std::size_t i = 0; i < a.train.patients.size(); ++i)
      split_ok = split_ok && a.train.patients[i].id == b.train.patients[i].id;
  }
  o.require(split_ok, "split_disjoint_deterministic");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "tcem_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--workdir DIR]\n";
      return 1;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);
  std::cout << "# tcem " << cli::version() << " workdir=" << work.string() << std::endl;

  EndToEnd unsup, sup;
  bool have_runs = false;
  auto ensure_runs = [&] {
    if (have_runs) return;
    have_runs = true;
    unsup = run_benchmark(work, "unsupervised");
    sup = run_benchmark(work, "supervised");
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_correctness", gradient_correctness},
      {"closed_form_checks", closed_forms},
      {"memory_semantics", memory_semantics},
      {"metric_oracles", metric_oracles},
      {"label_causality", label_causality},
      {"synthetic_end_to_end", [&] { ensure_runs(); return synthetic_end_to_end(unsup); }},
      {"supervised_beats_unsupervised",
       [&] { ensure_runs(); return supervised_beats_unsupervised(sup, unsup); }},
      {"reproducibility", [&] { ensure_runs(); return reproducibility(work); }},
      {"data_layer", data_layer},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string(" error=\"") + e.what() + "\"";
    }
    failures += !o.pass;
    std::cout << "criterion=" << i + 1 << " status=" << (o.pass ? "PASS" : "FAIL")
              << " name=" << criteria[i].first << o.detail << std::endl;
  }
  std::cout << "summary passed=" << criteria.size() - static_cast<std::size_t>(failures) << "/"
            << criteria.size() << std::endl;
  return failures == 0 ? 0 : 1;
}
