#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tcem/batch.hpp"
#include "tcem/errors.hpp"
#include "tcem/model_check.hpp"
#include "tcem/training.hpp"
#include "test_util.hpp"

using namespace tcem;

namespace {

TrainConfig tiny_config(Mode mode) {
  TrainConfig tc;
  tc.mode = mode;
  tc.hidden = 6;
  tc.latent = 3;
  tc.memory_slots = 3;
  tc.memory_width = 4;
  tc.label_dim = 3;
  tc.batch_size = 3;
  tc.epochs = 3;
  tc.anneal_steps = 10;
  tc.learning_rate = 1e-2;
  return tc;
}

Cohort subset(const Cohort& c, std::size_t from, std::size_t to) {
  Cohort out = c;
  out.patients.assign(c.patients.begin() + static_cast<std::ptrdiff_t>(from),
                      c.patients.begin() + static_cast<std::ptrdiff_t>(to));
  return out;
}

void expect_same_values(const TcemParams& a, const TcemParams& b) {
  auto ta = a.tensors(), tb = b.tensors();
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t k = 0; k < ta.size(); ++k) EXPECT_EQ(ta[k]->value, tb[k]->value) << ta[k]->name;
}

}  // namespace

TEST(Anneal, ClosedFormPoints) {
  EXPECT_EQ(anneal_weight(0, 700), 0.0);
  EXPECT_EQ(anneal_weight(350, 700), 0.5);
  EXPECT_EQ(anneal_weight(700, 700), 1.0);
  EXPECT_EQ(anneal_weight(1400, 700), 1.0);
  EXPECT_THROW(anneal_weight(5, 0), ArgumentError);
}

TEST(Anneal, MonotonePiecewiseLinearWithKnotAtThreshold) {
  double prev = -1.0;
  for (std::size_t s = 0; s <= 2000; ++s) {
    const double a = anneal_weight(s, 700);
    EXPECT_GE(a, prev);
    if (s <= 700) {
      EXPECT_DOUBLE_EQ(a, static_cast<double>(s) / 700.0);
    } else {
      EXPECT_EQ(a, 1.0);
    }
    prev = a;
  }
}

TEST(CrossEntropy, ClosedForms) {
  const std::vector<Vec> onehot{{0.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
  const std::vector<int> y{1, 0};
  EXPECT_EQ(cross_entropy(onehot, y), 0.0);
  const std::vector<Vec> uniform(4, Vec(3, 1.0 / 3.0));
  const std::vector<int> y4{0, 1, 2, 1};
  EXPECT_NEAR(cross_entropy(uniform, y4), std::log(3.0), 1e-9);
}

TEST(CrossEntropy, MatchesPerVisitRecomputation) {
  std::mt19937_64 rng(3);
  std::vector<Vec> probs;
  std::vector<int> labels;
  double expect = 0.0;
  for (int t = 0; t < 9; ++t) {
    Vec p = tcem::testing::random_vec(4, rng, 1.0);
    double z = 0.0;
    for (double& v : p) z += (v = std::abs(v) + 0.01);
    for (double& v : p) v /= z;
    const int y = static_cast<int>(rng() % 4);
    expect += -std::log(p[static_cast<std::size_t>(y)]);
    probs.push_back(p);
    labels.push_back(y);
  }
  EXPECT_NEAR(cross_entropy(probs, labels), expect / 9.0, 1e-14);
}

TEST(CrossEntropy, FloorsZeroProbabilityAndRejectsBadLabels) {
  const std::vector<Vec> p{{1.0, 0.0}};
  EXPECT_NEAR(cross_entropy(p, std::vector<int>{1}), -std::log(1e-12), 1e-9);
  EXPECT_THROW(cross_entropy(p, std::vector<int>{2}), DataError);
}

TEST(ReconstructionMse, ClosedForms) {
  Matrix x(2, 3, Vec{1, 2, 3, 4, 5, 6});
  Matrix xp1 = x;
  for (double& v : xp1.flat()) v += 1.0;
  const std::vector<std::uint8_t> all(6, 1);
  EXPECT_EQ(reconstruction_mse(x, x, all), 0.0);
  EXPECT_EQ(reconstruction_mse(xp1, x, all), 1.0);
  const std::vector<std::uint8_t> none(6, 0);
  EXPECT_THROW(reconstruction_mse(x, x, none), DataError);
}

TEST(ReconstructionMse, HalfMaskedMatchesFilteredRecount) {
  std::mt19937_64 rng(8);
  const Matrix a = tcem::testing::random_matrix(4, 6, rng), b = tcem::testing::random_matrix(4, 6, rng);
  std::vector<std::uint8_t> mask(24);
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < 24; ++i) {
    mask[i] = i % 2;
    if (mask[i]) {
      sum += (a[i] - b[i]) * (a[i] - b[i]);
      ++n;
    }
  }
  EXPECT_NEAR(reconstruction_mse(a, b, mask), sum / n, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  ParamTensor p("p", 2, 1);
  p.value = Matrix(2, 1, Vec{0.5, -0.25});
  ParamTensor* ps[] = {&p};
  OptimizerState st;
  adam_step(ps, st, {});
  EXPECT_EQ(p.value, Matrix(2, 1, Vec{0.5, -0.25}));

  p.grad = Matrix(2, 1, Vec{1.0, -2.0});
  adam_step(ps, st, {});
  const Matrix m_before = st.m[0], v_before = st.v[0];
  p.zero_grad();
  adam_step(ps, st, {});
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(st.m[0][i], 0.9 * m_before[i]);
    EXPECT_DOUBLE_EQ(st.v[0][i], 0.999 * v_before[i]);
  }
  EXPECT_EQ(st.step, 3u);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  ParamTensor p("p", 3, 1);
  p.grad = Matrix(3, 1, Vec{0.7, -3.0, 1e-3});
  ParamTensor* ps[] = {&p};
  OptimizerState st;
  adam_step(ps, st, {0.01});
  EXPECT_NEAR(p.value[0], -0.01, 1e-9);
  EXPECT_NEAR(p.value[1], 0.01, 1e-9);
  EXPECT_NEAR(p.value[2], -0.01, 1e-7);
}

TEST(Adam, TwoStepsMatchScalarRecurrence) {
  ParamTensor p("p", 1, 1);
  p.value[0] = 0.3;
  ParamTensor* ps[] = {&p};
  OptimizerState st;
  const AdamOptions o{0.05, 0.9, 0.999, 1e-8};
  const double g1 = 0.8, g2 = -0.35;
  double x = 0.3, m = 0.0, v = 0.0;
  int t = 0;
  for (double g : {g1, g2}) {
    p.grad[0] = g;
    adam_step(ps, st, o);
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value[0], x, 1e-12);
  }
}

TEST(Train, ZeroLearningRateKeepsInitialization) {
  for (Mode mode : {Mode::supervised, Mode::unsupervised}) {
    const Cohort c = toy_cohort(5, 3, 6, 4, 2);
    TrainConfig tc = tiny_config(mode);
    tc.learning_rate = 0.0;
    tc.epochs = 1;
    tc.seed = 9;
    const TrainResult r = train(tc, subset(c, 0, 4), subset(c, 4, 6));
    expect_same_values(r.params, init_params(tc.model_config(5, 3), 9));
  }
}

TEST(Train, DeterministicAndWorkerCountInvariant) {
  const Cohort c = toy_cohort(5, 3, 10, 5, 3);
  TrainConfig tc = tiny_config(Mode::supervised);
  tc.seed = 4;
  const TrainResult a = train(tc, subset(c, 0, 7), subset(c, 7, 10));
  const TrainResult b = train(tc, subset(c, 0, 7), subset(c, 7, 10));
  tc.workers = 3;
  const TrainResult d = train(tc, subset(c, 0, 7), subset(c, 7, 10));
  expect_same_values(a.params, b.params);
  expect_same_values(a.params, d.params);
  ASSERT_EQ(a.log.size(), d.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i)
    EXPECT_EQ(format_epoch_record(a.log[i]), format_epoch_record(d.log[i]));
}

TEST(Train, LogRecordsSatisfyCompositionAndSchedule) {
  const Cohort c = toy_cohort(5, 3, 10, 5, 5);
  TrainConfig tc = tiny_config(Mode::unsupervised);
  tc.epochs = 6;
  std::vector<EpochRecord> seen;
  const TrainResult r = train(tc, subset(c, 0, 7), subset(c, 7, 10),
                              [&](const EpochRecord& rec) { seen.push_back(rec); });
  ASSERT_EQ(seen.size(), 6u);
  for (const auto& rec : r.log) {
    EXPECT_NEAR(rec.train.total, rec.train.kl_weight * rec.train.kl_term + rec.train.task_term, 1e-12);
    EXPECT_GE(rec.train.kl_term, 0.0);
    EXPECT_EQ(rec.train.kl_weight, anneal_weight(rec.step, tc.anneal_steps));
    EXPECT_EQ(rec.step, rec.epoch * 3);  // 7 patients, batch 3
  }
  EXPECT_EQ(r.steps, 18u);
  const std::string line = format_epoch_record(r.log[0]);
  for (const char* key : {"epoch=1 ", "step=3 ", "total=", "kl_term=", "task_term=", "anneal=", "val_loss="})
    EXPECT_NE(line.find(key), std::string::npos) << key;
}

TEST(Train, AnnealReachesOneAtStepSevenHundred) {
  const Cohort c = toy_cohort(2, 2, 9, 2, 6, 0.0);
  TrainConfig tc = tiny_config(Mode::unsupervised);
  tc.hidden = 2;
  tc.latent = 2;
  tc.memory_width = 2;
  tc.memory_slots = 2;
  tc.batch_size = 1;
  tc.anneal_steps = 700;
  tc.epochs = 100;
  tc.learning_rate = 1e-3;
  const TrainResult r = train(tc, subset(c, 0, 7), subset(c, 7, 9));
  bool found = false;
  for (const auto& rec : r.log) {
    if (rec.step == 700) {
      EXPECT_EQ(rec.train.kl_weight, 1.0);
      found = true;
    }
    if (rec.step < 700) EXPECT_LT(rec.train.kl_weight, 1.0);
  }
  EXPECT_TRUE(found);
}

TEST(Train, ReturnsBestValidationEpoch) {
  const Cohort c = toy_cohort(5, 3, 10, 5, 7);
  TrainConfig tc = tiny_config(Mode::unsupervised);
  tc.epochs = 8;
  tc.learning_rate = 0.05;
  const Cohort tr = subset(c, 0, 7), va = subset(c, 7, 10);
  const TrainResult r = train(tc, tr, va);
  double best = 1e300;
  std::size_t best_epoch = 0;
  for (const auto& rec : r.log)
    if (rec.val_loss < best) {
      best = rec.val_loss;
      best_epoch = rec.epoch;
    }
  EXPECT_EQ(r.best_epoch, best_epoch);
  const auto vp = pointers(va.patients);
  EXPECT_EQ(batch_loss(r.params, vp, {1.0, mix_seed(tc.seed, 0xe7a1), true}).total, best);
}

TEST(Train, FrozenZeroAnnealIsPureMaskedReconstruction) {
  const TcemParams params = init_params(tiny_config(Mode::unsupervised).model_config(5, 0), 3);
  const Cohort c = toy_cohort(5, 3, 5, 4, 8);
  const auto batch = pointers(c.patients);
  TcemParams g = params.gradient_buffer();
  const LossBreakdown l = batch_gradients_serial(params, batch, {0.0, 2, true}, g);
  EXPECT_EQ(l.total, l.task_term);
  for (const char* name : {"prior.mu_w", "prior.mu_b", "prior.logsig_w", "prior.logsig_b"})
    for (double v : g.find(name)->grad.values()) EXPECT_EQ(v, 0.0) << name;
}

TEST(Train, NonFiniteLossAborts) {
  const Cohort c = toy_cohort(5, 3, 6, 4, 2);
  TrainConfig tc = tiny_config(Mode::unsupervised);
  TcemParams p = init_params(tc.model_config(5, 0), 0);
  p.head_b.value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_from(tc, p, subset(c, 0, 4), subset(c, 4, 6));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, SupervisedWithoutLabelsIsConfigError) {
  Cohort c = toy_cohort(5, 3, 6, 4, 2);
  for (auto& p : c.patients) p.labels.clear();
  c.label_vocab.clear();
  TrainConfig tc = tiny_config(Mode::supervised);
  EXPECT_THROW(train(tc, subset(c, 0, 4), subset(c, 4, 6)), ConfigError);
}

TEST(Train, InvalidConfigRejected) {
  TrainConfig tc = tiny_config(Mode::unsupervised);
  tc.anneal_steps = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = tiny_config(Mode::unsupervised);
  tc.clusters = 1;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = tiny_config(Mode::unsupervised);
  tc.hidden = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Train, DefaultHyperparameters) {
  const TrainConfig tc;
  EXPECT_EQ(tc.hidden, 128u);
  EXPECT_EQ(tc.latent, 128u);
  EXPECT_EQ(tc.learning_rate, 1e-3);
  EXPECT_EQ(tc.batch_size, 32u);
  EXPECT_EQ(tc.epochs, 70u);
  EXPECT_EQ(tc.anneal_steps, 700u);
  EXPECT_EQ(tc.clusters, 3u);
}

// Scaled-down sep3 cohort (N=40, T=6, D=16): the logged training loss falls
// over the first five epochs for most seeds.
TEST(Train, ToyLossDecreasesOverFirstFiveEpochs) {
  int decreasing = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticConfig sc = sep3_config();
    sc.patients = 40;
    sc.visits_min = sc.visits_max = 6;
    sc.seed = seed;
    Cohort raw = generate_synthetic(sc);
    CohortSplit sp = split(raw, seed);
    const NormalizationStats st = compute_normalization(sp.train);
    for (Cohort* part : {&sp.train, &sp.val}) {
      part->norm = st;
      *part = impute(*part);
      normalize(*part, st);
    }
    TrainConfig tc;
    tc.hidden = 16;
    tc.latent = 16;
    tc.memory_width = 16;
    tc.epochs = 5;
    tc.batch_size = 8;
    tc.seed = seed;
    const TrainResult r = train(tc, sp.train, sp.val);
    bool ok = true;
    for (std::size_t i = 1; i < r.log.size(); ++i) ok = ok && r.log[i].train.total < r.log[i - 1].train.total;
    decreasing += ok;
  }
  EXPECT_GE(decreasing, 4);
}
