#include <gtest/gtest.h>

#include "tcem/errors.hpp"
#include "tcem/gradcheck.hpp"
#include "tcem/model_check.hpp"

using namespace tcem;

namespace {

ParamTensor tensor(const std::string& name, Vec values) {
  ParamTensor t(name, values.size(), 1);
  t.value = Matrix::column(values);
  return t;
}

}  // namespace

TEST(Gradcheck, QuadraticLossMatches) {
  ParamTensor p = tensor("p", {0.5, -1.5, 2.0});
  for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0 * p.value[i];
  auto loss = [&] {
    double s = 0.0;
    for (double v : p.value.values()) s += v * v;
    return s;
  };
  ParamTensor* ptrs[] = {&p};
  const GradcheckReport r = gradcheck(loss, ptrs, 1e-5, 1e-8);
  EXPECT_TRUE(r.passed()) << r.format();
}

TEST(Gradcheck, LinearLossExactToMachinePrecision) {
  ParamTensor p = tensor("w", {3.0, -2.0, 0.25, 7.0});
  const Vec c{1.5, -0.5, 2.0, 4.0};
  for (std::size_t i = 0; i < 4; ++i) p.grad[i] = c[i];
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += c[i] * p.value[i];
    return s;
  };
  ParamTensor* ptrs[] = {&p};
  const GradcheckReport r = gradcheck(loss, ptrs, 1e-3, 1e-9);
  EXPECT_TRUE(r.passed());
  EXPECT_LT(r.max_rel_error(), 1e-10);
}

TEST(Gradcheck, ValuesRestoredBitExactly) {
  ParamTensor p = tensor("w", {0.1, 0.2, 0.3});
  const Matrix before = p.value;
  auto loss = [&] { return p.value[0] * p.value[1] * p.value[2]; };
  ParamTensor* ptrs[] = {&p};
  gradcheck(loss, ptrs, 1e-5, 1e-4);
  EXPECT_EQ(p.value, before);
}

TEST(Gradcheck, FlagsWrongGradientAndNamesTensor) {
  ParamTensor good = tensor("good", {1.0});
  ParamTensor bad = tensor("bad", {2.0});
  good.grad[0] = 2.0;
  bad.grad[0] = 0.0;  // true gradient is 4
  auto loss = [&] { return good.value[0] * good.value[0] + bad.value[0] * bad.value[0]; };
  ParamTensor* ptrs[] = {&good, &bad};
  const GradcheckReport r = gradcheck(loss, ptrs, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed());
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_TRUE(r.entries[0].passed());
  EXPECT_FALSE(r.entries[1].passed());
  const std::string text = r.format();
  EXPECT_NE(text.find("tensor=bad"), std::string::npos);
  EXPECT_NE(text.find("status=FAIL"), std::string::npos);
}

TEST(Gradcheck, NonDeterministicLossIsRejected) {
  ParamTensor p = tensor("p", {1.0});
  int calls = 0;
  auto loss = [&] { return p.value[0] + 1e-3 * (++calls); };
  ParamTensor* ptrs[] = {&p};
  EXPECT_THROW(gradcheck(loss, ptrs, 1e-5, 1e-4), DeterminismError);
}

TEST(Gradcheck, NonPositiveStepIsArgumentError) {
  ParamTensor p = tensor("p", {1.0});
  auto loss = [&] { return p.value[0]; };
  ParamTensor* ptrs[] = {&p};
  EXPECT_THROW(gradcheck(loss, ptrs, 0.0, 1e-4), ArgumentError);
  EXPECT_THROW(gradcheck(loss, ptrs, -1e-5, 1e-4), ArgumentError);
}

TEST(Gradcheck, RelativeErrorUsesFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / kGradcheckFloor);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

TEST(ModelGradcheck, ToyModelPassesInBothModes) {
  for (Mode mode : {Mode::supervised, Mode::unsupervised}) {
    const GradcheckReport r = model_gradcheck(toy_model_config(mode), {});
    EXPECT_TRUE(r.passed()) << to_string(mode) << '\n' << r.format();
    EXPECT_LT(r.max_rel_error(), 1e-4);
  }
}

TEST(ModelGradcheck, VariantsPass) {
  for (Mode mode : {Mode::supervised, Mode::unsupervised}) {
    ModelConfig c = toy_model_config(mode);
    c.score = ScoreMode::multiplicative;
    c.prior = PriorKind::standard;
    ModelGradcheckOptions o;
    o.visits = 5;
    o.seed = 31;
    const GradcheckReport r = model_gradcheck(c, o);
    EXPECT_TRUE(r.passed()) << r.format();
  }
}

TEST(ModelGradcheck, CorruptedTensorIsNamed) {
  ModelGradcheckOptions o;
  o.corrupt_tensor = "global_memory.gate_w";
  const GradcheckReport r = model_gradcheck(toy_model_config(Mode::unsupervised), o);
  EXPECT_FALSE(r.passed());
  for (const auto& e : r.entries) EXPECT_EQ(e.passed(), e.name != "global_memory.gate_w") << e.name;
}

TEST(ModelGradcheck, OversizeModelRefused) {
  ModelConfig c = toy_model_config(Mode::unsupervised);
  c.hidden = 128;
  c.memory_width = 128;
  c.latent = 128;
  EXPECT_THROW(model_gradcheck(c, {}), ConfigError);
}
