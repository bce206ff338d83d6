#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "flowguide/flow.hpp"
#include "flowguide/toyflows.hpp"
#include "flowguide/toyshapes.hpp"
#include "oracles.hpp"

using namespace flowguide;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::InvalidArgument;
}

// Returns the same velocity everywhere.
class ConstantField final : public VelocityField {
 public:
  explicit ConstantField(double v) : v_(v) {}
  Matrix evaluate(const Matrix& values, double, const Condition&) const override {
    return Matrix::Constant(values.rows(), values.cols(), v_);
  }
  std::string name() const override { return "constant"; }
  std::size_t parameter_count() const override { return 1; }

 private:
  double v_;
};

// Records every time it is asked for, to check the grid.
class TimeLogField final : public VelocityField {
 public:
  mutable std::vector<double> times;
  Matrix evaluate(const Matrix& values, double t, const Condition&) const override {
    times.push_back(t);
    return Matrix::Zero(values.rows(), values.cols());
  }
  std::string name() const override { return "log"; }
  std::size_t parameter_count() const override { return 0; }
};

const std::vector<PartBox>& two_boxes() {
  static const std::vector<PartBox> boxes{{{0, 0, 0}, {5, 5, 2}}, {{0, 0, 3}, {5, 5, 5}}};
  return boxes;
}

ToyShape small_shape(std::uint64_t seed) { return make_toy_shape(6, 4, two_boxes(), 0.05, seed, "s"); }

// Part labels of the query shape, one cluster per box.
ClusterAssignment box_labels(const StructuredLatent& shape) {
  ClusterAssignment a;
  a.k = 2;
  for (const auto& p : shape.positions()) a.labels.push_back(static_cast<std::uint32_t>(part_of(p, two_boxes())));
  return a;
}

}  // namespace

TEST(ForwardInterpolate, Examples) {
  std::mt19937_64 gen(1);
  const Matrix z0 = oracle::random_matrix(3, 2, gen), eps = oracle::random_matrix(3, 2, gen);
  EXPECT_EQ(forward_interpolate(z0, eps, 0.0), z0);
  EXPECT_EQ(forward_interpolate(z0, eps, 1.0), eps);
  EXPECT_EQ(forward_interpolate(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 2.0), 0.5)(0, 0), 1.0);
  EXPECT_EQ(kind_of([&] { return forward_interpolate(z0, eps, 1.5); }), ErrorKind::TimeOutOfRange);
  EXPECT_EQ(kind_of([&] { return forward_interpolate(z0, Matrix::Zero(2, 2), 0.5); }), ErrorKind::ShapeMismatch);
}

TEST(CfmLoss, Examples) {
  const ZeroVelocityField zero;
  CfmSample s{Matrix::Zero(1, 2), (Matrix(1, 2) << 3, 4).finished(), 0.3, {}};
  EXPECT_DOUBLE_EQ(cfm_loss(zero, std::span(&s, 1)), 25.0);
  EXPECT_EQ(kind_of([&] { return cfm_loss(zero, std::span<const CfmSample>()); }), ErrorKind::EmptyBatch);
}

TEST(CfmLoss, AnalyticFieldReachesTheConditionalVariance) {
  const GaussianFlowSpec spec{(Vector(2) << 1.0, -0.5).finished(), 0.6};
  const GaussianVelocityField field(spec);
  const ZeroVelocityField zero;
  std::mt19937_64 gen(3);
  const auto batch = draw_cfm_batch(spec, 100000, gen);
  const double analytic = cfm_loss(field, batch);
  // Expected value: sum over channels of the conditional variance, averaged over t ~ U[0,1].
  double expected = 0;
  std::vector<double> terms;
  for (const auto& s : batch) terms.push_back(2 * gaussian_conditional_variance(spec, s.t));
  for (double t : terms) expected += t;
  expected /= static_cast<double>(terms.size());
  EXPECT_NEAR(analytic, expected, 0.02 * expected);
  EXPECT_LT(analytic, cfm_loss(zero, batch));
}

TEST(EulerStep, Examples) {
  const Matrix one = Matrix::Constant(1, 1, 1.0);
  EXPECT_NEAR(euler_step(one, 1.0, 0.1, ConstantField(2.0), {})(0, 0), 0.8, 1e-15);
  EXPECT_EQ(euler_step(one, 0.5, 0.1, ZeroVelocityField(), {}), one);
  EXPECT_EQ(kind_of([&] { return euler_step(one, 0.05, 0.1, ZeroVelocityField(), {}); }), ErrorKind::TimeOutOfRange);
  EXPECT_EQ(kind_of([&] { return euler_step(one, -0.1, 0.0, ZeroVelocityField(), {}); }), ErrorKind::TimeOutOfRange);
}

TEST(Sample, SingleStepZeroFieldReturnsTheNoise) {
  const auto shape = small_shape(1).latent;
  SamplerConfig cfg;
  cfg.steps = 1;
  cfg.seed = 9;
  const auto out = sample(shape, ZeroVelocityField(), {}, cfg);
  EXPECT_EQ(out.values(), init_latent_state(shape, 9).values());
  EXPECT_EQ(out.time(), 0.0);
}

TEST(Sample, TimeGridIsLinearAndEndsAtZero) {
  const auto shape = small_shape(1).latent;
  for (std::uint32_t steps : {1u, 7u, 300u}) {
    TimeLogField field;
    SamplerConfig cfg;
    cfg.steps = steps;
    const auto out = sample(shape, field, {}, cfg);
    ASSERT_EQ(field.times.size(), steps);
    for (std::uint32_t k = 0; k < steps; ++k) {
      EXPECT_NEAR(field.times[k], 1.0 - static_cast<double>(k) / steps, 1e-12);
    }
    EXPECT_NEAR(out.time(), 0.0, 1e-12);
  }
}

TEST(Sample, DeterministicAndPositionPreserving) {
  const auto shape = small_shape(2).latent;
  const GaussianVelocityField field({Vector::Constant(4, 0.5), 0.7});
  SamplerConfig cfg;
  cfg.steps = 50;
  cfg.seed = 4;
  const auto a = sample(shape, field, {}, cfg);
  const auto b = sample(shape, field, {}, cfg);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_TRUE(std::equal(a.positions().begin(), a.positions().end(), shape.positions().begin(), shape.positions().end()));
  cfg.seed = 5;
  EXPECT_NE(sample(shape, field, {}, cfg).values(), a.values());
}

TEST(Sample, RejectsActiveGuidance) {
  SamplerConfig cfg;
  cfg.guidance.objective = GuidanceObjective::appearance;
  EXPECT_EQ(kind_of([&] { return sample(small_shape(1).latent, ZeroVelocityField(), {}, cfg); }),
            ErrorKind::InvalidArgument);
}

TEST(SampleGuided, ObjectiveNoneIsPlainSampling) {
  const auto shape = small_shape(3).latent;
  const GaussianVelocityField field({Vector::Constant(4, -0.2), 1.3});
  SamplerConfig cfg;
  cfg.steps = 40;
  cfg.seed = 11;
  const auto guided = sample_guided(shape, field, {}, cfg);
  EXPECT_EQ(guided.state.values(), sample(shape, field, {}, cfg).values());
  EXPECT_TRUE(guided.report.applications.empty());
}

TEST(SampleGuided, ZeroWeightIsBitIdenticalToSample) {
  const auto toy = small_shape(5);
  const GaussianVelocityField field({Vector::Constant(4, 0.3), 0.8});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SamplerConfig cfg;
    cfg.steps = 30;
    cfg.seed = seed;
    const auto plain = sample(toy.latent, field, {}, cfg);
    cfg.guidance.weight = 0.0;
    cfg.guidance.objective = GuidanceObjective::appearance;
    cfg.guidance.appearance_target = toy.latent.latents();
    for (auto mode : {GuidanceMode::gradient_step, GuidanceMode::optimizer_steps}) {
      cfg.guidance.mode = mode;
      const auto guided = sample_guided(toy.latent, field, {}, cfg);
      EXPECT_EQ(guided.state.values(), plain.values()) << "seed " << seed << " " << to_string(mode);
      EXPECT_EQ(guided.report.applications.size(), 30u);
    }
  }
}

TEST(SampleGuided, AppearanceGuidanceConverges) {
  const auto toy = small_shape(7);
  SamplerConfig cfg;
  cfg.seed = 1;
  cfg.guidance.objective = GuidanceObjective::appearance;
  cfg.guidance.appearance_target = toy.latent.latents();
  cfg.guidance.inner_steps = 50;
  const auto out = sample_guided(toy.latent, ZeroVelocityField(), {}, cfg);
  const auto& apps = out.report.applications;
  ASSERT_EQ(apps.size(), 300u);
  const double initial = appearance_loss(init_latent_state(toy.latent, 1).values(), toy.latent.latents());
  const double final_loss = appearance_loss(out.state.values(), toy.latent.latents());
  EXPECT_LT(final_loss, 1e-2);
  EXPECT_LT(final_loss, initial);
  EXPECT_DOUBLE_EQ(apps.back().loss_after, final_loss);
}

TEST(SampleGuided, ConvexObjectivesNeverIncreaseUnderTheZeroField) {
  const auto q = small_shape(8);
  const auto a = small_shape(9);
  for (auto objective : {GuidanceObjective::appearance, GuidanceObjective::global_pool}) {
    SamplerConfig cfg;
    cfg.seed = 2;
    cfg.guidance.objective = objective;
    cfg.guidance.appearance_target = a.latent.latents().topRows(q.latent.size());
    cfg.guidance.appearance_pool = a.latent.latents();
    cfg.guidance.inner_steps = 5;
    const auto out = sample_guided(q.latent, ZeroVelocityField(), {}, cfg);
    const auto& apps = out.report.applications;
    for (std::size_t i = 1; i < apps.size(); ++i) {
      EXPECT_TRUE(std::isfinite(apps[i].loss_after));
      EXPECT_LE(apps[i].loss_after, apps[i - 1].loss_after) << to_string(objective) << " application " << i;
    }
    EXPECT_LT(apps.back().loss_after, apps.front().loss_before);
  }
}

TEST(SampleGuided, StructureGuidanceBeatsTheUnguidedPairedRun) {
  const auto toy = small_shape(10);
  const auto labels = box_labels(toy.latent);
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SamplerConfig cfg;
    cfg.seed = seed;
    const auto plain = sample(toy.latent, ZeroVelocityField(), {}, cfg);
    cfg.guidance.objective = GuidanceObjective::structure;
    cfg.guidance.cluster_labels = labels;
    cfg.guidance.inner_steps = 5;
    const auto guided = sample_guided(toy.latent, ZeroVelocityField(), {}, cfg);
    if (structure_loss(guided.state.values(), labels.labels) < structure_loss(plain.values(), labels.labels)) ++wins;
  }
  EXPECT_GE(wins, 9);
}

TEST(SampleGuided, GuidanceCadenceAndPlacement) {
  const auto toy = small_shape(11);
  SamplerConfig cfg;
  cfg.steps = 10;
  cfg.guidance.objective = GuidanceObjective::appearance;
  cfg.guidance.appearance_target = toy.latent.latents();
  cfg.guidance.apply_every = 3;
  auto out = sample_guided(toy.latent, ZeroVelocityField(), {}, cfg);
  ASSERT_EQ(out.report.applications.size(), 4u);
  std::vector<std::uint32_t> steps;
  for (const auto& a : out.report.applications) steps.push_back(a.step);
  EXPECT_EQ(steps, (std::vector<std::uint32_t>{0, 3, 6, 9}));
  EXPECT_NEAR(out.report.applications[0].time, 0.9, 1e-12);
  cfg.placement = GuidancePlacement::before_flow_step;
  out = sample_guided(toy.latent, ZeroVelocityField(), {}, cfg);
  EXPECT_NEAR(out.report.applications[0].time, 1.0, 1e-12);
}

TEST(SampleGuided, MissingInputsAreReported) {
  const auto toy = small_shape(12);
  SamplerConfig cfg;
  cfg.guidance.objective = GuidanceObjective::structure;
  EXPECT_EQ(kind_of([&] { return sample_guided(toy.latent, ZeroVelocityField(), {}, cfg); }),
            ErrorKind::MissingLabels);
  cfg.guidance.objective = GuidanceObjective::appearance;
  EXPECT_EQ(kind_of([&] { return sample_guided(toy.latent, ZeroVelocityField(), {}, cfg); }),
            ErrorKind::MissingTarget);
}

TEST(SampleGuided, PureFunctionOfItsInputs) {
  const auto toy = small_shape(13);
  SamplerConfig cfg;
  cfg.steps = 50;
  cfg.seed = 77;
  cfg.guidance.objective = GuidanceObjective::structure;
  cfg.guidance.cluster_labels = box_labels(toy.latent);
  const GaussianVelocityField field({Vector::Constant(4, 0.1), 0.9});
  const auto a = sample_guided(toy.latent, field, {}, cfg);
  const auto b = sample_guided(toy.latent, field, {}, cfg);
  EXPECT_EQ(a.state.values(), b.state.values());
  ASSERT_EQ(a.report.applications.size(), b.report.applications.size());
  for (std::size_t i = 0; i < a.report.applications.size(); ++i) {
    EXPECT_EQ(a.report.applications[i].loss_after, b.report.applications[i].loss_after);
  }
}
