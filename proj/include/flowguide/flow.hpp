#pragma once

// Rectified flow: linear forward process, conditional flow matching loss, and reverse Euler
// sampling with optional guidance interleaved between flow steps.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/common.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/slat.hpp"

namespace flowguide {

/// Global conditioning signal. Image or text embeddings are represented as a plain vector.
struct Condition {
  enum class Kind { none, vector };

  Kind kind = Kind::none;
  Vector payload;

  static Condition none() { return {}; }
  static Condition vector(Vector v) {
    detail::require(v.size() > 0, ErrorKind::BadCondition, "vector condition must be non-empty");
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      detail::require(std::isfinite(v(i)), ErrorKind::BadCondition, "vector condition must be finite");
    }
    return Condition{Kind::vector, std::move(v)};
  }

  Eigen::Index width() const noexcept { return kind == Kind::vector ? payload.size() : 0; }
};

/// v(z, t | c). Implementations are deterministic and safe to share read-only across threads.
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual Matrix evaluate(const Matrix& values, double t, const Condition& condition) const = 0;
  virtual std::string name() const = 0;
  virtual std::size_t parameter_count() const = 0;
};

class ZeroVelocityField final : public VelocityField {
 public:
  Matrix evaluate(const Matrix& values, double, const Condition&) const override {
    return Matrix::Zero(values.rows(), values.cols());
  }
  std::string name() const override { return "zero"; }
  std::size_t parameter_count() const override { return 0; }
};

namespace detail {
inline void require_time(double t) {
  detail::require(t >= 0.0 && t <= 1.0, ErrorKind::TimeOutOfRange, "time " + std::to_string(t) + " outside [0, 1]");
}
}  // namespace detail

/// z(t) = (1 - t) z0 + t eps.
inline Matrix forward_interpolate(const Matrix& z0, const Matrix& eps, double t) {
  detail::require_same_shape(z0, eps, "forward_interpolate");
  detail::require_time(t);
  return (1.0 - t) * z0 + t * eps;
}

struct CfmSample {
  Matrix z0;
  Matrix eps;
  double t = 0;
  Condition condition;
};

/// Mean over the batch of |v(z(t), t | c) - (eps - z0)|^2.
inline double cfm_loss(const VelocityField& field, std::span<const CfmSample> batch) {
  detail::require(!batch.empty(), ErrorKind::EmptyBatch, "cfm_loss on an empty batch");
  double total = 0;
  for (const auto& item : batch) {
    const Matrix zt = forward_interpolate(item.z0, item.eps, item.t);
    const Matrix v = field.evaluate(zt, item.t, item.condition);
    total += (v - (item.eps - item.z0)).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

/// One reverse step from t to t - dt: values - dt * v(values, t | c). The field predicts
/// eps - z0 (data -> noise), so moving toward t = 0 subtracts it.
inline Matrix euler_step(const Matrix& values, double t, double dt, const VelocityField& field,
                         const Condition& condition) {
  detail::require_time(t);
  detail::require(t - dt >= -1e-12, ErrorKind::TimeOutOfRange, "step would move past t = 0");
  return values - dt * field.evaluate(values, t, condition);
}

enum class Schedule { linear };
enum class GuidancePlacement { after_flow_step, before_flow_step };

inline const char* to_string(GuidancePlacement p) noexcept {
  return p == GuidancePlacement::after_flow_step ? "after_flow_step" : "before_flow_step";
}

inline GuidancePlacement parse_guidance_placement(const std::string& s) {
  if (s == "after_flow_step") return GuidancePlacement::after_flow_step;
  if (s == "before_flow_step") return GuidancePlacement::before_flow_step;
  throw Error(ErrorKind::InvalidArgument, "unknown guidance placement '" + s + "'");
}

struct SamplerConfig {
  std::uint32_t steps = 300;
  Schedule schedule = Schedule::linear;
  std::uint64_t seed = 0;
  GuidanceSpec guidance;
  GuidancePlacement placement = GuidancePlacement::after_flow_step;
  bool record_trajectory = false;

  void validate() const {
    detail::require(steps >= 1, ErrorKind::InvalidArgument, "sampler needs at least one step");
  }
};

/// Time of flow step k on the linear grid: t_k = (T - k) / T, so t_0 = 1 and t_T = 0 exactly.
inline double grid_time(std::uint32_t k, std::uint32_t steps) {
  return static_cast<double>(steps - k) / static_cast<double>(steps);
}

struct GuidanceApplication {
  std::uint32_t step = 0;
  double time = 0;
  double loss_before = 0;
  double loss_after = 0;
};

struct GuidanceReport {
  GuidanceObjective objective = GuidanceObjective::none;
  std::vector<GuidanceApplication> applications;
};

struct SampleResult {
  LatentState state;
  GuidanceReport report;
  std::vector<Matrix> trajectory;  // values after every flow step, when requested
};

namespace detail {

class GuidanceRunner {
 public:
  GuidanceRunner(const GuidanceSpec& spec, Eigen::Index rows, Eigen::Index cols)
      : spec_(spec), state_(OptimizerState::zeros(rows, cols)) {}

  GuidanceApplication apply(Matrix& values, std::uint32_t step, double time) {
    GuidanceApplication rec;
    rec.step = step;
    rec.time = time;
    rec.loss_before = guidance_loss(spec_, values);
    // Weight 0 leaves the latents untouched. AdamW's decoupled decay would otherwise still
    // shrink them with a zero gradient.
    if (spec_.weight == 0.0) {
      rec.loss_after = rec.loss_before;
      return rec;
    }
    if (spec_.mode == GuidanceMode::gradient_step) {
      values -= spec_.weight * guidance_grad(spec_, values);
    } else {
      if (!spec_.persist_optimizer) state_ = OptimizerState::zeros(values.rows(), values.cols());
      for (std::uint32_t s = 0; s < spec_.inner_steps; ++s) {
        const Matrix grad = spec_.weight * guidance_grad(spec_, values);
        adamw_update(state_, values, grad, spec_.optimizer);
      }
    }
    detail::require(detail::all_finite(values), ErrorKind::NonFinite,
                    "guidance produced non-finite latents at step " + std::to_string(step), step);
    rec.loss_after = guidance_loss(spec_, values);
    return rec;
  }

 private:
  const GuidanceSpec& spec_;
  OptimizerState state_;
};

inline SampleResult run_sampler(const StructuredLatent& shape, const VelocityField& field, const Condition& condition,
                                const SamplerConfig& config, bool guided) {
  config.validate();
  LatentState state = init_latent_state(shape, config.seed);
  Matrix& values = state.values();
  SampleResult result{state, {}, {}};
  result.report.objective = guided ? config.guidance.objective : GuidanceObjective::none;

  std::optional<GuidanceRunner> runner;
  if (guided) {
    config.guidance.validate(values.rows(), values.cols());
    runner.emplace(config.guidance, values.rows(), values.cols());
  }

  const std::uint32_t steps = config.steps;
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::uint32_t k = 0; k < steps; ++k) {
    const double t = grid_time(k, steps);
    const double t_next = grid_time(k + 1, steps);
    const bool guide_now = runner.has_value() && (k % config.guidance.apply_every == 0);

    if (guide_now && config.placement == GuidancePlacement::before_flow_step) {
      result.report.applications.push_back(runner->apply(values, k, t));
    }
    values = euler_step(values, t, dt, field, condition);
    detail::require(detail::all_finite(values), ErrorKind::NonFinite,
                    "flow step " + std::to_string(k) + " produced non-finite latents", k);
    if (guide_now && config.placement == GuidancePlacement::after_flow_step) {
      result.report.applications.push_back(runner->apply(values, k, t_next));
    }
    state.set_time(t_next);
    if (config.record_trajectory) result.trajectory.push_back(values);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace detail

/// Plain reverse flow from seeded noise at t = 1 down to t = 0 in `steps` Euler steps.
/// The guidance objective must be `none`.
inline SampleResult sample_with_trajectory(const StructuredLatent& shape, const VelocityField& field,
                                           const Condition& condition, const SamplerConfig& config) {
  detail::require(!config.guidance.active(), ErrorKind::InvalidArgument,
                  "sample() runs without guidance; use sample_guided()");
  return detail::run_sampler(shape, field, condition, config, false);
}

inline LatentState sample(const StructuredLatent& shape, const VelocityField& field, const Condition& condition,
                          const SamplerConfig& config) {
  return sample_with_trajectory(shape, field, condition, config).state;
}

/// Reverse flow with guidance applied every `apply_every` flow steps (step index k, k mod
/// apply_every == 0). gradient_step subtracts weight * grad once; optimizer_steps runs
/// `inner_steps` AdamW steps on weight * loss. With objective `none` this is exactly sample().
inline SampleResult sample_guided(const StructuredLatent& shape, const VelocityField& field,
                                  const Condition& condition, const SamplerConfig& config) {
  return detail::run_sampler(shape, field, condition, config, config.guidance.active());
}

}  // namespace flowguide
