#pragma once

// Velocity fields with known answers. For Gaussian data z0 ~ N(mu, sigma^2 I) and eps ~ N(0, I),
// z(t) = a z0 + b eps with a = 1 - t, b = t is jointly Gaussian with the target u = eps - z0:
//
//   E[z]   = a mu          Var(z)    = a^2 sigma^2 + b^2
//   E[u]   = -mu           Cov(u, z) = b - a sigma^2
//
// so the exact rectified-flow velocity E[u | z(t) = z] is
//
//   v(z, t) = (b - a sigma^2) / (a^2 sigma^2 + b^2) * (z - a mu) - mu,
//
// with residual variance (1 + sigma^2) - (b - a sigma^2)^2 / (a^2 sigma^2 + b^2) per entry.
// That residual is the smallest CFM loss any field can reach at time t.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flowguide/common.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/guidance.hpp"

namespace flowguide {

struct GaussianFlowSpec {
  Vector mean;
  double std = 1.0;

  void validate() const {
    detail::require(mean.size() >= 1, ErrorKind::InvalidArgument, "Gaussian flow mean must be non-empty");
    detail::require(std > 0 && std::isfinite(std), ErrorKind::InvalidArgument, "Gaussian flow std must be positive");
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      detail::require(std::isfinite(mean(i)), ErrorKind::NonFinite, "Gaussian flow mean must be finite");
    }
  }
};

inline Matrix gaussian_analytic_velocity(const GaussianFlowSpec& spec, const Matrix& values, double t) {
  detail::require_time(t);
  detail::require(values.cols() == spec.mean.size(), ErrorKind::ChannelMismatch,
                  "values have " + std::to_string(values.cols()) + " channels, flow mean has " +
                      std::to_string(spec.mean.size()));
  const double a = 1.0 - t;
  const double b = t;
  const double s2 = spec.std * spec.std;
  const double gain = (b - a * s2) / (a * a * s2 + b * b);
  Matrix v(values.rows(), values.cols());
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      v(i, c) = gain * (values(i, c) - a * spec.mean(c)) - spec.mean(c);
    }
  }
  return v;
}

/// Var(eps - z0 | z(t)) per entry.
inline double gaussian_conditional_variance(const GaussianFlowSpec& spec, double t) {
  detail::require_time(t);
  const double a = 1.0 - t;
  const double b = t;
  const double s2 = spec.std * spec.std;
  const double cov = b - a * s2;
  return (1.0 + s2) - cov * cov / (a * a * s2 + b * b);
}

class GaussianVelocityField final : public VelocityField {
 public:
  explicit GaussianVelocityField(GaussianFlowSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  Matrix evaluate(const Matrix& values, double t, const Condition&) const override {
    return gaussian_analytic_velocity(spec_, values, t);
  }
  std::string name() const override { return "gaussian"; }
  std::size_t parameter_count() const override { return static_cast<std::size_t>(spec_.mean.size()) + 1; }
  const GaussianFlowSpec& spec() const noexcept { return spec_; }

 private:
  GaussianFlowSpec spec_;
};

/// Index of the hot entry of a one-hot selector over `count` components.
inline std::size_t one_hot_index(const Condition& condition, std::size_t count) {
  detail::require(condition.kind == Condition::Kind::vector, ErrorKind::BadCondition,
                  "mixture flow needs a one-hot vector condition");
  detail::require(static_cast<std::size_t>(condition.payload.size()) == count, ErrorKind::BadCondition,
                  "condition width " + std::to_string(condition.payload.size()) + " does not match " +
                      std::to_string(count) + " components");
  std::size_t hot = count;
  for (std::size_t i = 0; i < count; ++i) {
    const double v = condition.payload(static_cast<Eigen::Index>(i));
    if (v == 1.0) {
      detail::require(hot == count, ErrorKind::BadCondition, "condition has more than one hot entry");
      hot = i;
    } else {
      detail::require(v == 0.0, ErrorKind::BadCondition, "condition entries must be 0 or 1");
    }
  }
  detail::require(hot < count, ErrorKind::BadCondition, "condition has no hot entry");
  return hot;
}

inline Matrix mixture_conditional_velocity(std::span<const GaussianFlowSpec> components, const Matrix& values, double t,
                                           const Condition& condition) {
  detail::require(!components.empty(), ErrorKind::InvalidArgument, "mixture has no components");
  return gaussian_analytic_velocity(components[one_hot_index(condition, components.size())], values, t);
}

class MixtureVelocityField final : public VelocityField {
 public:
  explicit MixtureVelocityField(std::vector<GaussianFlowSpec> components) : components_(std::move(components)) {
    detail::require(!components_.empty(), ErrorKind::InvalidArgument, "mixture has no components");
    for (const auto& c : components_) {
      c.validate();
      detail::require(c.mean.size() == components_.front().mean.size(), ErrorKind::ChannelMismatch,
                      "mixture components must share a channel count");
    }
  }

  Matrix evaluate(const Matrix& values, double t, const Condition& condition) const override {
    return mixture_conditional_velocity(components_, values, t, condition);
  }
  std::string name() const override { return "mixture"; }
  std::size_t parameter_count() const override {
    return components_.size() * (static_cast<std::size_t>(components_.front().mean.size()) + 1);
  }
  const std::vector<GaussianFlowSpec>& components() const noexcept { return components_; }

 private:
  std::vector<GaussianFlowSpec> components_;
};

inline Condition one_hot(std::size_t index, std::size_t count) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(count));
  v(static_cast<Eigen::Index>(index)) = 1.0;
  return Condition::vector(std::move(v));
}

// ---------------------------------------------------------------------------------------------
// Trainable fields. Per voxel row the input is x = [z; t; c] of width C + 1 + condition_width.
//   affine: v = W x + b
//   mlp1:   v = W2 tanh(W1 x + b1) + b2
// Parameters live in one flat row vector (row-major W, then b; W1, b1, W2, b2) so the same AdamW
// step used for guidance trains them.

enum class Architecture { affine, mlp1 };

inline const char* to_string(Architecture a) noexcept { return a == Architecture::affine ? "affine" : "mlp1"; }

inline Architecture parse_architecture(const std::string& s) {
  if (s == "affine") return Architecture::affine;
  if (s == "mlp1") return Architecture::mlp1;
  throw Error(ErrorKind::InvalidArgument, "unknown architecture '" + s + "'");
}

class TrainableField final : public VelocityField {
 public:
  static constexpr std::uint32_t kDefaultHidden = 32;

  TrainableField(Architecture arch, std::uint32_t channels, std::uint32_t condition_width, std::uint32_t hidden,
                 Matrix parameters)
      : arch_(arch), channels_(channels), condition_width_(condition_width), hidden_(hidden),
        params_(std::move(parameters)) {
    detail::require(channels_ >= 1, ErrorKind::InvalidArgument, "trainable field needs at least one channel");
    detail::require(arch_ == Architecture::affine || hidden_ >= 1, ErrorKind::InvalidArgument,
                    "mlp1 needs a positive hidden width");
    detail::require(params_.rows() == 1 && static_cast<std::size_t>(params_.cols()) == expected_parameter_count(),
                    ErrorKind::ShapeMismatch,
                    "expected " + std::to_string(expected_parameter_count()) + " parameters, got " +
                        std::to_string(params_.size()));
    detail::require(detail::all_finite(params_), ErrorKind::NonFinite, "trainable field parameters are not finite");
  }

  /// Zero-initialized affine field.
  static TrainableField affine(std::uint32_t channels, std::uint32_t condition_width = 0) {
    const std::size_t in = channels + 1 + condition_width;
    return TrainableField(Architecture::affine, channels, condition_width, 0,
                          Matrix::Zero(1, static_cast<Eigen::Index>(channels * in + channels)));
  }

  /// mlp1 with N(0, 1/fan_in) weights and zero biases.
  static TrainableField mlp1(std::uint32_t channels, std::uint32_t condition_width, std::uint32_t hidden,
                             std::uint64_t seed) {
    const std::size_t in = channels + 1 + condition_width;
    const std::size_t count = hidden * in + hidden + channels * hidden + channels;
    Matrix p = Matrix::Zero(1, static_cast<Eigen::Index>(count));
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t k = 0; k < hidden * in; ++k) p(0, static_cast<Eigen::Index>(k)) = s1 * normal(gen);
    const std::size_t w2 = hidden * in + hidden;
    for (std::size_t k = 0; k < channels * hidden; ++k) p(0, static_cast<Eigen::Index>(w2 + k)) = s2 * normal(gen);
    return TrainableField(Architecture::mlp1, channels, condition_width, hidden, std::move(p));
  }

  Architecture architecture() const noexcept { return arch_; }
  std::uint32_t channels() const noexcept { return channels_; }
  std::uint32_t condition_width() const noexcept { return condition_width_; }
  std::uint32_t hidden() const noexcept { return hidden_; }
  const Matrix& parameters() const noexcept { return params_; }

  TrainableField with_parameters(Matrix p) const {
    return TrainableField(arch_, channels_, condition_width_, hidden_, std::move(p));
  }

  std::size_t expected_parameter_count() const noexcept {
    const std::size_t in = input_width();
    if (arch_ == Architecture::affine) return channels_ * in + channels_;
    return hidden_ * in + hidden_ + channels_ * hidden_ + channels_;
  }

  Matrix evaluate(const Matrix& values, double t, const Condition& condition) const override {
    return forward(inputs(values, t, condition)).output;
  }
  std::string name() const override { return std::string("trained_") + to_string(arch_); }
  std::size_t parameter_count() const override { return static_cast<std::size_t>(params_.size()); }

  /// Batch CFM loss (mean over items of the squared error summed over the item's matrix) and,
  /// when `grad` is non-null, its gradient with respect to parameters() by backpropagation.
  double cfm_loss_and_grad(std::span<const CfmSample> batch, Matrix* grad) const {
    detail::require(!batch.empty(), ErrorKind::EmptyBatch, "cfm loss on an empty batch");
    if (grad) *grad = Matrix::Zero(1, params_.cols());
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0;
    for (const auto& item : batch) {
      const Matrix zt = forward_interpolate(item.z0, item.eps, item.t);
      const Matrix x = inputs(zt, item.t, item.condition);
      const Forward f = forward(x);
      const Matrix residual = f.output - (item.eps - item.z0);
      total += residual.squaredNorm();
      if (grad) backward(x, f, (2.0 * inv_b) * residual, *grad);
    }
    return total * inv_b;
  }

 private:
  struct Forward {
    Matrix hidden;  // tanh activations (mlp1 only)
    Matrix output;
  };

  std::size_t input_width() const noexcept { return channels_ + 1 + condition_width_; }

  Matrix inputs(const Matrix& values, double t, const Condition& condition) const {
    detail::require(values.cols() == static_cast<Eigen::Index>(channels_), ErrorKind::ChannelMismatch,
                    "trainable field expects " + std::to_string(channels_) + " channels");
    detail::require(condition.width() == static_cast<Eigen::Index>(condition_width_), ErrorKind::BadCondition,
                    "trainable field expects a condition of width " + std::to_string(condition_width_));
    Matrix x(values.rows(), static_cast<Eigen::Index>(input_width()));
    x.leftCols(channels_) = values;
    x.col(channels_).setConstant(t);
    for (std::uint32_t c = 0; c < condition_width_; ++c) {
      x.col(channels_ + 1 + c).setConstant(condition.payload(c));
    }
    return x;
  }

  using ConstMap = Eigen::Map<const Matrix>;
  using MutMap = Eigen::Map<Matrix>;

  Forward forward(const Matrix& x) const {
    const auto in = static_cast<Eigen::Index>(input_width());
    const auto c = static_cast<Eigen::Index>(channels_);
    const double* p = params_.data();
    Forward f;
    if (arch_ == Architecture::affine) {
      ConstMap w(p, c, in);
      Eigen::Map<const Eigen::RowVectorXd> b(p + c * in, c);
      f.output = (x * w.transpose()).rowwise() + b;
      return f;
    }
    const auto h = static_cast<Eigen::Index>(hidden_);
    ConstMap w1(p, h, in);
    Eigen::Map<const Eigen::RowVectorXd> b1(p + h * in, h);
    ConstMap w2(p + h * in + h, c, h);
    Eigen::Map<const Eigen::RowVectorXd> b2(p + h * in + h + c * h, c);
    f.hidden = ((x * w1.transpose()).rowwise() + b1).array().tanh().matrix();
    f.output = (f.hidden * w2.transpose()).rowwise() + b2;
    return f;
  }

  void backward(const Matrix& x, const Forward& f, const Matrix& d_out, Matrix& grad) const {
    const auto in = static_cast<Eigen::Index>(input_width());
    const auto c = static_cast<Eigen::Index>(channels_);
    double* g = grad.data();
    if (arch_ == Architecture::affine) {
      MutMap gw(g, c, in);
      Eigen::Map<Eigen::RowVectorXd> gb(g + c * in, c);
      gw += d_out.transpose() * x;
      gb += d_out.colwise().sum();
      return;
    }
    const auto h = static_cast<Eigen::Index>(hidden_);
    const double* p = params_.data();
    ConstMap w2(p + h * in + h, c, h);
    MutMap gw1(g, h, in);
    Eigen::Map<Eigen::RowVectorXd> gb1(g + h * in, h);
    MutMap gw2(g + h * in + h, c, h);
    Eigen::Map<Eigen::RowVectorXd> gb2(g + h * in + h + c * h, c);
    gw2 += d_out.transpose() * f.hidden;
    gb2 += d_out.colwise().sum();
    const Matrix d_hidden = d_out * w2;
    const Matrix d_pre = (d_hidden.array() * (1.0 - f.hidden.array().square())).matrix();
    gw1 += d_pre.transpose() * x;
    gb1 += d_pre.colwise().sum();
  }

  Architecture arch_;
  std::uint32_t channels_;
  std::uint32_t condition_width_;
  std::uint32_t hidden_;
  Matrix params_;
};

// ---------------------------------------------------------------------------------------------
// CFM training on toy data.

/// Training distribution: one Gaussian (unconditional) or a mixture selected by a one-hot condition.
using ToyData = std::variant<GaussianFlowSpec, std::vector<GaussianFlowSpec>>;

inline Eigen::Index toy_channels(const ToyData& data) {
  if (const auto* g = std::get_if<GaussianFlowSpec>(&data)) return g->mean.size();
  return std::get<std::vector<GaussianFlowSpec>>(data).front().mean.size();
}

inline std::size_t toy_condition_width(const ToyData& data) {
  if (std::holds_alternative<GaussianFlowSpec>(data)) return 0;
  return std::get<std::vector<GaussianFlowSpec>>(data).size();
}

/// Draws `count` single-row CFM samples: t ~ U[0,1], z0 from the data, eps ~ N(0, I), in that
/// order per item from one generator, so a batch is a pure function of the generator state.
inline std::vector<CfmSample> draw_cfm_batch(const ToyData& data, std::size_t count, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index c = toy_channels(data);
  std::vector<CfmSample> batch;
  batch.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    CfmSample s;
    s.t = unit(gen);
    const GaussianFlowSpec* spec = std::get_if<GaussianFlowSpec>(&data);
    if (!spec) {
      const auto& comps = std::get<std::vector<GaussianFlowSpec>>(data);
      std::uniform_int_distribution<std::size_t> pick(0, comps.size() - 1);
      const std::size_t k = pick(gen);
      spec = &comps[k];
      s.condition = one_hot(k, comps.size());
    }
    s.z0.resize(1, c);
    s.eps.resize(1, c);
    for (Eigen::Index j = 0; j < c; ++j) s.z0(0, j) = spec->mean(j) + spec->std * normal(gen);
    for (Eigen::Index j = 0; j < c; ++j) s.eps(0, j) = normal(gen);
    batch.push_back(std::move(s));
  }
  return batch;
}

struct TrainOptions {
  std::uint32_t steps = 5000;
  std::uint32_t batch_size = 64;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
};

struct TrainResult {
  TrainableField field;
  std::vector<double> loss_curve;  // batch loss before each update
};

/// AdamW on the batch CFM loss; every batch comes from one generator seeded with options.seed.
inline TrainResult train_cfm(TrainableField field, const ToyData& data, const TrainOptions& options) {
  options.optimizer.validate();
  detail::require(options.batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be positive");
  detail::require(toy_channels(data) == static_cast<Eigen::Index>(field.channels()), ErrorKind::ChannelMismatch,
                  "training data and field disagree on channel count");
  detail::require(toy_condition_width(data) == field.condition_width(), ErrorKind::BadCondition,
                  "training data and field disagree on condition width");
  if (const auto* g = std::get_if<GaussianFlowSpec>(&data)) {
    g->validate();
  } else {
    for (const auto& c : std::get<std::vector<GaussianFlowSpec>>(data)) c.validate();
  }

  std::mt19937_64 gen(options.seed);
  Matrix params = field.parameters();
  OptimizerState state = OptimizerState::zeros(1, params.cols());
  TrainResult result{field, {}};
  result.loss_curve.reserve(options.steps);
  Matrix grad;
  for (std::uint32_t step = 0; step < options.steps; ++step) {
    const auto batch = draw_cfm_batch(data, options.batch_size, gen);
    const TrainableField current = field.with_parameters(params);
    result.loss_curve.push_back(current.cfm_loss_and_grad(batch, &grad));
    adamw_update(state, params, grad, options.optimizer);
  }
  result.field = field.with_parameters(std::move(params));
  return result;
}

// ---------------------------------------------------------------------------------------------
// Held-out evaluation.

inline constexpr std::size_t kHeldOutSize = 10000;
inline constexpr std::uint64_t kHeldOutSeed = 20240917;

/// Held-out CFM samples from their own generator. The default seed is fixed so every run is
/// scored on the same set.
inline std::vector<CfmSample> draw_held_out(const ToyData& data, std::uint64_t seed = kHeldOutSeed,
                                            std::size_t count = kHeldOutSize) {
  std::mt19937_64 gen(seed);
  return draw_cfm_batch(data, count, gen);
}

/// Mean over samples and entries of (a - b)^2, both fields evaluated at z(t).
inline double field_mse(const VelocityField& a, const VelocityField& b, std::span<const CfmSample> samples) {
  detail::require(!samples.empty(), ErrorKind::EmptyBatch, "field_mse on an empty sample set");
  double total = 0;
  double entries = 0;
  for (const auto& s : samples) {
    const Matrix zt = forward_interpolate(s.z0, s.eps, s.t);
    total += (a.evaluate(zt, s.t, s.condition) - b.evaluate(zt, s.t, s.condition)).squaredNorm();
    entries += static_cast<double>(zt.size());
  }
  return total / entries;
}

/// Per-sample CFM losses, for Monte-Carlo error bars.
inline std::vector<double> cfm_losses(const VelocityField& field, std::span<const CfmSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(cfm_loss(field, std::span(&s, 1)));
  return out;
}

}  // namespace flowguide
