#pragma once

// Guidance objectives over query latents, their analytic gradients, and the optimizer used to
// apply them between flow steps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/common.hpp"
#include "flowguide/partition.hpp"

namespace flowguide {

// ---------------------------------------------------------------------------------------------
// Appearance objective: mean over query voxels of the squared distance to the matched latent.

inline double appearance_loss(const Matrix& values, const Matrix& target) {
  detail::require_same_shape(values, target, "appearance_loss");
  detail::require(values.rows() > 0, ErrorKind::EmptyInput, "appearance_loss on empty latents");
  return (values - target).squaredNorm() / static_cast<double>(values.rows());
}

inline Matrix appearance_loss_grad(const Matrix& values, const Matrix& target) {
  detail::require_same_shape(values, target, "appearance_loss_grad");
  detail::require(values.rows() > 0, ErrorKind::EmptyInput, "appearance_loss_grad on empty latents");
  return (2.0 / static_cast<double>(values.rows())) * (values - target);
}

/// Gathers target rows: row i = appearance row correspondence.target[i].
inline Matrix gather_targets(const Matrix& appearance_latents, std::span<const std::uint32_t> correspondence) {
  Matrix out(static_cast<Eigen::Index>(correspondence.size()), appearance_latents.cols());
  for (std::size_t i = 0; i < correspondence.size(); ++i) {
    detail::require(correspondence[i] < appearance_latents.rows(), ErrorKind::OutOfBounds,
                    "correspondence entry " + std::to_string(i) + " points past the appearance latent", i);
    out.row(static_cast<Eigen::Index>(i)) = appearance_latents.row(correspondence[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Structure objective: part-aware contrastive loss on cosine self-similarity of the latent rows.
// Positives of voxel i are the other voxels with its label. The denominator runs either over the
// voxels with a different label (`complement`) or over every j != i (`all_pairs`).

enum class Denominator { complement, all_pairs };

inline const char* to_string(Denominator d) noexcept {
  return d == Denominator::complement ? "complement" : "all_pairs";
}

inline Denominator parse_denominator(const std::string& s) {
  if (s == "complement") return Denominator::complement;
  if (s == "all_pairs") return Denominator::all_pairs;
  throw Error(ErrorKind::InvalidArgument, "unknown denominator '" + s + "'");
}

namespace detail {

struct StructureTerms {
  double loss = 0;
  Matrix unit;                // rows normalized
  Eigen::VectorXd norms;      // row norms
  Matrix dsim;                // d loss / d sim_ij (not symmetrized)
};

inline StructureTerms structure_terms(const Matrix& values, std::span<const std::uint32_t> labels, Denominator denom,
                                      bool want_grad) {
  const Eigen::Index n = values.rows();
  detail::require(static_cast<std::size_t>(n) == labels.size(), ErrorKind::ShapeMismatch,
                  "structure loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  detail::require(n >= 2, ErrorKind::EmptyPositiveSet, "structure loss needs at least two voxels", 0);

  StructureTerms out;
  out.norms.resize(n);
  out.unit.resize(n, values.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = values.row(i).norm();
    detail::require(norm > 0, ErrorKind::ZeroNormRow, "latent row " + std::to_string(i) + " has zero norm",
                    static_cast<std::size_t>(i));
    out.norms(i) = norm;
    out.unit.row(i) = values.row(i) / norm;
  }
  const Matrix sim = out.unit * out.unit.transpose();
  if (want_grad) out.dsim = Matrix::Zero(n, n);

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> pos_w(static_cast<std::size_t>(n));
  std::vector<double> den_w(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto li = labels[static_cast<std::size_t>(i)];
    double pos_max = -std::numeric_limits<double>::infinity();
    double den_max = -std::numeric_limits<double>::infinity();
    bool any_pos = false;
    bool any_den = false;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool same = labels[static_cast<std::size_t>(j)] == li;
      if (same) {
        any_pos = true;
        pos_max = std::max(pos_max, sim(i, j));
      }
      if (denom == Denominator::all_pairs || !same) {
        any_den = true;
        den_max = std::max(den_max, sim(i, j));
      }
    }
    detail::require(any_pos, ErrorKind::EmptyPositiveSet,
                    "voxel " + std::to_string(i) + " has no other voxel in its cluster", static_cast<std::size_t>(i));
    detail::require(any_den, ErrorKind::EmptyComplement,
                    "voxel " + std::to_string(i) + " has no voxel outside its cluster", static_cast<std::size_t>(i));

    double pos_sum = 0;
    double den_sum = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      pos_w[static_cast<std::size_t>(j)] = 0;
      den_w[static_cast<std::size_t>(j)] = 0;
      if (j == i) continue;
      const bool same = labels[static_cast<std::size_t>(j)] == li;
      if (same) {
        pos_w[static_cast<std::size_t>(j)] = std::exp(sim(i, j) - pos_max);
        pos_sum += pos_w[static_cast<std::size_t>(j)];
      }
      if (denom == Denominator::all_pairs || !same) {
        den_w[static_cast<std::size_t>(j)] = std::exp(sim(i, j) - den_max);
        den_sum += den_w[static_cast<std::size_t>(j)];
      }
    }
    const double lse_pos = pos_max + std::log(pos_sum);
    const double lse_den = den_max + std::log(den_sum);
    out.loss += inv_n * (lse_den - lse_pos);

    if (want_grad) {
      for (Eigen::Index j = 0; j < n; ++j) {
        out.dsim(i, j) = inv_n * (den_w[static_cast<std::size_t>(j)] / den_sum -
                                  pos_w[static_cast<std::size_t>(j)] / pos_sum);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Log-sum-exps use max subtraction.
inline double structure_loss(const Matrix& values, std::span<const std::uint32_t> labels,
                             Denominator denom = Denominator::all_pairs) {
  return detail::structure_terms(values, labels, denom, false).loss;
}

/// Exact gradient through the cosine normalization: with u_i = x_i / |x_i| and G = dL/dsim,
/// dL/dx_i = (I - u_i u_i^T) / |x_i| * sum_j (G_ij + G_ji) u_j.
inline Matrix structure_loss_grad(const Matrix& values, std::span<const std::uint32_t> labels,
                                  Denominator denom = Denominator::all_pairs) {
  const auto t = detail::structure_terms(values, labels, denom, true);
  const Matrix sym = t.dsim + t.dsim.transpose();
  const Matrix du = sym * t.unit;
  Matrix grad(values.rows(), values.cols());
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    const double radial = du.row(i).dot(t.unit.row(i));
    grad.row(i) = (du.row(i) - radial * t.unit.row(i)) / t.norms(i);
  }
  return grad;
}

// ---------------------------------------------------------------------------------------------
// Pooled-feature ablation: compare per-channel (min, max, mean) of the query and appearance latents.

namespace detail {

struct Pooled {
  Eigen::VectorXd min, max, mean;
  std::vector<Eigen::Index> argmin, argmax;  // first achieving row
};

inline Pooled pool(const Matrix& m) {
  detail::require(m.rows() > 0 && m.cols() > 0, ErrorKind::EmptyInput, "cannot pool an empty latent");
  Pooled p;
  const auto c = m.cols();
  p.min.resize(c);
  p.max.resize(c);
  p.mean.resize(c);
  p.argmin.assign(static_cast<std::size_t>(c), 0);
  p.argmax.assign(static_cast<std::size_t>(c), 0);
  for (Eigen::Index j = 0; j < c; ++j) {
    p.min(j) = p.max(j) = m(0, j);
    double sum = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double v = m(i, j);
      sum += v;
      if (v < p.min(j)) {
        p.min(j) = v;
        p.argmin[static_cast<std::size_t>(j)] = i;
      }
      if (v > p.max(j)) {
        p.max(j) = v;
        p.argmax[static_cast<std::size_t>(j)] = i;
      }
    }
    p.mean(j) = sum / static_cast<double>(m.rows());
  }
  return p;
}

}  // namespace detail

inline double global_pool_loss(const Matrix& values, const Matrix& appearance_values) {
  detail::require(values.cols() == appearance_values.cols(), ErrorKind::ShapeMismatch,
                  "global_pool_loss: channel counts differ");
  const auto q = detail::pool(values);
  const auto a = detail::pool(appearance_values);
  return (q.min - a.min).squaredNorm() + (q.max - a.max).squaredNorm() + (q.mean - a.mean).squaredNorm();
}

/// Subgradient; min/max ties credit the first achieving row.
inline Matrix global_pool_loss_grad(const Matrix& values, const Matrix& appearance_values) {
  detail::require(values.cols() == appearance_values.cols(), ErrorKind::ShapeMismatch,
                  "global_pool_loss_grad: channel counts differ");
  const auto q = detail::pool(values);
  const auto a = detail::pool(appearance_values);
  const double inv_l = 1.0 / static_cast<double>(values.rows());
  Matrix grad(values.rows(), values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    grad.col(j).setConstant(2.0 * (q.mean(j) - a.mean(j)) * inv_l);
    grad(q.argmin[static_cast<std::size_t>(j)], j) += 2.0 * (q.min(j) - a.min(j));
    grad(q.argmax[static_cast<std::size_t>(j)], j) += 2.0 * (q.max(j) - a.max(j));
  }
  return grad;
}

// ---------------------------------------------------------------------------------------------

/// Central differences (L(x + h e) - L(x - h e)) / 2h for every entry of `point`.
template <class Loss>
Matrix finite_difference_grad(Loss&& loss, const Matrix& point, double h) {
  detail::require(h > 0, ErrorKind::InvalidArgument, "finite difference step must be positive");
  Matrix x = point;
  Matrix grad(point.rows(), point.cols());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = x.data()[k];
    x.data()[k] = orig + h;
    const double up = loss(static_cast<const Matrix&>(x));
    x.data()[k] = orig - h;
    const double down = loss(static_cast<const Matrix&>(x));
    x.data()[k] = orig;
    grad.data()[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// max_k |a_k - b_k| / max(|b|_inf, floor). The floor keeps all-zero references from
/// reporting infinite error.
inline double max_relative_error(const Matrix& analytic, const Matrix& reference, double floor = 1e-8) {
  detail::require_same_shape(analytic, reference, "max_relative_error");
  const double scale = std::max(reference.cwiseAbs().maxCoeff(), floor);
  return (analytic - reference).cwiseAbs().maxCoeff() / scale;
}

// ---------------------------------------------------------------------------------------------
// AdamW.

struct OptimizerConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    detail::require(learning_rate > 0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
                    "learning_rate must be positive");
    detail::require(beta1 > 0 && beta1 < 1, ErrorKind::InvalidArgument, "beta1 must be in (0, 1)");
    detail::require(beta2 > 0 && beta2 < 1, ErrorKind::InvalidArgument, "beta2 must be in (0, 1)");
    detail::require(eps > 0, ErrorKind::InvalidArgument, "eps must be positive");
    detail::require(weight_decay >= 0 && std::isfinite(weight_decay), ErrorKind::InvalidArgument,
                    "weight_decay must be nonnegative");
  }
};

struct OptimizerState {
  Matrix first_moment;
  Matrix second_moment;
  std::uint64_t step_count = 0;

  static OptimizerState zeros(Eigen::Index rows, Eigen::Index cols) {
    return OptimizerState{Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), 0};
  }
};

/// In-place decoupled-weight-decay Adam step. Decay is applied to the values before the moment update.
inline void adamw_update(OptimizerState& state, Matrix& values, const Matrix& grad, const OptimizerConfig& cfg) {
  detail::require_same_shape(values, grad, "adamw_step");
  if (state.first_moment.size() == 0 && state.step_count == 0) {
    state.first_moment = Matrix::Zero(values.rows(), values.cols());
    state.second_moment = Matrix::Zero(values.rows(), values.cols());
  }
  detail::require_same_shape(values, state.first_moment, "adamw_step state");
  detail::require_same_shape(values, state.second_moment, "adamw_step state");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = cfg.learning_rate * cfg.weight_decay;
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    double& x = values.data()[k];
    double& m = state.first_moment.data()[k];
    double& v = state.second_moment.data()[k];
    const double g = grad.data()[k];
    x -= decay * x;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / bias1;
    const double v_hat = v / bias2;
    x -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

inline std::pair<OptimizerState, Matrix> adamw_step(const OptimizerState& state, const Matrix& values,
                                                    const Matrix& grad, const OptimizerConfig& cfg) {
  OptimizerState next = state;
  Matrix updated = values;
  adamw_update(next, updated, grad, cfg);
  return {std::move(next), std::move(updated)};
}

// ---------------------------------------------------------------------------------------------
// Guidance selection.

enum class GuidanceObjective { none, appearance, structure, global_pool };
enum class GuidanceMode { gradient_step, optimizer_steps };

inline const char* to_string(GuidanceObjective o) noexcept {
  switch (o) {
    case GuidanceObjective::none: return "none";
    case GuidanceObjective::appearance: return "appearance";
    case GuidanceObjective::structure: return "structure";
    case GuidanceObjective::global_pool: return "global_pool";
  }
  return "unknown";
}

inline GuidanceObjective parse_guidance_objective(const std::string& s) {
  if (s == "none") return GuidanceObjective::none;
  if (s == "appearance") return GuidanceObjective::appearance;
  if (s == "structure") return GuidanceObjective::structure;
  if (s == "global_pool") return GuidanceObjective::global_pool;
  throw Error(ErrorKind::InvalidArgument, "unknown guidance objective '" + s + "'");
}

inline const char* to_string(GuidanceMode m) noexcept {
  return m == GuidanceMode::gradient_step ? "gradient_step" : "optimizer_steps";
}

inline GuidanceMode parse_guidance_mode(const std::string& s) {
  if (s == "gradient_step") return GuidanceMode::gradient_step;
  if (s == "optimizer_steps") return GuidanceMode::optimizer_steps;
  throw Error(ErrorKind::InvalidArgument, "unknown guidance mode '" + s + "'");
}

struct GuidanceSpec {
  GuidanceObjective objective = GuidanceObjective::none;
  double weight = 1.0;
  GuidanceMode mode = GuidanceMode::optimizer_steps;
  std::uint32_t inner_steps = 1;
  OptimizerConfig optimizer;
  std::uint32_t apply_every = 1;
  Denominator denominator = Denominator::all_pairs;
  /// Keep AdamW moments across flow steps (false resets them at every application).
  bool persist_optimizer = true;

  /// appearance: L_q x C matrix of matched appearance latents.
  std::optional<Matrix> appearance_target;
  /// global_pool: the full appearance latent matrix (any row count).
  std::optional<Matrix> appearance_pool;
  /// structure: labels over the query voxels.
  std::optional<ClusterAssignment> cluster_labels;

  bool active() const noexcept { return objective != GuidanceObjective::none; }

  void validate(Eigen::Index rows, Eigen::Index cols) const {
    detail::require(weight >= 0 && std::isfinite(weight), ErrorKind::InvalidArgument,
                    "guidance weight must be finite and nonnegative");
    detail::require(inner_steps >= 1, ErrorKind::InvalidArgument, "inner_steps must be positive");
    detail::require(apply_every >= 1, ErrorKind::InvalidArgument, "apply_every must be positive");
    optimizer.validate();
    switch (objective) {
      case GuidanceObjective::none:
        break;
      case GuidanceObjective::appearance:
        detail::require(appearance_target.has_value(), ErrorKind::MissingTarget,
                        "appearance guidance needs an appearance target");
        detail::require(appearance_target->rows() == rows && appearance_target->cols() == cols,
                        ErrorKind::ShapeMismatch, "appearance target must match the query latent shape");
        break;
      case GuidanceObjective::global_pool:
        detail::require(appearance_pool.has_value(), ErrorKind::MissingTarget,
                        "global_pool guidance needs appearance latents");
        detail::require(appearance_pool->cols() == cols && appearance_pool->rows() > 0, ErrorKind::ShapeMismatch,
                        "appearance latents must share the query channel count");
        break;
      case GuidanceObjective::structure:
        detail::require(cluster_labels.has_value(), ErrorKind::MissingLabels,
                        "structure guidance needs cluster labels");
        detail::require(cluster_labels->labels.size() == static_cast<std::size_t>(rows), ErrorKind::ShapeMismatch,
                        "cluster labels must cover every query voxel");
        break;
    }
  }
};

/// Unweighted guidance loss at `values`.
inline double guidance_loss(const GuidanceSpec& spec, const Matrix& values) {
  switch (spec.objective) {
    case GuidanceObjective::appearance: return appearance_loss(values, *spec.appearance_target);
    case GuidanceObjective::structure: return structure_loss(values, spec.cluster_labels->labels, spec.denominator);
    case GuidanceObjective::global_pool: return global_pool_loss(values, *spec.appearance_pool);
    case GuidanceObjective::none: return 0.0;
  }
  return 0.0;
}

/// Unweighted guidance gradient at `values`.
inline Matrix guidance_grad(const GuidanceSpec& spec, const Matrix& values) {
  switch (spec.objective) {
    case GuidanceObjective::appearance: return appearance_loss_grad(values, *spec.appearance_target);
    case GuidanceObjective::structure:
      return structure_loss_grad(values, spec.cluster_labels->labels, spec.denominator);
    case GuidanceObjective::global_pool: return global_pool_loss_grad(values, *spec.appearance_pool);
    case GuidanceObjective::none: return Matrix::Zero(values.rows(), values.cols());
  }
  return Matrix::Zero(values.rows(), values.cols());
}

}  // namespace flowguide
