#pragma once

// Seeded finite-difference sweep over every analytic gradient in the library.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowguide/flowguide.hpp"

namespace flowguide::cli {

struct GradcheckOptions {
  std::uint32_t instances = 100;
  std::uint64_t seed = 0;
  double h = 1e-4;
  double tol = 1e-5;
  double pool_tol = 1e-4;  // pooled and CFM families
};

struct GradcheckFamily {
  std::string name;
  double tolerance = 0;
  double max_rel_err = 0;
  std::uint32_t instances = 0;

  bool ok() const { return max_rel_err < tolerance; }
};

namespace detail {

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& gen) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(gen);
  return m;
}

inline std::uint32_t uniform_int(std::mt19937_64& gen, std::uint32_t lo, std::uint32_t hi) {
  return std::uniform_int_distribution<std::uint32_t>(lo, hi)(gen);
}

// Rows well away from the origin: the cosine gradient scales like 1/|x|.
inline Matrix structure_point(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& gen) {
  Matrix m = gaussian_matrix(rows, cols, gen);
  for (Eigen::Index i = 0; i < rows; ++i) {
    while (m.row(i).norm() < 0.5) m.row(i) = gaussian_matrix(1, cols, gen);
  }
  return m;
}

// Every cluster has at least two members, and there are at least two clusters.
inline std::vector<std::uint32_t> structure_labels(std::size_t n, std::mt19937_64& gen) {
  const std::uint32_t k = uniform_int(gen, 2, static_cast<std::uint32_t>(std::max<std::size_t>(2, n / 2)));
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i < 2 * k ? i / 2 : uniform_int(gen, 0, k - 1));
  std::shuffle(labels.begin(), labels.end(), gen);
  return labels;
}

// Per-channel min and max must be unique by a margin larger than the step, or the
// difference quotient straddles a kink.
inline bool pool_well_separated(const Matrix& m, double margin) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    std::vector<double> col;
    for (Eigen::Index i = 0; i < m.rows(); ++i) col.push_back(m(i, j));
    std::sort(col.begin(), col.end());
    if (col.size() >= 2 && (col[1] - col[0] < margin || col[col.size() - 1] - col[col.size() - 2] < margin)) {
      return false;
    }
  }
  return true;
}

}  // namespace detail

/// Families: appearance, structure (all_pairs and complement), global_pool, cfm_affine, cfm_mlp1.
/// Each instance has L in [2, 20] and C in [1, 8] (C >= 2 for structure).
inline std::vector<GradcheckFamily> run_gradcheck(const GradcheckOptions& opt) {
  std::mt19937_64 gen(opt.seed);
  GradcheckFamily appearance{"appearance", opt.tol, 0, 0};
  GradcheckFamily structure_all{"structure_all_pairs", opt.tol, 0, 0};
  GradcheckFamily structure_comp{"structure_complement", opt.tol, 0, 0};
  GradcheckFamily pool{"global_pool", opt.pool_tol, 0, 0};
  GradcheckFamily cfm_affine{"cfm_affine", opt.pool_tol, 0, 0};
  GradcheckFamily cfm_mlp{"cfm_mlp1", opt.pool_tol, 0, 0};
  auto record = [](GradcheckFamily& f, double err) {
    f.max_rel_err = std::max(f.max_rel_err, err);
    ++f.instances;
  };

  for (std::uint32_t n = 0; n < opt.instances; ++n) {
    const auto l = static_cast<Eigen::Index>(detail::uniform_int(gen, 2, 20));
    const auto c = static_cast<Eigen::Index>(detail::uniform_int(gen, 1, 8));

    {
      const Matrix x = detail::gaussian_matrix(l, c, gen);
      const Matrix t = detail::gaussian_matrix(l, c, gen);
      const Matrix fd = finite_difference_grad([&](const Matrix& p) { return appearance_loss(p, t); }, x, opt.h);
      record(appearance, max_relative_error(appearance_loss_grad(x, t), fd));
    }
    {
      const Eigen::Index cs = std::max<Eigen::Index>(c, 2);
      const Matrix x = detail::structure_point(std::max<Eigen::Index>(l, 4), cs, gen);
      const auto labels = detail::structure_labels(static_cast<std::size_t>(x.rows()), gen);
      for (auto denom : {Denominator::all_pairs, Denominator::complement}) {
        const Matrix fd =
            finite_difference_grad([&](const Matrix& p) { return structure_loss(p, labels, denom); }, x, opt.h);
        record(denom == Denominator::all_pairs ? structure_all : structure_comp,
               max_relative_error(structure_loss_grad(x, labels, denom), fd));
      }
    }
    {
      Matrix x = detail::gaussian_matrix(l, c, gen);
      while (!detail::pool_well_separated(x, 20 * opt.h)) x = detail::gaussian_matrix(l, c, gen);
      const Matrix a = detail::gaussian_matrix(static_cast<Eigen::Index>(detail::uniform_int(gen, 1, 20)), c, gen);
      const Matrix fd = finite_difference_grad([&](const Matrix& p) { return global_pool_loss(p, a); }, x, opt.h);
      record(pool, max_relative_error(global_pool_loss_grad(x, a), fd));
    }
    {
      const auto channels = static_cast<std::uint32_t>(c);
      const bool conditional = detail::uniform_int(gen, 0, 1) == 1;
      ToyData data = GaussianFlowSpec{Vector::Constant(c, 0.5), 0.7};
      if (conditional) {
        std::vector<GaussianFlowSpec> comps{{Vector::Constant(c, -1.0), 0.5}, {Vector::Constant(c, 1.0), 0.3}};
        data = comps;
      }
      const auto cw = static_cast<std::uint32_t>(toy_condition_width(data));
      const auto batch = draw_cfm_batch(data, 6, gen);
      const std::uint64_t init_seed = gen();
      const TrainableField zero = TrainableField::affine(channels, cw);
      const TrainableField affine =
          zero.with_parameters(0.3 * detail::gaussian_matrix(1, zero.parameters().cols(), gen));
      const TrainableField mlp = TrainableField::mlp1(channels, cw, 8, init_seed);
      for (const TrainableField* f : {&affine, &mlp}) {
        Matrix grad;
        f->cfm_loss_and_grad(batch, &grad);
        const Matrix fd = finite_difference_grad(
            [&](const Matrix& p) { return f->with_parameters(p).cfm_loss_and_grad(batch, nullptr); }, f->parameters(),
            opt.h);
        record(f == &affine ? cfm_affine : cfm_mlp, max_relative_error(grad, fd));
      }
    }
  }
  return {appearance, structure_all, structure_comp, pool, cfm_affine, cfm_mlp};
}

}  // namespace flowguide::cli
