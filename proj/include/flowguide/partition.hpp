#pragma once

// Geometric feature fields, k-means, joint co-segmentation and query -> appearance correspondence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/common.hpp"
#include "flowguide/slat.hpp"

namespace flowguide {

/// Per-voxel geometric features. Row i is aligned with voxel i of the owning StructuredLatent.
struct FeatureField {
  std::string shape_id;
  Matrix features;

  std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(features.cols()); }

  static FeatureField create(std::string shape_id, Matrix features) {
    detail::require(features.rows() >= 1 && features.cols() >= 1, ErrorKind::EmptyInput,
                    "feature field must have at least one row and one column");
    detail::require(detail::all_finite(features), ErrorKind::NonFinite, "feature field has non-finite entries");
    return FeatureField{std::move(shape_id), std::move(features)};
  }
};

struct ClusterAssignment {
  std::vector<std::uint32_t> labels;
  std::uint32_t k = 0;
  Matrix centroids;    // k x D
  double inertia = 0;  // sum of squared distances to the assigned centroid
};

enum class CorrespondenceMethod { global_nn, coseg_nn, global_pool };

inline const char* to_string(CorrespondenceMethod m) noexcept {
  switch (m) {
    case CorrespondenceMethod::global_nn: return "global_nn";
    case CorrespondenceMethod::coseg_nn: return "coseg_nn";
    case CorrespondenceMethod::global_pool: return "global_pool";
  }
  return "unknown";
}

inline CorrespondenceMethod parse_correspondence_method(const std::string& s) {
  if (s == "global_nn") return CorrespondenceMethod::global_nn;
  if (s == "coseg_nn") return CorrespondenceMethod::coseg_nn;
  if (s == "global_pool") return CorrespondenceMethod::global_pool;
  throw Error(ErrorKind::InvalidArgument, "unknown correspondence method '" + s + "'");
}

/// target[i] is the appearance voxel matched to query voxel i.
struct CorrespondenceMap {
  std::vector<std::uint32_t> target;
  CorrespondenceMethod method = CorrespondenceMethod::coseg_nn;

  friend bool operator==(const CorrespondenceMap&, const CorrespondenceMap&) = default;
};

struct KMeansOptions {
  std::uint32_t k = 8;
  std::uint64_t seed = 0;
  std::uint32_t max_iters = 300;
  double tol = 1e-10;
  /// Independent k-means++ starts; the lowest final inertia wins (earliest start on ties).
  std::uint32_t restarts = 20;
};

/// Inertia after seeding and after every Lloyd iteration of the returned run.
struct KMeansTrace {
  std::vector<double> inertia;
};

namespace detail {

inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

inline std::uint32_t nearest_centroid(const Matrix& points, Eigen::Index i, const Matrix& centroids) {
  std::uint32_t best = 0;
  double best_d = squared_distance(points, i, centroids, 0);
  for (Eigen::Index j = 1; j < centroids.rows(); ++j) {
    const double d = squared_distance(points, i, centroids, j);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return best;
}

inline Matrix kmeans_plus_plus(const Matrix& points, std::uint32_t k, std::mt19937_64& gen) {
  const Eigen::Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  Eigen::Index pick = first(gen);
  centroids.row(0) = points.row(pick);
  chosen[static_cast<std::size_t>(pick)] = true;

  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(points, i, centroids, 0);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::uint32_t c = 1; c < k; ++c) {
    double total = 0;
    for (double v : d2) total += v;
    pick = -1;
    if (total > 0) {
      const double r = unit(gen) * total;
      double acc = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (d2[static_cast<std::size_t>(i)] > 0 && acc >= r) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        // r landed past the last positive weight through rounding.
        for (Eigen::Index i = n - 1; i >= 0; --i) {
          if (d2[static_cast<std::size_t>(i)] > 0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every point coincides with a centre already; take the first unchosen one.
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!chosen[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
      }
    }
    centroids.row(c) = points.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], squared_distance(points, i, centroids, c));
    }
  }
  return centroids;
}

inline Matrix cluster_means(const Matrix& points, const std::vector<std::uint32_t>& labels, const Matrix& previous) {
  Matrix sums = Matrix::Zero(previous.rows(), previous.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(previous.rows()), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
    ++counts[labels[static_cast<std::size_t>(i)]];
  }
  for (Eigen::Index j = 0; j < sums.rows(); ++j) {
    if (counts[static_cast<std::size_t>(j)] == 0) {
      sums.row(j) = previous.row(j);
    } else {
      sums.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
  }
  return sums;
}

/// Gives every empty cluster the point farthest from its own centroid, taken from a cluster
/// that can spare it. Returns true when anything moved.
inline bool repair_empty_clusters(const Matrix& points, std::vector<std::uint32_t>& labels, Matrix& centroids) {
  const auto k = static_cast<std::size_t>(centroids.rows());
  std::vector<std::size_t> counts(k, 0);
  for (auto l : labels) ++counts[l];
  bool moved = false;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] != 0) continue;
    Eigen::Index far = -1;
    double far_d = -1;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const auto l = labels[static_cast<std::size_t>(i)];
      if (counts[l] < 2) continue;
      const double d = squared_distance(points, i, centroids, l);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far < 0) break;  // unreachable while k <= n
    --counts[labels[static_cast<std::size_t>(far)]];
    labels[static_cast<std::size_t>(far)] = static_cast<std::uint32_t>(j);
    counts[j] = 1;
    centroids.row(static_cast<Eigen::Index>(j)) = points.row(far);
    moved = true;
  }
  return moved;
}

inline double inertia_of(const Matrix& points, const std::vector<std::uint32_t>& labels, const Matrix& centroids) {
  double s = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    s += squared_distance(points, i, centroids, labels[static_cast<std::size_t>(i)]);
  }
  return s;
}

// Hartigan single-point moves: relocate a point whenever that lowers the inertia, accounting
// for the centroid shift of both clusters. Lloyd fixed points can still admit such moves.
inline bool hartigan_refine(const Matrix& points, std::vector<std::uint32_t>& labels, Matrix& centroids) {
  const auto n = static_cast<Eigen::Index>(points.rows());
  std::vector<double> counts(static_cast<std::size_t>(centroids.rows()), 0.0);
  for (auto l : labels) counts[l] += 1;
  bool any = false;
  for (std::size_t pass = 0; pass < 100 * static_cast<std::size_t>(n); ++pass) {
    bool moved = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = labels[static_cast<std::size_t>(i)];
      if (counts[a] <= 1) continue;
      const double leave = counts[a] / (counts[a] - 1) * squared_distance(points, i, centroids, a);
      double best = 0;
      std::int64_t target = -1;
      for (Eigen::Index b = 0; b < centroids.rows(); ++b) {
        if (b == a) continue;
        const double nb = counts[static_cast<std::size_t>(b)];
        const double delta = nb / (nb + 1) * squared_distance(points, i, centroids, b) - leave;
        if (delta < best - 1e-12 * (1 + leave)) {
          best = delta;
          target = b;
        }
      }
      if (target < 0) continue;
      const auto b = static_cast<std::size_t>(target);
      centroids.row(a) = (centroids.row(a) * counts[a] - points.row(i)) / (counts[a] - 1);
      centroids.row(target) = (centroids.row(target) * counts[b] + points.row(i)) / (counts[b] + 1);
      counts[a] -= 1;
      counts[b] += 1;
      labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(b);
      moved = any = true;
    }
    if (!moved) break;
  }
  if (any) centroids = cluster_means(points, labels, centroids);
  return any;
}

inline ClusterAssignment lloyd_run(const Matrix& points, const KMeansOptions& opt, std::mt19937_64& gen,
                                   KMeansTrace* trace) {
  const auto n = static_cast<std::size_t>(points.rows());
  Matrix centroids = kmeans_plus_plus(points, opt.k, gen);
  std::vector<std::uint32_t> labels(n);
  auto assign = [&] {
    for (std::size_t i = 0; i < n; ++i) labels[i] = nearest_centroid(points, static_cast<Eigen::Index>(i), centroids);
  };

  assign();
  repair_empty_clusters(points, labels, centroids);
  centroids = cluster_means(points, labels, centroids);
  double inertia = inertia_of(points, labels, centroids);
  if (trace) trace->inertia.push_back(inertia);

  for (std::uint32_t iter = 0; iter < opt.max_iters; ++iter) {
    assign();
    repair_empty_clusters(points, labels, centroids);
    Matrix updated = cluster_means(points, labels, centroids);
    double shift = 0;
    for (Eigen::Index j = 0; j < updated.rows(); ++j) {
      shift = std::max(shift, (updated.row(j) - centroids.row(j)).norm());
    }
    centroids = std::move(updated);
    inertia = inertia_of(points, labels, centroids);
    if (trace) trace->inertia.push_back(inertia);
    if (shift < opt.tol) break;
  }
  if (hartigan_refine(points, labels, centroids)) {
    inertia = inertia_of(points, labels, centroids);
    if (trace) trace->inertia.push_back(inertia);
  }
  return ClusterAssignment{std::move(labels), opt.k, std::move(centroids), inertia};
}

inline ClusterAssignment kmeans_matrix(const Matrix& points, const KMeansOptions& opt, KMeansTrace* trace) {
  const auto n = static_cast<std::size_t>(points.rows());
  detail::require(opt.k >= 1, ErrorKind::InvalidArgument, "k must be at least 1");
  detail::require(opt.restarts >= 1, ErrorKind::InvalidArgument, "k-means needs at least one start");
  detail::require(n >= 1, ErrorKind::EmptyInput, "no points to cluster");
  detail::require(opt.k <= n, ErrorKind::KTooLarge,
                  "k = " + std::to_string(opt.k) + " exceeds point count " + std::to_string(n));

  // All starts draw from one generator, so the result depends on the seed alone.
  std::mt19937_64 gen(opt.seed);
  ClusterAssignment best;
  KMeansTrace best_trace;
  for (std::uint32_t r = 0; r < opt.restarts; ++r) {
    KMeansTrace run_trace;
    auto run = lloyd_run(points, opt, gen, trace ? &run_trace : nullptr);
    if (r == 0 || run.inertia < best.inertia) {
      best = std::move(run);
      best_trace = std::move(run_trace);
    }
  }
  if (trace) trace->inertia = std::move(best_trace.inertia);
  return best;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations, repeated `restarts` times. Each run stops once
/// no centroid moves by `tol` or after `max_iters` iterations. Nearest-centroid ties go to the
/// smaller cluster id. The trace is that of the winning run.
inline ClusterAssignment kmeans(const FeatureField& features, const KMeansOptions& options,
                                KMeansTrace* trace = nullptr) {
  return detail::kmeans_matrix(features.features, options, trace);
}

/// Joint k-means over both shapes so cluster ids are shared. Each returned assignment carries
/// the shared centroids and its own share of the inertia.
inline std::pair<ClusterAssignment, ClusterAssignment> cosegment(const FeatureField& query,
                                                                 const FeatureField& appearance,
                                                                 const KMeansOptions& options,
                                                                 KMeansTrace* trace = nullptr) {
  detail::require(query.dimension() == appearance.dimension(), ErrorKind::DimensionMismatch,
                  "query features have dimension " + std::to_string(query.dimension()) +
                      ", appearance features " + std::to_string(appearance.dimension()));
  Matrix joint(query.features.rows() + appearance.features.rows(), query.features.cols());
  joint.topRows(query.features.rows()) = query.features;
  joint.bottomRows(appearance.features.rows()) = appearance.features;
  ClusterAssignment all = detail::kmeans_matrix(joint, options, trace);

  auto split = [&](Eigen::Index offset, Eigen::Index count, const Matrix& points) {
    ClusterAssignment part;
    part.k = all.k;
    part.centroids = all.centroids;
    part.labels.assign(all.labels.begin() + offset, all.labels.begin() + offset + count);
    part.inertia = detail::inertia_of(points, part.labels, part.centroids);
    return part;
  };
  return {split(0, query.features.rows(), query.features),
          split(query.features.rows(), appearance.features.rows(), appearance.features)};
}

/// Entry (i, j) = <a_i, b_j> / (|a_i| |b_j|).
inline Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.cols(), ErrorKind::DimensionMismatch, "cosine similarity needs equal widths");
  auto normalized = [](const Matrix& m, const char* name) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double norm = m.row(i).norm();
      detail::require(norm > 0, ErrorKind::ZeroNormRow, std::string(name) + " row " + std::to_string(i) + " has zero norm",
                      static_cast<std::size_t>(i));
      out.row(i) = m.row(i) / norm;
    }
    return out;
  };
  const Matrix an = normalized(a, "left");
  const Matrix bn = normalized(b, "right");
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) out(i, j) = an.row(i).dot(bn.row(j));
  }
  return out;
}

/// One shape's inputs to correspondence construction. `clusters` is required for coseg_nn.
struct CorrespondenceInput {
  const StructuredLatent& latent;
  const FeatureField& features;
  const ClusterAssignment* clusters = nullptr;
};

namespace detail {

inline void check_alignment(const CorrespondenceInput& in, const char* role) {
  detail::require(in.features.size() == in.latent.size(), ErrorKind::ShapeMismatch,
                  std::string(role) + " features have " + std::to_string(in.features.size()) +
                      " rows but the latent has " + std::to_string(in.latent.size()) + " voxels");
  if (in.clusters) {
    detail::require(in.clusters->labels.size() == in.latent.size(), ErrorKind::ShapeMismatch,
                    std::string(role) + " cluster labels do not match voxel count");
  }
}

/// Highest similarity in `row` over `candidates` (ascending indices), first index wins ties.
inline std::uint32_t argmax_over(const Matrix& sim, Eigen::Index row, std::span<const std::uint32_t> candidates) {
  std::uint32_t best = candidates.front();
  double best_s = sim(row, best);
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const double s = sim(row, candidates[c]);
    if (s > best_s) {
      best_s = s;
      best = candidates[c];
    }
  }
  return best;
}

inline std::uint32_t argmax_row(const Matrix& sim, Eigen::Index row) {
  Eigen::Index best = 0;
  double best_s = sim(row, 0);
  for (Eigen::Index j = 1; j < sim.cols(); ++j) {
    if (sim(row, j) > best_s) {
      best_s = sim(row, j);
      best = j;
    }
  }
  return static_cast<std::uint32_t>(best);
}

}  // namespace detail

/// Matches every query voxel to an appearance voxel by feature cosine similarity.
///
/// - global_nn: nearest neighbour over all appearance voxels.
/// - coseg_nn: nearest neighbour among appearance voxels sharing the query voxel's cluster id,
///   falling back to global_nn when that cluster has no appearance voxels.
/// - global_pool: every entry points at the appearance voxel closest to the mean appearance
///   feature; the pooled guidance objective then uses all appearance latents.
inline CorrespondenceMap build_correspondence(const CorrespondenceInput& query, const CorrespondenceInput& appearance,
                                              CorrespondenceMethod mode) {
  detail::require(appearance.latent.size() >= 1 && appearance.features.size() >= 1, ErrorKind::EmptyAppearance,
                  "appearance shape has no voxels");
  detail::check_alignment(query, "query");
  detail::check_alignment(appearance, "appearance");
  detail::require(query.features.dimension() == appearance.features.dimension(), ErrorKind::DimensionMismatch,
                  "query and appearance features differ in dimension");

  CorrespondenceMap out;
  out.method = mode;
  const auto lq = static_cast<Eigen::Index>(query.latent.size());
  out.target.resize(static_cast<std::size_t>(lq));

  if (mode == CorrespondenceMethod::global_pool) {
    const Matrix mean = appearance.features.features.colwise().mean();
    const Matrix sim = cosine_similarity_matrix(mean, appearance.features.features);
    std::fill(out.target.begin(), out.target.end(), detail::argmax_row(sim, 0));
    return out;
  }

  const Matrix sim = cosine_similarity_matrix(query.features.features, appearance.features.features);
  if (mode == CorrespondenceMethod::global_nn) {
    for (Eigen::Index i = 0; i < lq; ++i) out.target[static_cast<std::size_t>(i)] = detail::argmax_row(sim, i);
    return out;
  }

  detail::require(query.clusters != nullptr, ErrorKind::MissingLabels, "coseg_nn needs query cluster labels");
  detail::require(appearance.clusters != nullptr, ErrorKind::MissingLabels,
                  "coseg_nn needs appearance cluster labels");
  detail::require(query.clusters->k == appearance.clusters->k, ErrorKind::SchemaMismatch,
                  "query and appearance clusterings have different k; run cosegment on both shapes");
  std::vector<std::vector<std::uint32_t>> members(appearance.clusters->k);
  for (std::size_t j = 0; j < appearance.clusters->labels.size(); ++j) {
    const auto l = appearance.clusters->labels[j];
    detail::require(l < appearance.clusters->k, ErrorKind::SchemaMismatch, "appearance label out of range", j);
    members[l].push_back(static_cast<std::uint32_t>(j));
  }
  for (Eigen::Index i = 0; i < lq; ++i) {
    const auto l = query.clusters->labels[static_cast<std::size_t>(i)];
    detail::require(l < query.clusters->k, ErrorKind::SchemaMismatch, "query label out of range",
                    static_cast<std::size_t>(i));
    out.target[static_cast<std::size_t>(i)] =
        members[l].empty() ? detail::argmax_row(sim, i) : detail::argmax_over(sim, i, members[l]);
  }
  return out;
}

/// Inclusive axis-aligned voxel box.
struct PartBox {
  VoxelPosition lo;
  VoxelPosition hi;

  bool contains(const VoxelPosition& p) const noexcept {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
};

/// Index of the first box containing `p`, or parts.size() for background.
inline std::size_t part_of(const VoxelPosition& p, std::span<const PartBox> parts) {
  for (std::size_t b = 0; b < parts.size(); ++b) {
    if (parts[b].contains(p)) return b;
  }
  return parts.size();
}

/// Stand-in part features: a voxel in box b gets the unit basis vector e_{ids[b]} of R^dim, a
/// background voxel gets e_{dim - 1}, plus i.i.d. N(0, noise_std^2) noise. The first containing
/// box wins. Shapes that share an id space share part prototypes, which is what makes
/// cross-shape matching meaningful.
inline FeatureField labelled_part_features(const StructuredLatent& latent, std::span<const PartBox> parts,
                                           std::span<const std::uint32_t> ids, std::uint32_t dim, double noise_std,
                                           std::uint64_t seed, std::string shape_id = {}) {
  detail::require(noise_std >= 0 && std::isfinite(noise_std), ErrorKind::InvalidArgument,
                  "noise_std must be finite and nonnegative");
  detail::require(ids.size() == parts.size(), ErrorKind::InvalidArgument, "need one part id per box");
  for (auto id : ids) {
    detail::require(id + 1 < dim, ErrorKind::InvalidArgument, "part id leaves no room for the background channel");
  }
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix f = Matrix::Zero(static_cast<Eigen::Index>(latent.size()), d);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto positions = latent.positions();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::size_t part = part_of(positions[i], parts);
    const auto col = static_cast<Eigen::Index>(part < parts.size() ? ids[part] : dim - 1);
    f(static_cast<Eigen::Index>(i), col) = 1.0;
    if (noise_std > 0) {
      for (Eigen::Index c = 0; c < d; ++c) f(static_cast<Eigen::Index>(i), c) += noise_std * noise(gen);
    }
  }
  return FeatureField::create(std::move(shape_id), std::move(f));
}

/// labelled_part_features with box b labelled b, so D = parts.size() + 1.
inline FeatureField synthesize_part_features(const StructuredLatent& latent, std::span<const PartBox> parts,
                                             double noise_std, std::uint64_t seed, std::string shape_id = {}) {
  std::vector<std::uint32_t> ids(parts.size());
  for (std::size_t b = 0; b < ids.size(); ++b) ids[b] = static_cast<std::uint32_t>(b);
  return labelled_part_features(latent, parts, ids, static_cast<std::uint32_t>(parts.size() + 1), noise_std, seed,
                                std::move(shape_id));
}

}  // namespace flowguide
