#pragma once

// Sparse structured latents: latent vectors anchored at the active voxels of an N^3 grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/common.hpp"

namespace flowguide {

struct VoxelPosition {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint16_t z = 0;

  friend bool operator==(const VoxelPosition&, const VoxelPosition&) = default;
};

/// Canonical voxel order: lexicographic by (z, y, x).
inline bool canonical_less(const VoxelPosition& a, const VoxelPosition& b) noexcept {
  if (a.z != b.z) return a.z < b.z;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

inline std::string to_string(const VoxelPosition& p) {
  return "(" + std::to_string(p.x) + "," + std::to_string(p.y) + "," + std::to_string(p.z) + ")";
}

struct VoxelEntry {
  VoxelPosition position;
  std::vector<double> latent;
};

inline constexpr std::uint32_t kMaxResolution = 65535;

/// Immutable sparse latent. Positions are unique, in bounds and canonically ordered;
/// row i of latents() belongs to positions()[i].
class StructuredLatent {
 public:
  StructuredLatent() = default;

  /// Validates and canonicalizes. Errors name the offending index in `entries`.
  static StructuredLatent create(std::uint32_t resolution, std::uint32_t channels,
                                 std::vector<VoxelEntry> entries) {
    check_header(resolution, channels, entries.size());
    Matrix values(static_cast<Eigen::Index>(entries.size()), channels);
    std::vector<VoxelPosition> positions;
    positions.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      detail::require(e.latent.size() == channels, ErrorKind::ChannelMismatch,
                      "voxel " + std::to_string(i) + " has " + std::to_string(e.latent.size()) +
                          " channels, expected " + std::to_string(channels),
                      i);
      for (std::uint32_t c = 0; c < channels; ++c) values(static_cast<Eigen::Index>(i), c) = e.latent[c];
      positions.push_back(e.position);
    }
    return from_matrix(resolution, std::move(positions), std::move(values));
  }

  /// Same contract as create(), taking the latent rows as a matrix aligned with `positions`.
  static StructuredLatent from_matrix(std::uint32_t resolution, std::vector<VoxelPosition> positions,
                                      Matrix values) {
    detail::require(values.rows() == static_cast<Eigen::Index>(positions.size()), ErrorKind::ShapeMismatch,
                    "latent rows do not match position count");
    check_header(resolution, static_cast<std::uint32_t>(values.cols()), positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto& p = positions[i];
      detail::require(p.x < resolution && p.y < resolution && p.z < resolution, ErrorKind::OutOfBounds,
                      "voxel " + std::to_string(i) + " at " + to_string(p) + " outside grid of resolution " +
                          std::to_string(resolution),
                      i);
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        detail::require(std::isfinite(values(static_cast<Eigen::Index>(i), c)), ErrorKind::NonFinite,
                        "voxel " + std::to_string(i) + " has a non-finite latent entry", i);
      }
    }

    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return canonical_less(positions[a], positions[b]);
    });
    for (std::size_t k = 1; k < order.size(); ++k) {
      if (positions[order[k]] == positions[order[k - 1]]) {
        const std::size_t dup = std::max(order[k], order[k - 1]);
        throw Error(ErrorKind::DuplicatePosition,
                    "voxel " + std::to_string(dup) + " repeats position " + to_string(positions[dup]), dup);
      }
    }

    StructuredLatent out;
    out.resolution_ = resolution;
    out.positions_.reserve(positions.size());
    out.latents_.resize(values.rows(), values.cols());
    for (std::size_t k = 0; k < order.size(); ++k) {
      out.positions_.push_back(positions[order[k]]);
      out.latents_.row(static_cast<Eigen::Index>(k)) = values.row(static_cast<Eigen::Index>(order[k]));
    }
    return out;
  }

  std::uint32_t resolution() const noexcept { return resolution_; }
  std::uint32_t channels() const noexcept { return static_cast<std::uint32_t>(latents_.cols()); }
  std::size_t size() const noexcept { return positions_.size(); }
  std::span<const VoxelPosition> positions() const noexcept { return positions_; }
  const Matrix& latents() const noexcept { return latents_; }

  /// Copy with the same positions and new latent rows (rows already in canonical order).
  StructuredLatent with_latents(Matrix values) const {
    detail::require(values.rows() == latents_.rows(), ErrorKind::ShapeMismatch,
                    "replacement latents have " + std::to_string(values.rows()) + " rows, expected " +
                        std::to_string(latents_.rows()));
    detail::require(values.cols() >= 1, ErrorKind::ChannelMismatch, "replacement latents have no channels");
    detail::require(detail::all_finite(values), ErrorKind::NonFinite, "replacement latents are not finite");
    StructuredLatent out = *this;
    out.latents_ = std::move(values);
    return out;
  }

  friend bool operator==(const StructuredLatent& a, const StructuredLatent& b) {
    return a.resolution_ == b.resolution_ && a.positions_ == b.positions_ &&
           a.latents_.rows() == b.latents_.rows() && a.latents_.cols() == b.latents_.cols() &&
           a.latents_ == b.latents_;
  }

 private:
  static void check_header(std::uint32_t resolution, std::uint32_t channels, std::size_t count) {
    detail::require(resolution >= 1 && resolution <= kMaxResolution, ErrorKind::InvalidArgument,
                    "resolution must be in [1, 65535], got " + std::to_string(resolution));
    detail::require(channels >= 1, ErrorKind::ChannelMismatch, "channel count must be positive");
    detail::require(count >= 1, ErrorKind::EmptyInput, "a structured latent needs at least one voxel");
  }

  std::uint32_t resolution_ = 0;
  std::vector<VoxelPosition> positions_;
  Matrix latents_;
};

/// Mutable latent being evolved by a sampler. The positions are those of base() and never change.
class LatentState {
 public:
  LatentState(StructuredLatent base, Matrix values, double time)
      : base_(std::move(base)), values_(std::move(values)), time_(time) {
    detail::require(values_.rows() == base_.latents().rows() && values_.cols() == base_.latents().cols(),
                    ErrorKind::ShapeMismatch, "state values must match the base latent shape");
  }

  const StructuredLatent& base() const noexcept { return base_; }
  std::span<const VoxelPosition> positions() const noexcept { return base_.positions(); }
  const Matrix& values() const noexcept { return values_; }
  Matrix& values() noexcept { return values_; }
  double time() const noexcept { return time_; }
  void set_time(double t) noexcept { time_ = t; }

  /// Freezes the current values into a StructuredLatent on the base positions.
  StructuredLatent to_latent() const { return base_.with_latents(values_); }

 private:
  StructuredLatent base_;
  Matrix values_;
  double time_;
};

/// i.i.d. standard normal matrix drawn row-major from a generator seeded with `seed`.
inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(gen);
  return out;
}

/// Fresh sampler state at t = 1 with standard normal latents.
inline LatentState init_latent_state(const StructuredLatent& shape, std::uint64_t seed) {
  return LatentState(shape, standard_normal(shape.latents().rows(), shape.latents().cols(), seed), 1.0);
}

/// Active voxels touched by points normalized to [0,1]^3: floor(p*N) clamped to [0, N-1],
/// deduplicated and returned in canonical order.
inline std::vector<VoxelPosition> voxelize_point_cloud(std::span<const std::array<double, 3>> points,
                                                       std::uint32_t resolution) {
  detail::require(!points.empty(), ErrorKind::EmptyInput, "no points to voxelize");
  detail::require(resolution >= 1 && resolution <= kMaxResolution, ErrorKind::InvalidArgument,
                  "resolution must be in [1, 65535]");
  const double n = static_cast<double>(resolution);
  auto cell = [&](double v, std::size_t i) -> std::uint16_t {
    detail::require(std::isfinite(v), ErrorKind::NonFinite, "point " + std::to_string(i) + " is not finite", i);
    const double f = std::floor(v * n);
    const double clamped = std::clamp(f, 0.0, n - 1.0);
    return static_cast<std::uint16_t>(clamped);
  };
  std::vector<VoxelPosition> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    out.push_back({cell(p[0], i), cell(p[1], i), cell(p[2], i)});
  }
  std::sort(out.begin(), out.end(), canonical_less);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace flowguide
