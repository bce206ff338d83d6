#pragma once

// Desk-scale test shapes: hollow unions of voxel boxes with per-part latents and features.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/common.hpp"
#include "flowguide/partition.hpp"
#include "flowguide/slat.hpp"

namespace flowguide {

/// Voxels inside the union of `boxes` with at least one face neighbour outside it (or on the
/// grid border), in canonical order.
inline std::vector<VoxelPosition> box_shell_positions(std::uint32_t resolution, std::span<const PartBox> boxes) {
  detail::require(resolution >= 1 && resolution <= 1024, ErrorKind::InvalidArgument,
                  "toy shapes support resolutions in [1, 1024]");
  auto inside = [&](long x, long y, long z) {
    if (x < 0 || y < 0 || z < 0 || x >= resolution || y >= resolution || z >= resolution) return false;
    const VoxelPosition p{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), static_cast<std::uint16_t>(z)};
    return part_of(p, boxes) < boxes.size();
  };
  std::vector<VoxelPosition> out;
  for (long z = 0; z < resolution; ++z) {
    for (long y = 0; y < resolution; ++y) {
      for (long x = 0; x < resolution; ++x) {
        if (!inside(x, y, z)) continue;
        const bool surface = !inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) ||
                             !inside(x, y + 1, z) || !inside(x, y, z - 1) || !inside(x, y, z + 1);
        if (surface) {
          out.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), static_cast<std::uint16_t>(z)});
        }
      }
    }
  }
  detail::require(!out.empty(), ErrorKind::EmptyInput, "boxes cover no voxels of the grid");
  return out;
}

struct ToyShape {
  StructuredLatent latent;
  FeatureField features;
};

/// Shell of `boxes` whose latents are a seeded random code per part id plus N(0, noise^2)
/// noise, with features from labelled_part_features (same ids, same noise level). Background
/// voxels use id dim - 1.
inline ToyShape make_labelled_toy_shape(std::uint32_t resolution, std::uint32_t channels,
                                        std::span<const PartBox> boxes, std::span<const std::uint32_t> ids,
                                        std::uint32_t dim, double noise, std::uint64_t seed,
                                        std::string shape_id = "toy") {
  detail::require(ids.size() == boxes.size(), ErrorKind::InvalidArgument, "need one part id per box");
  auto positions = box_shell_positions(resolution, boxes);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix codes(static_cast<Eigen::Index>(dim), channels);
  for (Eigen::Index i = 0; i < codes.size(); ++i) codes.data()[i] = normal(gen);
  Matrix values(static_cast<Eigen::Index>(positions.size()), channels);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::size_t b = part_of(positions[i], boxes);
    const auto part = static_cast<Eigen::Index>(b < boxes.size() ? ids[b] : dim - 1);
    for (std::uint32_t c = 0; c < channels; ++c) {
      values(static_cast<Eigen::Index>(i), c) = codes(part, c) + noise * normal(gen);
    }
  }
  auto latent = StructuredLatent::from_matrix(resolution, std::move(positions), std::move(values));
  auto features =
      labelled_part_features(latent, boxes, ids, dim, noise, seed ^ 0x9E3779B97F4A7C15ull, std::move(shape_id));
  return ToyShape{std::move(latent), std::move(features)};
}

/// make_labelled_toy_shape with box b labelled b.
inline ToyShape make_toy_shape(std::uint32_t resolution, std::uint32_t channels, std::span<const PartBox> boxes,
                               double noise, std::uint64_t seed, std::string shape_id = "toy") {
  std::vector<std::uint32_t> ids(boxes.size());
  for (std::size_t b = 0; b < ids.size(); ++b) ids[b] = static_cast<std::uint32_t>(b);
  return make_labelled_toy_shape(resolution, channels, boxes, ids, static_cast<std::uint32_t>(boxes.size() + 1), noise,
                                 seed, std::move(shape_id));
}

}  // namespace flowguide
