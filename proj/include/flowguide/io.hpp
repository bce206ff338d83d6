#pragma once

// File formats.
//
// SLAT / FFLD (little-endian, fixed layout):
//   offset  size  field
//   0       4     magic "SLAT" or "FFLD"
//   4       4     u32 version (= 1)
//   8       4     u32 N (grid resolution)
//   12      4     u32 C (latent channels) or D (feature dimension)
//   16      4     u32 L (voxel count)
//   20      ...   L records: u16 x, u16 y, u16 z, then C (or D) f32 values
// Records are in canonical (z, y, x) order with no repeats.
//
// JSON documents (clusters, correspondence, parameters, reports, manifests) carry a schema tag
// and version; cluster and correspondence documents are bound to the SHA-256 of their source files.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "flowguide/common.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/partition.hpp"
#include "flowguide/slat.hpp"
#include "flowguide/toyflows.hpp"
#include "json.hpp"

namespace flowguide::io {

using json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 20;

// ---------------------------------------------------------------------------------------------
// Raw file access and digests.

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ReadFailure, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::WriteFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::WriteFailure, "failed writing " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::InvalidArgument, "SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

inline std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

// ---------------------------------------------------------------------------------------------
// Binary voxel tables.

namespace detail {

inline void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xFF));
}

inline void put_f32(Bytes& out, double v, std::size_t voxel) {
  const float f = static_cast<float>(v);
  flowguide::detail::require(std::isfinite(f), ErrorKind::NonFinite,
                             "voxel " + std::to_string(voxel) + " value does not fit in f32", voxel);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

// Truncation errors carry the offset where the data ends.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) {
      throw Error(ErrorKind::TruncatedFile,
                  "needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", file ends at offset " +
                      std::to_string(data_.size()),
                  data_.size());
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint16_t u16() {
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32() {
    auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f32() {
    const std::uint32_t bits = u32();
    float f = 0;
    std::memcpy(&f, &bits, sizeof f);
    return static_cast<double>(f);
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct VoxelTable {
  std::uint32_t resolution = 0;
  std::vector<VoxelPosition> positions;
  Matrix values;
};

inline Bytes encode_table(const char (&magic)[5], std::uint32_t resolution, std::span<const VoxelPosition> positions,
                          const Matrix& values) {
  Bytes out;
  out.reserve(kHeaderSize + positions.size() * (6 + 4 * static_cast<std::size_t>(values.cols())));
  out.insert(out.end(), magic, magic + 4);
  put_u32(out, kFormatVersion);
  put_u32(out, resolution);
  put_u32(out, static_cast<std::uint32_t>(values.cols()));
  put_u32(out, static_cast<std::uint32_t>(positions.size()));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    put_u16(out, positions[i].x);
    put_u16(out, positions[i].y);
    put_u16(out, positions[i].z);
    for (Eigen::Index c = 0; c < values.cols(); ++c) put_f32(out, values(static_cast<Eigen::Index>(i), c), i);
  }
  return out;
}

inline VoxelTable decode_table(const char (&magic)[5], std::span<const std::uint8_t> data) {
  Reader r(data);
  auto m = r.take(4);
  if (!std::equal(m.begin(), m.end(), magic)) {
    throw Error(ErrorKind::BadMagic, std::string("expected magic \"") + magic + "\"", 0);
  }
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw Error(ErrorKind::BadVersion, "unsupported version " + std::to_string(version), 4);
  }
  VoxelTable t;
  t.resolution = r.u32();
  const std::uint32_t channels = r.u32();
  const std::uint32_t count = r.u32();
  flowguide::detail::require(t.resolution >= 1 && t.resolution <= kMaxResolution, ErrorKind::SchemaMismatch,
                             "resolution " + std::to_string(t.resolution) + " outside [1, 65535]", 8);
  flowguide::detail::require(channels >= 1, ErrorKind::SchemaMismatch, "channel count is zero", 12);
  flowguide::detail::require(count >= 1, ErrorKind::SchemaMismatch, "voxel count is zero", 16);

  const std::uint64_t record = 6 + 4 * static_cast<std::uint64_t>(channels);
  const std::uint64_t expected = kHeaderSize + record * count;
  if (data.size() < expected) {
    throw Error(ErrorKind::TruncatedFile,
                "header declares " + std::to_string(expected) + " bytes, file ends at offset " +
                    std::to_string(data.size()),
                data.size());
  }
  if (data.size() > expected) {
    throw Error(ErrorKind::TrailingData, "unexpected bytes after offset " + std::to_string(expected),
                static_cast<std::size_t>(expected));
  }

  t.positions.reserve(count);
  t.values.resize(count, channels);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    VoxelPosition p;
    p.x = r.u16();
    p.y = r.u16();
    p.z = r.u16();
    flowguide::detail::require(p.x < t.resolution && p.y < t.resolution && p.z < t.resolution,
                               ErrorKind::OutOfBounds,
                               "record " + std::to_string(i) + " at offset " + std::to_string(at) + " lies outside the grid",
                               at);
    if (i > 0 && !canonical_less(t.positions.back(), p)) {
      throw Error(ErrorKind::UnsortedPositions,
                  "record " + std::to_string(i) + " at offset " + std::to_string(at) + " breaks canonical order", at);
    }
    t.positions.push_back(p);
    for (std::uint32_t c = 0; c < channels; ++c) {
      const std::size_t value_at = r.offset();
      const double v = r.f32();
      flowguide::detail::require(std::isfinite(v), ErrorKind::NonFinite,
                                 "non-finite value at offset " + std::to_string(value_at), value_at);
      t.values(i, c) = v;
    }
  }
  return t;
}

}  // namespace detail

/// Per-voxel features as stored on disk, with the positions they were computed on.
struct FeatureFile {
  std::uint32_t resolution = 0;
  std::vector<VoxelPosition> positions;
  FeatureField field;

  /// Pairs features with the voxels of `latent`; rows must already be in the latent's order.
  static FeatureFile bind(const StructuredLatent& latent, FeatureField field) {
    flowguide::detail::require(field.size() == latent.size(), ErrorKind::ShapeMismatch,
                               "feature rows do not match voxel count");
    return FeatureFile{latent.resolution(), {latent.positions().begin(), latent.positions().end()}, std::move(field)};
  }

  /// Throws ShapeMismatch unless these features sit on exactly the voxels of `latent`.
  void check_aligned(const StructuredLatent& latent) const {
    flowguide::detail::require(resolution == latent.resolution() && positions.size() == latent.size() &&
                                   std::equal(positions.begin(), positions.end(), latent.positions().begin()),
                               ErrorKind::ShapeMismatch, "feature file positions differ from the latent's voxels");
  }
};

inline Bytes encode_slat(const StructuredLatent& latent) {
  return detail::encode_table("SLAT", latent.resolution(), latent.positions(), latent.latents());
}

inline StructuredLatent decode_slat(std::span<const std::uint8_t> data) {
  auto t = detail::decode_table("SLAT", data);
  return StructuredLatent::from_matrix(t.resolution, std::move(t.positions), std::move(t.values));
}

inline Bytes encode_ffld(const FeatureFile& file) {
  flowguide::detail::require(file.field.size() == file.positions.size(), ErrorKind::ShapeMismatch,
                             "feature rows do not match position count");
  for (std::size_t i = 1; i < file.positions.size(); ++i) {
    flowguide::detail::require(canonical_less(file.positions[i - 1], file.positions[i]), ErrorKind::UnsortedPositions,
                               "feature positions are not in canonical order", i);
  }
  return detail::encode_table("FFLD", file.resolution, file.positions, file.field.features);
}

inline FeatureFile decode_ffld(std::span<const std::uint8_t> data, std::string shape_id = {}) {
  auto t = detail::decode_table("FFLD", data);
  return FeatureFile{t.resolution, std::move(t.positions), FeatureField::create(std::move(shape_id), std::move(t.values))};
}

inline void write_slat(const std::filesystem::path& path, const StructuredLatent& latent) {
  write_file_bytes(path, encode_slat(latent));
}

inline StructuredLatent read_slat(const std::filesystem::path& path) { return decode_slat(read_file_bytes(path)); }

inline void write_ffld(const std::filesystem::path& path, const FeatureFile& file) {
  write_file_bytes(path, encode_ffld(file));
}

inline FeatureFile read_ffld(const std::filesystem::path& path) {
  return decode_ffld(read_file_bytes(path), path.stem().string());
}

/// SHA-256 of the SLAT encoding; equals file_sha256 of the written file.
inline std::string digest_of(const StructuredLatent& latent) { return sha256_hex(encode_slat(latent)); }

// ---------------------------------------------------------------------------------------------
// PLY export.

using Rgb = std::array<std::uint8_t, 3>;

/// Colors from the top three principal components of the latent rows. Each component is min-max
/// scaled to [0, 255]; a component with no variance (or missing because C < 3) maps to 128.
/// Eigenvector signs are fixed so the largest-magnitude entry is positive.
inline std::vector<Rgb> pca_colors(const Matrix& latents) {
  const Eigen::Index n = latents.rows();
  std::vector<Rgb> colors(static_cast<std::size_t>(n), Rgb{128, 128, 128});
  if (n == 0) return colors;
  const Matrix centered = latents.rowwise() - latents.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const double scale = std::max(1.0, cov.trace());
  const Eigen::Index c = latents.cols();

  for (int comp = 0; comp < 3 && comp < c; ++comp) {
    const Eigen::Index idx = c - 1 - comp;
    if (values(idx) <= 1e-12 * scale) continue;
    Eigen::VectorXd axis = eig.eigenvectors().col(idx);
    Eigen::Index big = 0;
    for (Eigen::Index k = 1; k < axis.size(); ++k) {
      if (std::abs(axis(k)) > std::abs(axis(big))) big = k;
    }
    if (axis(big) < 0) axis = -axis;
    const Eigen::VectorXd proj = centered * axis;
    const double lo = proj.minCoeff();
    const double hi = proj.maxCoeff();
    if (hi - lo <= 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)))) continue;
    for (Eigen::Index i = 0; i < n; ++i) {
      colors[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)] =
          static_cast<std::uint8_t>(std::lround(255.0 * (proj(i) - lo) / (hi - lo)));
    }
  }
  return colors;
}

/// ASCII PLY 1.0 point cloud: one vertex per voxel at the voxel centre divided by N.
inline std::string render_ply(std::span<const VoxelPosition> positions, std::uint32_t resolution,
                              const Matrix& latents) {
  const auto colors = pca_colors(latents);
  std::string out;
  out += "ply\nformat ascii 1.0\ncomment flowguide latent export\n";
  out += "element vertex " + std::to_string(positions.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  const double n = static_cast<double>(resolution);
  char line[160];
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& p = positions[i];
    const auto& c = colors[i];
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g %u %u %u\n", (p.x + 0.5) / n, (p.y + 0.5) / n, (p.z + 0.5) / n,
                  static_cast<unsigned>(c[0]), static_cast<unsigned>(c[1]), static_cast<unsigned>(c[2]));
    out += line;
  }
  return out;
}

inline void export_ply(const StructuredLatent& latent, const std::filesystem::path& path) {
  write_text_file(path, render_ply(latent.positions(), latent.resolution(), latent.latents()));
}

inline void export_ply(const LatentState& state, const std::filesystem::path& path) {
  write_text_file(path, render_ply(state.positions(), state.base().resolution(), state.values()));
}

// ---------------------------------------------------------------------------------------------
// JSON documents.

namespace detail {

inline json parse_json_file(const std::filesystem::path& path) {
  const Bytes bytes = read_file_bytes(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

/// Throws SchemaMismatch if `doc` is not an object with exactly the allowed keys (all required).
inline void expect_keys(const json& doc, std::initializer_list<const char*> required,
                        std::initializer_list<const char*> optional = {}) {
  if (!doc.is_object()) throw Error(ErrorKind::SchemaMismatch, "expected a JSON object");
  std::set<std::string> allowed;
  for (const char* k : required) {
    allowed.insert(k);
    if (!doc.contains(k)) throw Error(ErrorKind::SchemaMismatch, std::string("missing key '") + k + "'");
  }
  for (const char* k : optional) allowed.insert(k);
  for (const auto& [key, _] : doc.items()) {
    if (!allowed.count(key)) throw Error(ErrorKind::SchemaMismatch, "unknown key '" + key + "'");
  }
}

inline void expect_schema(const json& doc, const char* schema) {
  if (!doc.contains("schema") || doc["schema"] != schema) {
    throw Error(ErrorKind::SchemaMismatch, std::string("expected schema '") + schema + "'");
  }
  if (!doc.contains("version") || doc["version"] != 1) {
    throw Error(ErrorKind::SchemaMismatch, std::string(schema) + ": unsupported version");
  }
}

template <class T>
T get_as(const json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, std::string("bad value for '") + key + "': " + e.what());
  }
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& rows, const char* key) {
  if (!rows.is_array()) throw Error(ErrorKind::SchemaMismatch, std::string(key) + " must be an array of rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto c = n == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
  Matrix m(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      throw Error(ErrorKind::SchemaMismatch, std::string(key) + " rows must share one length");
    }
    for (Eigen::Index j = 0; j < c; ++j) {
      if (!row[static_cast<std::size_t>(j)].is_number()) {
        throw Error(ErrorKind::SchemaMismatch, std::string(key) + " entries must be numbers");
      }
      m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
  }
  return m;
}

}  // namespace detail

/// Labels for one or two shapes sharing a clustering (two when produced by cosegment).
struct ClusterShape {
  std::string role;    // "query", "appearance", or "single"
  std::string digest;  // SHA-256 of the feature file the labels were computed from
  std::vector<std::uint32_t> labels;
  double inertia = 0;

  friend bool operator==(const ClusterShape&, const ClusterShape&) = default;
};

struct ClustersDocument {
  std::uint32_t k = 0;
  std::uint64_t seed = 0;
  Matrix centroids;
  std::vector<ClusterShape> shapes;

  friend bool operator==(const ClustersDocument& a, const ClustersDocument& b) {
    return a.k == b.k && a.seed == b.seed && a.centroids.rows() == b.centroids.rows() &&
           a.centroids.cols() == b.centroids.cols() && a.centroids == b.centroids && a.shapes == b.shapes;
  }

  const ClusterShape& shape(const std::string& role) const {
    for (const auto& s : shapes) {
      if (s.role == role) return s;
    }
    throw Error(ErrorKind::SchemaMismatch, "clusters document has no '" + role + "' shape");
  }

  /// Labels of `role` as a ClusterAssignment, after checking they came from `features_digest`.
  ClusterAssignment assignment(const std::string& role, const std::string& features_digest) const {
    const auto& s = shape(role);
    if (s.digest != features_digest) {
      throw Error(ErrorKind::DigestMismatch, "clusters for '" + role + "' were computed from a different feature file");
    }
    return ClusterAssignment{s.labels, k, centroids, s.inertia};
  }
};

inline json to_json(const ClustersDocument& doc) {
  json shapes = json::array();
  for (const auto& s : doc.shapes) {
    shapes.push_back({{"role", s.role}, {"digest", s.digest}, {"labels", s.labels}, {"inertia", s.inertia}});
  }
  return json{{"schema", "flowguide.clusters"},
              {"version", 1},
              {"k", doc.k},
              {"seed", doc.seed},
              {"centroids", detail::matrix_to_json(doc.centroids)},
              {"shapes", std::move(shapes)}};
}

inline ClustersDocument clusters_from_json(const json& j) {
  detail::expect_keys(j, {"schema", "version", "k", "seed", "centroids", "shapes"});
  detail::expect_schema(j, "flowguide.clusters");
  ClustersDocument doc;
  doc.k = detail::get_as<std::uint32_t>(j, "k");
  doc.seed = detail::get_as<std::uint64_t>(j, "seed");
  flowguide::detail::require(doc.k >= 1, ErrorKind::SchemaMismatch, "k must be positive");
  doc.centroids = detail::matrix_from_json(j["centroids"], "centroids");
  flowguide::detail::require(doc.centroids.rows() == doc.k, ErrorKind::SchemaMismatch, "expected k centroid rows");
  if (!j["shapes"].is_array() || j["shapes"].empty()) {
    throw Error(ErrorKind::SchemaMismatch, "shapes must be a non-empty array");
  }
  for (const auto& s : j["shapes"]) {
    detail::expect_keys(s, {"role", "digest", "labels", "inertia"});
    ClusterShape shape{detail::get_as<std::string>(s, "role"), detail::get_as<std::string>(s, "digest"),
                       detail::get_as<std::vector<std::uint32_t>>(s, "labels"), detail::get_as<double>(s, "inertia")};
    for (std::size_t i = 0; i < shape.labels.size(); ++i) {
      flowguide::detail::require(shape.labels[i] < doc.k, ErrorKind::SchemaMismatch,
                                 "label " + std::to_string(shape.labels[i]) + " at index " + std::to_string(i) +
                                     " is not below k = " + std::to_string(doc.k),
                                 i);
    }
    doc.shapes.push_back(std::move(shape));
  }
  return doc;
}

inline void write_clusters(const std::filesystem::path& path, const ClustersDocument& doc) {
  detail::write_json_file(path, to_json(doc));
}

inline ClustersDocument read_clusters(const std::filesystem::path& path) {
  return clusters_from_json(detail::parse_json_file(path));
}

struct CorrespondenceDocument {
  CorrespondenceMap map;
  std::string query_digest;       // SHA-256 of the query SLAT file
  std::string appearance_digest;  // SHA-256 of the appearance SLAT file
  std::uint32_t appearance_size = 0;

  friend bool operator==(const CorrespondenceDocument&, const CorrespondenceDocument&) = default;

  /// Throws DigestMismatch unless this map was built for exactly these two shapes.
  void verify(const std::string& query, const std::string& appearance) const {
    if (query != query_digest) {
      throw Error(ErrorKind::DigestMismatch, "correspondence was built for a different query shape");
    }
    if (appearance != appearance_digest) {
      throw Error(ErrorKind::DigestMismatch, "correspondence was built for a different appearance shape");
    }
  }
};

inline json to_json(const CorrespondenceDocument& doc) {
  return json{{"schema", "flowguide.correspondence"},
              {"version", 1},
              {"method", to_string(doc.map.method)},
              {"query_digest", doc.query_digest},
              {"appearance_digest", doc.appearance_digest},
              {"appearance_size", doc.appearance_size},
              {"target", doc.map.target}};
}

inline CorrespondenceDocument correspondence_from_json(const json& j) {
  detail::expect_keys(j, {"schema", "version", "method", "query_digest", "appearance_digest", "appearance_size", "target"});
  detail::expect_schema(j, "flowguide.correspondence");
  CorrespondenceDocument doc;
  try {
    doc.map.method = parse_correspondence_method(detail::get_as<std::string>(j, "method"));
  } catch (const Error& e) {
    throw Error(ErrorKind::SchemaMismatch, e.what());
  }
  doc.query_digest = detail::get_as<std::string>(j, "query_digest");
  doc.appearance_digest = detail::get_as<std::string>(j, "appearance_digest");
  doc.appearance_size = detail::get_as<std::uint32_t>(j, "appearance_size");
  doc.map.target = detail::get_as<std::vector<std::uint32_t>>(j, "target");
  for (std::size_t i = 0; i < doc.map.target.size(); ++i) {
    flowguide::detail::require(doc.map.target[i] < doc.appearance_size, ErrorKind::SchemaMismatch,
                               "target " + std::to_string(i) + " points past the appearance shape", i);
  }
  return doc;
}

inline void write_correspondence(const std::filesystem::path& path, const CorrespondenceDocument& doc) {
  detail::write_json_file(path, to_json(doc));
}

inline CorrespondenceDocument read_correspondence(const std::filesystem::path& path) {
  return correspondence_from_json(detail::parse_json_file(path));
}

/// Trainable field parameters plus free-form training metadata.
struct ParamsDocument {
  TrainableField field = TrainableField::affine(1);
  json training = json::object();
};

inline json to_json(const ParamsDocument& doc) {
  const auto& p = doc.field.parameters();
  return json{{"schema", "flowguide.params"},
              {"version", 1},
              {"architecture", to_string(doc.field.architecture())},
              {"channels", doc.field.channels()},
              {"condition_width", doc.field.condition_width()},
              {"hidden", doc.field.hidden()},
              {"parameters", std::vector<double>(p.data(), p.data() + p.size())},
              {"training", doc.training}};
}

inline ParamsDocument params_from_json(const json& j) {
  detail::expect_keys(j, {"schema", "version", "architecture", "channels", "condition_width", "hidden", "parameters"},
                      {"training"});
  detail::expect_schema(j, "flowguide.params");
  Architecture arch;
  try {
    arch = parse_architecture(detail::get_as<std::string>(j, "architecture"));
  } catch (const Error& e) {
    throw Error(ErrorKind::SchemaMismatch, e.what());
  }
  const auto values = detail::get_as<std::vector<double>>(j, "parameters");
  Matrix p(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) p(0, static_cast<Eigen::Index>(i)) = values[i];
  try {
    ParamsDocument doc{TrainableField(arch, detail::get_as<std::uint32_t>(j, "channels"),
                                      detail::get_as<std::uint32_t>(j, "condition_width"),
                                      detail::get_as<std::uint32_t>(j, "hidden"), std::move(p)),
                       j.value("training", json::object())};
    return doc;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::SchemaMismatch) throw;
    throw Error(ErrorKind::SchemaMismatch, e.what());
  }
}

inline void write_params(const std::filesystem::path& path, const ParamsDocument& doc) {
  detail::write_json_file(path, to_json(doc));
}

inline ParamsDocument read_params(const std::filesystem::path& path) {
  return params_from_json(detail::parse_json_file(path));
}

inline json to_json(const GuidanceReport& report) {
  json apps = json::array();
  for (const auto& a : report.applications) {
    apps.push_back({{"step", a.step}, {"time", a.time}, {"loss_before", a.loss_before}, {"loss_after", a.loss_after}});
  }
  json out{{"schema", "flowguide.guidance_report"},
           {"version", 1},
           {"objective", to_string(report.objective)},
           {"applications", std::move(apps)}};
  if (!report.applications.empty()) {
    out["initial_loss"] = report.applications.front().loss_before;
    out["final_loss"] = report.applications.back().loss_after;
  }
  return out;
}

/// Reproducibility record written by every CLI run. No timestamps, so identical runs produce
/// identical manifests.
struct RunManifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, SHA-256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, SHA-256

  void add_input(const std::filesystem::path& p) { inputs.emplace_back(p.string(), file_sha256(p)); }
  void add_output(const std::filesystem::path& p) { outputs.emplace_back(p.string(), file_sha256(p)); }
};

inline json to_json(const RunManifest& m) {
  auto files = [](const auto& list) {
    json arr = json::array();
    for (const auto& [path, digest] : list) arr.push_back({{"path", path}, {"sha256", digest}});
    return arr;
  };
  return json{{"schema", "flowguide.manifest"}, {"version", 1},         {"command", m.command},
              {"config", m.config},             {"seed", m.seed},       {"inputs", files(m.inputs)},
              {"outputs", files(m.outputs)}};
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  detail::write_json_file(path, to_json(m));
}

}  // namespace flowguide::io
