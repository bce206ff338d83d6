#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace flowguide {

/// Dense row-major matrix used for latents, features and gradients. Row i is voxel i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
  InvalidArgument,
  DuplicatePosition,
  OutOfBounds,
  ChannelMismatch,
  EmptyInput,
  NonFinite,
  KTooLarge,
  DimensionMismatch,
  EmptyAppearance,
  ZeroNormRow,
  ShapeMismatch,
  EmptyPositiveSet,
  EmptyComplement,
  TimeOutOfRange,
  EmptyBatch,
  MissingTarget,
  MissingLabels,
  BadCondition,
  BadMagic,
  BadVersion,
  TruncatedFile,
  TrailingData,
  UnsortedPositions,
  SchemaMismatch,
  DigestMismatch,
  ReadFailure,
  WriteFailure,
  ParseError,
  NotAPermutation,
  NoRecords,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DuplicatePosition: return "DuplicatePosition";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyAppearance: return "EmptyAppearance";
    case ErrorKind::ZeroNormRow: return "ZeroNormRow";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyPositiveSet: return "EmptyPositiveSet";
    case ErrorKind::EmptyComplement: return "EmptyComplement";
    case ErrorKind::TimeOutOfRange: return "TimeOutOfRange";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::MissingTarget: return "MissingTarget";
    case ErrorKind::MissingLabels: return "MissingLabels";
    case ErrorKind::BadCondition: return "BadCondition";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::BadVersion: return "BadVersion";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::TrailingData: return "TrailingData";
    case ErrorKind::UnsortedPositions: return "UnsortedPositions";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::DigestMismatch: return "DigestMismatch";
    case ErrorKind::ReadFailure: return "ReadFailure";
    case ErrorKind::WriteFailure: return "WriteFailure";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::NotAPermutation: return "NotAPermutation";
    case ErrorKind::NoRecords: return "NoRecords";
  }
  return "Unknown";
}

/// Coarse failure class; the CLI maps these onto exit codes 1, 2 and 3.
enum class ErrorCategory { usage, data, numeric };

inline ErrorCategory category_of(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument:
      return ErrorCategory::usage;
    case ErrorKind::NonFinite:
    case ErrorKind::ZeroNormRow:
    case ErrorKind::EmptyPositiveSet:
    case ErrorKind::EmptyComplement:
      return ErrorCategory::numeric;
    default:
      return ErrorCategory::data;
  }
}

/// Library error. Carries a kind and, where one exists, the offending index
/// (voxel, row, byte offset or input line depending on the kind).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), index_(index) {}

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCategory category() const noexcept { return category_of(kind_); }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> index_;
};

namespace detail {

inline void require(bool condition, ErrorKind kind, const std::string& message,
                    std::optional<std::size_t> index = std::nullopt) {
  if (!condition) throw Error(kind, message, index);
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

inline bool all_finite(const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) return false;
  }
  return true;
}

}  // namespace detail
}  // namespace flowguide
