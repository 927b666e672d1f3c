#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rsat {

enum class ErrorCode {
  length_mismatch,
  shape_mismatch,
  degenerate_input,
  condition_mismatch,
  indivisible_groups,
  single_class,
  non_finite,
  vertex_out_of_range,
  mask_too_small,
  dims_too_large,
  too_few_subjects,
  empty_window,
  occluder_too_large,
  too_few_images,
  node_not_found,
  all_zero_map,
  empty_region,
  infeasible_spec,
  format_error,
  config_invalid,
  input_missing,
  provider_failure,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

template <ErrorCode Code>
class TypedError : public Error {
public:
  explicit TypedError(const std::string& what) : Error(Code, what) {}
};

using LengthMismatch = TypedError<ErrorCode::length_mismatch>;
using ShapeMismatch = TypedError<ErrorCode::shape_mismatch>;
using DegenerateInput = TypedError<ErrorCode::degenerate_input>;
using ConditionMismatch = TypedError<ErrorCode::condition_mismatch>;
using IndivisibleGroups = TypedError<ErrorCode::indivisible_groups>;
using SingleClass = TypedError<ErrorCode::single_class>;
using NonFinite = TypedError<ErrorCode::non_finite>;
using VertexOutOfRange = TypedError<ErrorCode::vertex_out_of_range>;
using MaskTooSmall = TypedError<ErrorCode::mask_too_small>;
using DimsTooLarge = TypedError<ErrorCode::dims_too_large>;
using TooFewSubjects = TypedError<ErrorCode::too_few_subjects>;
using EmptyWindow = TypedError<ErrorCode::empty_window>;
using OccluderTooLarge = TypedError<ErrorCode::occluder_too_large>;
using TooFewImages = TypedError<ErrorCode::too_few_images>;
using NodeNotFound = TypedError<ErrorCode::node_not_found>;
using AllZeroMap = TypedError<ErrorCode::all_zero_map>;
using EmptyRegion = TypedError<ErrorCode::empty_region>;
using InfeasibleSpec = TypedError<ErrorCode::infeasible_spec>;
using ConfigInvalid = TypedError<ErrorCode::config_invalid>;
using InputMissing = TypedError<ErrorCode::input_missing>;
using ProviderFailure = TypedError<ErrorCode::provider_failure>;

/// Malformed file contents; carries the byte offset of the first bad byte.
class FormatError : public Error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(ErrorCode::format_error, what + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

}  // namespace rsat
