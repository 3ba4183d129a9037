#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace superpose {

enum class ErrorCode {
  invalid_argument,
  invalid_graph,
  empty_document_set,
  empty_segment,
  factor_out_of_range,
  non_positive_step,
  empty_list,
  position_order_violation,
  model_mismatch,
  vocab_overflow,
  negative_distance,
  segment_too_short,
  summaries_unavailable,
  dimension_mismatch,
  storage_full,
  corrupt_record,
  iteration_budget_exceeded,
  no_paths_selected,
  parse_error,
  schema_error,
  protocol_version_mismatch,
  protocol_error,
  unknown_cache_id,
  position_unsupported,
  io_error,
};

// CamelCase name used in messages and on the wire ("EmptyDocumentSet", ...).
std::string_view to_string(ErrorCode code);
ErrorCode error_code_from_string(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace superpose
