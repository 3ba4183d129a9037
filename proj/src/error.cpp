#include "superpose/error.hpp"

#include <array>
#include <utility>

namespace superpose {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 25> kNames{{
    {ErrorCode::invalid_argument, "InvalidArgument"},
    {ErrorCode::invalid_graph, "InvalidGraph"},
    {ErrorCode::empty_document_set, "EmptyDocumentSet"},
    {ErrorCode::empty_segment, "EmptySegment"},
    {ErrorCode::factor_out_of_range, "FactorOutOfRange"},
    {ErrorCode::non_positive_step, "NonPositiveStep"},
    {ErrorCode::empty_list, "EmptyList"},
    {ErrorCode::position_order_violation, "PositionOrderViolation"},
    {ErrorCode::model_mismatch, "ModelMismatch"},
    {ErrorCode::vocab_overflow, "VocabOverflow"},
    {ErrorCode::negative_distance, "NegativeDistance"},
    {ErrorCode::segment_too_short, "SegmentTooShort"},
    {ErrorCode::summaries_unavailable, "SummariesUnavailable"},
    {ErrorCode::dimension_mismatch, "DimensionMismatch"},
    {ErrorCode::storage_full, "StorageFull"},
    {ErrorCode::corrupt_record, "CorruptRecord"},
    {ErrorCode::iteration_budget_exceeded, "IterationBudgetExceeded"},
    {ErrorCode::no_paths_selected, "NoPathsSelected"},
    {ErrorCode::parse_error, "ParseError"},
    {ErrorCode::schema_error, "SchemaError"},
    {ErrorCode::protocol_version_mismatch, "ProtocolVersionMismatch"},
    {ErrorCode::protocol_error, "ProtocolError"},
    {ErrorCode::unknown_cache_id, "UnknownCacheId"},
    {ErrorCode::position_unsupported, "PositionUnsupported"},
    {ErrorCode::io_error, "IoError"},
}};

}  // namespace

std::string_view to_string(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Unknown";
}

ErrorCode error_code_from_string(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return ErrorCode::protocol_error;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace superpose
