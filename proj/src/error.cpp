#include "conked/error.hpp"

namespace conked {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::degenerate_point: return "DegeneratePoint";
    case Errc::degenerate_configuration: return "DegenerateConfiguration";
    case Errc::insufficient_points: return "InsufficientPoints";
    case Errc::no_consensus: return "NoConsensus";
    case Errc::non_positive_scale: return "NonPositiveScale";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::out_of_bounds: return "OutOfBounds";
    case Errc::degenerate_batch: return "DegenerateBatch";
    case Errc::non_positive_temperature: return "NonPositiveTemperature";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::too_few_survivors: return "TooFewSurvivors";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::empty_input: return "EmptyInput";
    case Errc::spec_infeasible: return "SpecInfeasible";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::io_error: return "IoError";
    case Errc::format_error: return "FormatError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

}  // namespace conked
