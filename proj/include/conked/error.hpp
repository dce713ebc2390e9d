#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace conked {

enum class Errc {
  degenerate_point,
  degenerate_configuration,
  insufficient_points,
  no_consensus,
  non_positive_scale,
  dimension_mismatch,
  out_of_bounds,
  degenerate_batch,
  non_positive_temperature,
  shape_mismatch,
  too_few_survivors,
  non_finite_loss,
  empty_input,
  spec_infeasible,
  invalid_argument,
  io_error,
  format_error,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace conked
