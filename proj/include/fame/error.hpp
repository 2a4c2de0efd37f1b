#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fame {

enum class Errc {
  degenerate_sample,
  ordering,
  domain,
  grid_mismatch,
  config,
  dimension,
  solver_divergence,
  quadrature,
  ingestion,
  split,
  unsupported_op,
  non_finite_gradient,
  io,
  unknown_experiment,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure raised by the library carries a stable code so the CLI can
/// emit a machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace fame
