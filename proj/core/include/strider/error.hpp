#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace strider {

enum class Errc {
  malformed_global_header,
  truncated_record,
  unsupported_link_type,
  header_too_short,
  empty_flow,
  indivisible_length,
  negative_interval,
  shape_mismatch,
  non_finite_input,
  not_scalar,
  ratio_out_of_range,
  plan_mismatch,
  class_out_of_range,
  empty_dataset,
  label_out_of_range,
  empty_split,
  too_few_samples,
  mailbox_busy,
  empty_mailbox,
  not_found,
  invalid_config,
  io_error,
  parse_error,
};

// Stable CamelCase identifier, used in machine-readable error lines.
std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace strider
