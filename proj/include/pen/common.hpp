#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pen {

// Bad user input (config, paths, file contents). The CLI maps this to exit
// code 2; every other exception maps to 3.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a training run produces a non-finite epoch loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Decimal formatting with round-half-even applied to the shortest decimal
// representation of `value` (so 0.035 -> "0.04" at 2 places, as a human
// rounding the printed number would expect).
std::string format_decimal(double value, int places);

uint64_t fnv1a64(std::string_view s);
std::string to_hex16(uint64_t x);

}  // namespace pen
