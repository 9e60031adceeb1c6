#pragma once

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace vmas {

/// A non-fatal finding attached to an input row (0 when not row-specific).
struct Diagnostic {
  std::size_t row = 0;
  std::string kind;
  std::string detail;

  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

using Diagnostics = std::vector<Diagnostic>;

inline void to_json(nlohmann::json& j, const Diagnostic& d) {
  j = {{"row", d.row}, {"kind", d.kind}, {"detail", d.detail}};
}

inline void write_jsonl(std::ostream& os, const Diagnostics& diags) {
  for (const auto& d : diags) os << nlohmann::json(d).dump() << '\n';
}

inline std::size_t count_kind(const Diagnostics& diags, std::string_view kind) {
  std::size_t n = 0;
  for (const auto& d : diags) n += d.kind == kind;
  return n;
}

/// Raised when input data cannot be used at all (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vmas
