#pragma once

#include <string>
#include <vector>

#include "uarmor/sim.hpp"

namespace uarmor::report {

struct OverheadRow {
  std::string app;
  sim::OverheadReport overhead;
};

/// Worst-case extra memory in bytes: the larger of the measured peak-stack growth,
/// the static canary bound and the growth of the data section.
std::uint32_t memory_bytes(const sim::OverheadReport& r);

/// Two blocks, "Wrt. Application" and "Wrt. Resources", each with %Code, %Data, %Memory and %Runtime.
/// The application block shows memory as "x (N B)"; the resource block shows runtime as "x".
std::string format_overhead_table(const std::string& title, const std::vector<OverheadRow>& rows,
                                  double sram_bytes);

/// Code-size overhead only, as reported for the diversification pass.
std::string format_code_size_table(const std::string& title, const std::vector<OverheadRow>& rows);

}  // namespace uarmor::report
