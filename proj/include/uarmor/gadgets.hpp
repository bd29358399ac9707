#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uarmor/image.hpp"

namespace uarmor::gadgets {

/// Instruction window ending in RET or CALLR. Identity is (address, bytes).
struct Gadget {
  std::uint32_t address = 0;
  std::vector<std::uint8_t> bytes;

  unsigned length() const { return unsigned(bytes.size() / 4); }
  auto operator<=>(const Gadget&) const = default;
};

/// Every window of 1..max_depth decodable instructions that ends at a RET or CALLR, sorted.
std::vector<Gadget> harvest(const fw::FlatImage& image, unsigned max_depth = 5);

struct SurvivalReport {
  /// Number of variants holding each distinct gadget.
  std::map<Gadget, std::uint32_t> holders;
  /// Survival counts: for each harvested gadget of each variant, the number of *other* variants
  /// with the same bytes at the same address.
  double avg_survival = 0;
  std::uint32_t max_survival = 0;
  std::uint32_t n_variants = 0;
  std::uint64_t harvested = 0;  // gadget instances summed over variants

  double avg_fraction() const { return n_variants > 1 ? avg_survival / (n_variants - 1) : 0; }
  double max_fraction() const { return n_variants > 1 ? double(max_survival) / (n_variants - 1) : 0; }
};

/// Requires at least two variants.
SurvivalReport survival(const std::vector<fw::FlatImage>& variants, unsigned max_depth = 5);

struct SurvivalRow {
  std::string set;
  SurvivalReport report;
};

/// Table with the columns Set, Avg. GS and Max. GS; each cell shows the count of other variants and its percentage.
std::string format_survival_table(const std::vector<SurvivalRow>& rows);

}  // namespace uarmor::gadgets
