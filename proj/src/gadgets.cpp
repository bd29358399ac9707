#include "uarmor/gadgets.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "uarmor/bytes.hpp"
#include "uarmor/error.hpp"
#include "uarmor/isa.hpp"

namespace uarmor::gadgets {

std::vector<Gadget> harvest(const fw::FlatImage& image, unsigned max_depth) {
  const auto& code = image.code;
  const std::size_t n = code.size() / 4;
  std::vector<std::optional<fw::Instruction>> insns(n);
  for (std::size_t i = 0; i < n; ++i) insns[i] = fw::decode(load_le32(&code[4 * i]));

  std::vector<Gadget> out;
  for (std::size_t end = 0; end < n; ++end) {
    const auto& last = insns[end];
    if (!last || (last->op != fw::Opcode::Ret && last->op != fw::Opcode::Callr)) continue;
    for (std::size_t k = 1; k <= max_depth && k <= end + 1; ++k) {
      const std::size_t first = end + 1 - k;
      if (!insns[first]) break;
      Gadget g;
      g.address = image.flash_base + std::uint32_t(4 * first);
      g.bytes.assign(code.begin() + std::ptrdiff_t(4 * first), code.begin() + std::ptrdiff_t(4 * (end + 1)));
      out.push_back(std::move(g));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

SurvivalReport survival(const std::vector<fw::FlatImage>& variants, unsigned max_depth) {
  if (variants.size() < 2) throw Error(ErrorCode::InvalidArgument, "survival needs at least two variants");
  SurvivalReport r;
  r.n_variants = std::uint32_t(variants.size());
  std::vector<std::vector<Gadget>> sets;
  sets.reserve(variants.size());
  for (const auto& v : variants) {
    sets.push_back(harvest(v, max_depth));
    for (const auto& g : sets.back()) ++r.holders[g];
  }
  double total = 0;
  for (const auto& s : sets) {
    for (const auto& g : s) {
      const std::uint32_t others = r.holders[g] - 1;
      total += others;
      r.max_survival = std::max(r.max_survival, others);
      ++r.harvested;
    }
  }
  r.avg_survival = r.harvested ? total / double(r.harvested) : 0;
  return r;
}

std::string format_survival_table(const std::vector<SurvivalRow>& rows) {
  std::size_t w = 3;
  for (const auto& row : rows) w = std::max(w, row.set.size());
  auto pad = [](std::string s, std::size_t width) {
    s.resize(std::max(s.size(), width), ' ');
    return s;
  };
  char buf[96];
  std::string out = pad("Set", w) + " | " + pad("Avg. GS", 20) + " | Max. GS\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    std::snprintf(buf, sizeof buf, "%.2f (%.2f%%)", r.avg_survival, 100.0 * r.avg_fraction());
    std::string avg = buf;
    std::snprintf(buf, sizeof buf, "%u (%.2f%%)", r.max_survival, 100.0 * r.max_fraction());
    out += pad(row.set, w) + " | " + pad(avg, 20) + " | " + buf + "\n";
  }
  return out;
}

}  // namespace uarmor::gadgets
