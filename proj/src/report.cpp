#include "uarmor/report.hpp"

#include <algorithm>
#include <cstdio>

namespace uarmor::report {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  std::string s = buf;
  if (s == "-0.0") s = "0.0";
  if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
  return s;
}

std::string pad(std::string s, std::size_t w) {
  s.resize(std::max(s.size(), w), ' ');
  return s;
}

std::string line(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += " | ";
    out += i + 1 == cells.size() ? cells[i] : pad(cells[i], widths[i]);
  }
  while (!out.empty() && (out.back() == ' ' || out.back() == '|')) out.pop_back();
  return out + "\n";
}

std::string render(const std::string& title, const std::vector<std::vector<std::string>>& table) {
  std::vector<std::size_t> widths(table.front().size(), 0);
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::string out = title.empty() ? "" : title + "\n";
  for (const auto& row : table) out += line(row, widths);
  return out;
}

}  // namespace

std::uint32_t memory_bytes(const sim::OverheadReport& r) {
  std::uint32_t measured = r.prot_memory > r.base_memory ? r.prot_memory - r.base_memory : 0;
  std::uint32_t data = r.prot_data > r.base_data ? r.prot_data - r.base_data : 0;
  return std::max({measured, r.canary_stack_bound, data});
}

std::string format_overhead_table(const std::string& title, const std::vector<OverheadRow>& rows,
                                  double sram_bytes) {
  std::vector<std::vector<std::string>> t;
  t.push_back({"Wrt. Application", "%Code", "%Data", "%Memory", "%Runtime"});
  for (const auto& row : rows) {
    const auto& r = row.overhead;
    t.push_back({row.app, num(r.code.app_pct), num(r.data.app_pct), "x (" + std::to_string(memory_bytes(r)) + " B)",
                 num(r.runtime.app_pct)});
  }
  t.push_back({"Wrt. Resources", "", "", "", ""});
  for (const auto& row : rows) {
    const auto& r = row.overhead;
    const double mem = sram_bytes > 0 ? 100.0 * memory_bytes(r) / sram_bytes : 0;
    t.push_back({row.app, num(r.code.resource_pct), num(r.data.resource_pct), num(mem), "x"});
  }
  return render(title, t);
}

std::string format_code_size_table(const std::string& title, const std::vector<OverheadRow>& rows) {
  std::vector<std::vector<std::string>> t;
  t.push_back({"App", "% CS (A)", "% CS (R)"});
  for (const auto& row : rows) {
    t.push_back({row.app, num(row.overhead.code.app_pct), num(row.overhead.code.resource_pct)});
  }
  return render(title, t);
}

}  // namespace uarmor::report
