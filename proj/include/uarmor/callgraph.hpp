#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uarmor/firmware.hpp"
#include "uarmor/image.hpp"

namespace uarmor::fw {

/// Static call graph over direct CALL edges; indirect calls are not followed.
struct CallGraph {
  std::vector<std::string> nodes;
  std::vector<std::vector<int>> edges;  // deduplicated, in first-call order
  int entry = -1;

  static CallGraph from_module(const FirmwareModule& m);
  static CallGraph from_image(const FlatImage& image);
  int index_of(const std::string& name) const;
};

struct CallChainReport {
  std::vector<std::string> longest_chain;
  std::size_t length = 0;
  bool has_recursion = false;
};

/// Longest call chain from the entry. Walks may reuse a call edge at most
/// `recursion_bound` times, so a cycle is counted that many times.
CallChainReport longest_call_chain(const CallGraph& g, unsigned recursion_bound = 1);
CallChainReport longest_call_chain(const FirmwareModule& m, unsigned recursion_bound = 1);

std::uint32_t stack_depth_estimate(const FirmwareModule& m, std::uint32_t per_frame_overhead_bytes);
std::uint32_t stack_depth_estimate(const FlatImage& image, std::uint32_t per_frame_overhead_bytes);

}  // namespace uarmor::fw
