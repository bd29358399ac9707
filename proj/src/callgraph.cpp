#include "uarmor/callgraph.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "uarmor/error.hpp"

namespace uarmor::fw {

namespace {

void add_edge(std::vector<int>& list, int to) {
  if (std::find(list.begin(), list.end(), to) == list.end()) list.push_back(to);
}

// Tarjan-free reachability check: a node is recursive if it can reach itself.
bool reachable_cycle(const CallGraph& g) {
  const int n = int(g.nodes.size());
  std::vector<int> state(n, 0);  // 0 new, 1 on stack, 2 done
  bool found = false;
  std::function<void(int)> dfs = [&](int u) {
    state[u] = 1;
    for (int v : g.edges[u]) {
      if (state[v] == 1) found = true;
      if (state[v] == 0) dfs(v);
    }
    state[u] = 2;
  };
  if (g.entry >= 0) dfs(g.entry);
  return found;
}

}  // namespace

int CallGraph::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] == name) return int(i);
  }
  return -1;
}

CallGraph CallGraph::from_module(const FirmwareModule& m) {
  CallGraph g;
  std::map<std::string, int, std::less<>> idx;
  for (const auto& f : m.functions) {
    idx[f.name] = int(g.nodes.size());
    g.nodes.push_back(f.name);
  }
  g.edges.resize(g.nodes.size());
  for (const auto& f : m.functions) {
    for (const auto& b : f.blocks) {
      for (const auto& in : b.insns) {
        if (in.op == Opcode::Call && in.sym.kind == SymRef::Kind::Function) {
          auto it = idx.find(in.sym.name);
          if (it != idx.end()) add_edge(g.edges[idx[f.name]], it->second);
        }
      }
    }
  }
  auto e = idx.find(m.entry);
  g.entry = e == idx.end() ? -1 : e->second;
  return g;
}

CallGraph CallGraph::from_image(const FlatImage& image) {
  CallGraph g;
  auto funcs = decode_image(image);
  std::map<std::uint32_t, int> by_addr;
  for (const auto& f : funcs) {
    by_addr[f.start] = int(g.nodes.size());
    g.nodes.push_back(f.name);
  }
  g.edges.resize(g.nodes.size());
  for (std::size_t i = 0; i < funcs.size(); ++i) {
    for (std::size_t k = 0; k < funcs[i].insns.size(); ++k) {
      const auto& in = funcs[i].insns[k];
      if (in.op != Opcode::Call) continue;
      std::uint32_t target = funcs[i].start + std::uint32_t(k * 4) + std::uint32_t(in.imm * 4);
      auto it = by_addr.find(target);
      if (it != by_addr.end()) add_edge(g.edges[i], it->second);
    }
  }
  auto e = by_addr.find(image.entry);
  g.entry = e == by_addr.end() ? -1 : e->second;
  return g;
}

CallChainReport longest_call_chain(const CallGraph& g, unsigned recursion_bound) {
  CallChainReport r;
  if (g.entry < 0) return r;
  r.has_recursion = reachable_cycle(g);
  const int n = int(g.nodes.size());

  std::vector<int> best_path;
  if (!r.has_recursion) {
    // Acyclic: longest path by memoized DFS.
    std::vector<int> len(n, 0), next(n, -1);
    std::function<int(int)> longest = [&](int u) {
      if (len[u]) return len[u];
      int best = 1;
      for (int v : g.edges[u]) {
        int l = 1 + longest(v);
        if (l > best) {
          best = l;
          next[u] = v;
        }
      }
      return len[u] = best;
    };
    longest(g.entry);
    for (int u = g.entry; u >= 0; u = next[u]) best_path.push_back(u);
  } else {
    std::map<std::pair<int, int>, unsigned> used;
    std::vector<int> path{g.entry};
    std::function<void(int)> walk = [&](int u) {
      if (path.size() > best_path.size()) best_path = path;
      for (int v : g.edges[u]) {
        auto& count = used[{u, v}];
        if (count >= recursion_bound) continue;
        ++count;
        path.push_back(v);
        walk(v);
        path.pop_back();
        --count;
      }
    };
    walk(g.entry);
  }
  for (int u : best_path) r.longest_chain.push_back(g.nodes[u]);
  r.length = r.longest_chain.size();
  return r;
}

CallChainReport longest_call_chain(const FirmwareModule& m, unsigned recursion_bound) {
  return longest_call_chain(CallGraph::from_module(m), recursion_bound);
}

std::uint32_t stack_depth_estimate(const FirmwareModule& m, std::uint32_t per_frame_overhead_bytes) {
  if (per_frame_overhead_bytes == 0) throw Error(ErrorCode::InvalidArgument, "per-frame overhead must be positive");
  return std::uint32_t(longest_call_chain(m).length) * per_frame_overhead_bytes;
}

std::uint32_t stack_depth_estimate(const FlatImage& image, std::uint32_t per_frame_overhead_bytes) {
  if (per_frame_overhead_bytes == 0) throw Error(ErrorCode::InvalidArgument, "per-frame overhead must be positive");
  return std::uint32_t(longest_call_chain(CallGraph::from_image(image)).length) * per_frame_overhead_bytes;
}

}  // namespace uarmor::fw
