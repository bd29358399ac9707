#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uarmor/pipeline.hpp"
#include "uarmor/sim.hpp"

namespace uarmor::sim {

/// One script line. Commands:
///   load <path> [key=value...]      source (.s, built here) or image file
///   input "<text>" | input-file <path>
///   device <n> | boot-seed <n>
///   boot
///   run [max_cycles] | until <target> [max_cycles]
///   inject <target> <hex>           attacker write primitive (MPU-checked)
///   overflow <func>.<buf> <hex>     write at the buffer on the next entry to func
///   call <target> [thread=N]        hijack the thread's control flow
///   reg <rN|sp|lr> <value> [thread=N]
///   expect <Kind> [field=value...]  ordered match against the event log
///   expect no <Kind> [field=value...]
///   expect output "<text>"
///   expect canary-changed
/// Targets are hex/decimal addresses or symbols with an optional +offset.
struct ScenarioStep {
  int line = 0;
  std::string command;
  std::vector<std::string> args;
  std::string text() const;
};

struct Scenario {
  std::string name;
  std::string path;  // scenario file, used to resolve relative paths
  std::vector<ScenarioStep> steps;

  static Scenario parse(const std::string& text, const std::string& name, const std::string& path = {});
  static Scenario load(const std::string& path);
};

struct ScenarioOptions {
  /// Overrides the policy given on the load line.
  std::optional<ssp::PolicyKind> policy;
  std::uint64_t default_run_cycles = 5000000;
};

struct ExpectationResult {
  int line = 0;
  std::string text;
  bool passed = false;
  std::string detail;
};

struct ScenarioReport {
  std::string name;
  std::string image;
  std::vector<ExpectationResult> expectations;
  std::vector<std::string> errors;
  std::vector<Event> events;
  std::string output;
  std::uint64_t cycles = 0;
  std::uint64_t boots = 0;
  /// Master canary of each boot, oldest first.
  std::vector<std::uint32_t> canaries;
  std::optional<StopReason> stop;

  bool passed() const;
  std::string to_text() const;
};

ScenarioReport run_scenario(const Scenario& scenario, const ScenarioOptions& options = {});

/// Parses the `key=value` options of a load line into a build configuration.
/// Unset keys keep the defaults: default canary coverage, fatal policy, μRNG and μESP on, no diversification.
BuildConfig scenario_build_config(const std::vector<std::string>& options);

}  // namespace uarmor::sim
