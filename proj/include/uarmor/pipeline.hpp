#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uarmor/firmware.hpp"
#include "uarmor/image.hpp"
#include "uarmor/uesp.hpp"
#include "uarmor/uscramble.hpp"
#include "uarmor/ussp.hpp"

namespace uarmor {

/// Everything that determines a build's output bytes.
struct BuildConfig {
  ssp::SspMode ssp = ssp::SspMode::Off;
  ssp::CanaryConfig canary;
  ssp::PolicyKind policy = ssp::PolicyKind::Fatal;
  bool urng = false;
  bool esp = false;
  esp::Scenario scenario = esp::Scenario::ExecuteFromFlash;
  /// Diversification runs only when a seed is present.
  std::optional<scramble::DiversificationSeed> seed;
  scramble::DiversifyConfig diversify;
  esp::MemoryMap map = esp::MemoryMap::lm3s6965();
  std::uint32_t stack_slots = 4;
  std::uint32_t stack_size = 2048;

  /// Every protection enabled with default parameters.
  static BuildConfig full(const scramble::DiversificationSeed& seed);
};

struct BuildResult {
  fw::FirmwareModule module;
  fw::FlatImage image;
  std::vector<std::string> warnings;
};

fw::LayoutOptions layout_for(const BuildConfig& config);
BuildResult build(fw::FirmwareModule module, const BuildConfig& config);

std::string to_string(ssp::SspMode m);
std::optional<ssp::SspMode> parse_ssp_mode(const std::string& text);

/// Plain-text `key = value` record of a build, enough to rebuild it byte for byte.
struct Manifest {
  std::map<std::string, std::string> fields;

  static Manifest describe(const BuildConfig& config, const std::string& source_path, const std::string& source_text,
                           const std::string& map_path);
  static Manifest parse(const std::string& text);
  static Manifest load(const std::string& path);
  /// Sorted `key = value` lines followed by a manifest.hash line.
  std::string to_text() const;
  /// Hex sponge digest of every line except manifest.hash.
  std::string content_hash() const;
  /// Reconstructs the build configuration; the memory map is read from `map_path` when set.
  BuildConfig config() const;
  const std::string& get(const std::string& key) const;
};

/// Hex sponge digest of arbitrary bytes, used for manifests and content hashes.
std::string sponge_digest(std::string_view data, std::size_t bytes = 16);

}  // namespace uarmor
