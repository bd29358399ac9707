#pragma once

#include <string>
#include <string_view>

#include "uarmor/firmware.hpp"

namespace uarmor::fw {

/// Parses assembly source into a module. Errors carry "file:line: message".
FirmwareModule assemble(std::string_view source, std::string_view filename = "<input>");

FirmwareModule assemble_file(const std::string& path);

/// Renders a module back to source form accepted by assemble().
std::string print_module(const FirmwareModule& m);

}  // namespace uarmor::fw
