#pragma once

#include <string>
#include <vector>

namespace mact {

/// Writes `contents` to `path` atomically: data goes to a sibling temp file
/// which is renamed over the target. A killed process never leaves a
/// truncated file readable at `path`.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

/// Formats a double with enough digits to round-trip exactly.
std::string format_double(double v);

std::string join_path(const std::string& dir, const std::string& name);

void ensure_directory(const std::string& path);

}  // namespace mact
