#pragma once

// The `homlab` command line: simulate, correlate, fit, stark.
//
// Exit codes: 0 ok, 2 configuration/usage error, 3 data-format error,
// 4 domain error. Each command that writes a file also writes
// `<out>.manifest.json` listing inputs, outputs and their SHA-256 hashes.

#include <filesystem>
#include <iosfwd>
#include <string>

namespace homlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitDomain = 4;

/// Parses argv and runs one subcommand. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Lower-case hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

/// Manifest path written next to an output file.
std::filesystem::path manifest_path(const std::filesystem::path& output);

const char* version();

}  // namespace homlab::cli
