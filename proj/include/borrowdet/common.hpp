#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace borrowdet {

inline constexpr const char* kVersion = "0.1.0";

// Input / contract violations (bad files, bad arguments, failed
// preconditions). The CLI maps these to exit code 2; everything else
// derived from std::runtime_error maps to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a, used for resource checksums in run manifests.
std::uint64_t fnv1a64(std::string_view data);
std::uint64_t fnv1a64_file(const std::string& path);

std::string base64_encode(const void* data, std::size_t size);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Whole-file and line-oriented IO with path-carrying error messages.
std::string read_file(const std::string& path);
std::vector<std::string> read_lines(const std::string& path);
void write_file(const std::string& path, const std::string& content);

std::vector<std::string> split(std::string_view line, char sep);
std::string join(const std::vector<std::string>& parts, char sep);

// Locale-independent float formatting (shortest round-trip, '.' decimal
// point) so emitted TSVs are reproducible byte for byte.
std::string format_double(double value);
double parse_double(std::string_view text, const std::string& context);
long parse_long(std::string_view text, const std::string& context);

}  // namespace borrowdet
