#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rarity {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user input: bad parameters, schema mismatches, config problems.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Shortest round-trip decimal representation ("inf", "-inf", "nan" for
// non-finite values). Used wherever numbers are written to artifacts.
std::string format_double(double value);

// Strict parse of a full string as a double; throws ValidationError naming
// `what` on failure.
double parse_double(std::string_view text, std::string_view what);

std::string trim(std::string_view text);

// Whole-file binary read/write; throw IoError on failure.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace rarity
