#pragma once

// On-disk building blocks shared by the checkpoint formats: a plain-text
// key-value manifest and raw little-endian float64 matrix blobs.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "xprompt/matrix.hpp"

namespace xprompt {

// Ordered key-value text: one "key = value" per line, '#' starts a comment.
class Manifest {
 public:
  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { entries_[key] = value; }
  void set(const std::string& key, std::size_t value) { entries_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  // Throws ParseError when the key is missing.
  const std::string& get(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string to_string() const;
  static Manifest parse(std::string_view text, const std::string& origin = "<memory>");

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string> entries_;
};

// Row-major little-endian IEEE-754 doubles, no header; the shape lives in the
// manifest that references the blob.
void write_blob(const std::filesystem::path& path, const Matrix& m);
Matrix read_blob(const std::filesystem::path& path, std::size_t rows, std::size_t cols);

// Hex SHA-256 of the little-endian byte image of the matrix.
std::string matrix_hash(const Matrix& m);
std::string sha256_hex(std::string_view bytes);

std::string read_text_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see partial files.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// "RxC" shape strings used in manifests.
std::string shape_token(const Matrix& m);
std::pair<std::size_t, std::size_t> parse_shape_token(const std::string& token);

// Flags as a compact "0101" string.
std::string flags_to_string(const std::vector<unsigned char>& flags);

}  // namespace xprompt
