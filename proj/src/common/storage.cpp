#include "xprompt/storage.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "xprompt/errors.hpp"

namespace xprompt {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<char> le_bytes(const Matrix& m) {
  static_assert(sizeof(double) == 8);
  std::vector<char> bytes(m.size() * 8);
  auto vals = m.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(vals[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return bytes;
}

}  // namespace

const std::string& Manifest::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ParseError("manifest is missing key '" + key + "'");
  return it->second;
}

std::size_t Manifest::get_count(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::logic_error&) {
    throw ParseError("manifest key '" + key + "' is not a count: '" + v + "'");
  }
}

bool Manifest::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ParseError("manifest key '" + key + "' is not a boolean: '" + v + "'");
}

std::string Manifest::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

Manifest Manifest::parse(std::string_view text, const std::string& origin) {
  Manifest m;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string line = trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty() || line[0] == '#') {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
    m.entries_[key] = value;
    if (end == text.size()) break;
  }
  return m;
}

void Manifest::save(const std::filesystem::path& path) const { write_text_file(path, to_string()); }

Manifest Manifest::load(const std::filesystem::path& path) {
  return parse(read_text_file(path), path.string());
}

void write_blob(const std::filesystem::path& path, const Matrix& m) {
  const auto bytes = le_bytes(m);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Matrix read_blob(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != rows * cols * 8) {
    throw ParseError(path.string() + ": expected " + std::to_string(rows * cols * 8) +
                     " bytes for a " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " matrix, found " + std::to_string(bytes.size()));
  }
  std::vector<double> data(rows * cols);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    }
    data[i] = std::bit_cast<double>(bits);
  }
  return Matrix(rows, cols, std::move(data));
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string matrix_hash(const Matrix& m) {
  const auto bytes = le_bytes(m);
  return sha256_hex(std::string_view(bytes.data(), bytes.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string shape_token(const Matrix& m) { return m.shape_string(); }

std::pair<std::size_t, std::size_t> parse_shape_token(const std::string& token) {
  const auto x = token.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(token);
    return {std::stoull(token.substr(0, x)), std::stoull(token.substr(x + 1))};
  } catch (const std::logic_error&) {
    throw ParseError("malformed shape '" + token + "'");
  }
}

std::string flags_to_string(const std::vector<unsigned char>& flags) {
  std::string s;
  s.reserve(flags.size());
  for (unsigned char f : flags) s.push_back(f ? '1' : '0');
  return s;
}

}  // namespace xprompt
