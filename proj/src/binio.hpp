#pragma once

// Shared helpers for the ELIP* container formats: a text header of lines,
// terminated by "end", followed by little-endian binary payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "elip/error.hpp"

namespace elip::binio {

static_assert(std::endian::native == std::endian::little,
              "ELIP formats are little-endian; big-endian hosts need byte swapping");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }

  void line(const std::string& text) { out_ << text << '\n'; }

  void f32(const double* values, std::size_t n) {
    buf_.resize(n);
    for (std::size_t i = 0; i < n; ++i) buf_[i] = static_cast<float>(values[i]);
    out_.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(n * 4));
  }
  void f32(const float* values, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * 4));
  }
  void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
  void u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }

  void close() {
    out_.flush();
    if (!out_) throw Error("write failed for " + path_.string());
    out_.close();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<float> buf_;
};

class Reader {
 public:
  Reader(const std::filesystem::path& path, std::string magic) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open " + path.string());
    std::string got(magic.size() + 1, '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (in_.gcount() != static_cast<std::streamsize>(got.size()) || got != magic + "\n") {
      throw FormatError(path.string() + ": not an " + magic + " file (expected magic \"" + magic + "\")");
    }
  }

  // Next header line; TruncationError at end of file.
  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) throw TruncationError(path_.string() + ": header truncated");
    return s;
  }

  void f32(float* out, std::size_t n) {
    in_.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n * 4));
    if (in_.gcount() != static_cast<std::streamsize>(n * 4)) {
      throw TruncationError(path_.string() + ": payload truncated");
    }
  }
  void f32(double* out, std::size_t n) {
    buf_.resize(n);
    f32(buf_.data(), n);
    for (std::size_t i = 0; i < n; ++i) out[i] = buf_[i];
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    in_.read(reinterpret_cast<char*>(&v), 4);
    if (in_.gcount() != 4) throw TruncationError(path_.string() + ": payload truncated");
    return v;
  }
  std::uint8_t u8() {
    std::uint8_t v = 0;
    in_.read(reinterpret_cast<char*>(&v), 1);
    if (in_.gcount() != 1) throw TruncationError(path_.string() + ": payload truncated");
    return v;
  }

  // Trailing bytes after the declared payload indicate a shape/count mismatch.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::vector<float> buf_;
};

// Splits "a=b c=d" into a map; values may not contain spaces.
inline std::map<std::string, std::string> parse_fields(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

// Splits "key=value" at the first '='; the value keeps its spaces.
inline std::pair<std::string, std::string> split_kv(const std::string& line) {
  auto eq = line.find('=');
  if (eq == std::string::npos) return {line, ""};
  return {line.substr(0, eq), line.substr(eq + 1)};
}

inline std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    try {
      dims.push_back(static_cast<std::size_t>(std::stoull(tok)));
    } catch (const std::exception&) {
      throw FormatError("bad dimension list '" + text + "'");
    }
  }
  return dims;
}

inline std::string dims_str(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s;
}

inline std::size_t to_size(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    auto v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("bad integer for " + what + ": '" + text + "'");
  }
}

inline double to_double(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad number for " + what + ": '" + text + "'");
  }
}

}  // namespace elip::binio
