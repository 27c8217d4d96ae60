#pragma once

// Deterministic artifact emission: CSV with 17 significant digits and LF
// endings, JSON through nlohmann, FNV-1a hashing for manifests.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "llqrsam/errors.hpp"

namespace llqrsam::harness {

using json = nlohmann::ordered_json;

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {
    line(header_);
  }

  CsvWriter& cell(double x) { return raw(fmt_double(x)); }
  CsvWriter& cell(std::size_t x) { return raw(std::to_string(x)); }
  CsvWriter& cell(int x) { return raw(std::to_string(x)); }
  CsvWriter& cell(const std::string& s) { return raw(s); }
  CsvWriter& cell(const char* s) { return raw(s); }

  void end_row() {
    if (col_ != header_.size())
      throw std::logic_error("CsvWriter: row has " + std::to_string(col_) + " cells, header has " +
                             std::to_string(header_.size()));
    text_ += '\n';
    col_ = 0;
  }

  const std::string& text() const noexcept { return text_; }

 private:
  CsvWriter& raw(const std::string& s) {
    if (col_ > 0) text_ += ',';
    text_ += s;
    ++col_;
    return *this;
  }
  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  std::vector<std::string> header_;
  std::string text_;
  std::size_t col_ = 0;
};

struct OutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw OutputError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw OutputError("cannot write '" + path.string() + "'");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw OutputError("write failed for '" + path.string() + "'");
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

}  // namespace llqrsam::harness
