/*
 * Copyright 2026 The smadp Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "smadp/error.hpp"

namespace smadp::csv {

// 9 significant digits, %g style.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

class Writer {
 public:
  explicit Writer(std::vector<std::string> header) : header_(std::move(header)) {}

  // Cells are appended left to right; EndRow checks the width.
  Writer& Cell(const std::string& s) {
    row_.push_back(s);
    return *this;
  }
  Writer& Cell(const char* s) { return Cell(std::string(s)); }
  Writer& Cell(double v) { return Cell(format_double(v)); }
  Writer& Cell(std::size_t v) { return Cell(std::to_string(v)); }
  Writer& Cell(int v) { return Cell(std::to_string(v)); }
  Writer& Cell(bool v) { return Cell(std::string(v ? "1" : "0")); }

  void EndRow() {
    if (row_.size() != header_.size()) {
      throw StructuralError("csv: row has " + std::to_string(row_.size()) +
                            " cells, header has " + std::to_string(header_.size()));
    }
    rows_.push_back(std::move(row_));
    row_.clear();
  }

  std::string str() const {
    std::ostringstream out;
    WriteLine(out, header_);
    for (const auto& r : rows_) WriteLine(out, r);
    return out.str();
  }

  void Save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("csv: cannot write " + path.string());
    f << str();
  }

  std::size_t row_count() const { return rows_.size(); }

 private:
  static void WriteLine(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::string> row_;
};

// Parsed CSV with a mandatory header row. Cells never contain commas.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw StructuralError("csv: no column '" + name + "'");
  }

  double number(std::size_t row, const std::string& name) const {
    const std::string& cell = rows.at(row).at(column(name));
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0') {
      throw FormatError("csv: cell '" + cell + "' in column " + name + " is not a number");
    }
    return v;
  }

  const std::string& text(std::size_t row, const std::string& name) const {
    return rows.at(row).at(column(name));
  }

  static Table Parse(const std::string& content) {
    Table t;
    std::istringstream in(content);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::string cell;
      std::istringstream ls(line);
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (line.back() == ',') cells.emplace_back();
      if (first) {
        t.header = std::move(cells);
        first = false;
      } else {
        if (cells.size() != t.header.size()) {
          throw FormatError("csv: row width " + std::to_string(cells.size()) +
                            " != header width " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
      }
    }
    if (first) throw FormatError("csv: missing header row");
    return t;
  }

  static Table Load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("csv: cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return Parse(ss.str());
  }
};

}  // namespace smadp::csv
