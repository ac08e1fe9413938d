#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "qgface/common.hpp"

namespace qgface {

// Minimal CSV writer. Numbers are formatted with %.17g so that identical
// values serialize to identical bytes; every file starts with a header row.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns)
      : out_(path, std::ios::binary), ncols_(columns.size()) {
    if (!out_) throw IngestionError("cannot open CSV for writing: " + path);
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    if (values.size() != ncols_)
      throw InvalidInputError("CSV row width mismatch");
    char buf[32];
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
      out_ << buf;
    }
    out_ << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  size_t ncols_;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace qgface
