#pragma once

#include "omec/common.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace omec::csv {

// 17 significant digits: round-trips every finite double exactly.
std::string format_double(double value);

struct Table {
  std::vector<std::string> header;
  Matrix rows;
};

void write(std::ostream& out, const std::vector<std::string>& header, const Matrix& rows);
void write(const std::filesystem::path& path, const std::vector<std::string>& header,
           const Matrix& rows);

Table read(std::istream& in);
Table read(const std::filesystem::path& path);

// "prefix1", "prefix2", ... "prefixN"
std::vector<std::string> numbered(const std::string& prefix, Index count);

}  // namespace omec::csv
