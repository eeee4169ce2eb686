#include "omec/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace omec::csv {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write(std::ostream& out, const std::vector<std::string>& header, const Matrix& rows) {
  if (!header.empty() && static_cast<Index>(header.size()) != rows.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "csv header has " + std::to_string(header.size()) +
                                                   " columns, data has " +
                                                   std::to_string(rows.cols()));
  }
  for (std::size_t j = 0; j < header.size(); ++j) {
    out << (j ? "," : "") << header[j];
  }
  out << '\n';
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < rows.cols(); ++j) {
      out << (j ? "," : "") << format_double(rows(i, j));
    }
    out << '\n';
  }
}

void write(const std::filesystem::path& path, const std::vector<std::string>& header,
           const Matrix& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write(out, header, rows);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? "" : field.substr(first, last - first + 1));
  }
  return fields;
}

}  // namespace

Table read(std::istream& in) {
  Table table;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, "empty csv");
  table.header = split(line);
  std::vector<std::vector<double>> values;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line);
    if (fields.size() != table.header.size()) {
      throw Error(ErrorCode::kIo, "csv row " + std::to_string(values.size() + 1) + " has " +
                                      std::to_string(fields.size()) + " fields, expected " +
                                      std::to_string(table.header.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) {
      // strtod keeps subnormals that stod reports as out of range
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size()) {
        throw Error(ErrorCode::kIo, "csv row " + std::to_string(values.size() + 1) + ": cannot parse '" + f + "'");
      }
      row.push_back(v);
    }
    values.push_back(std::move(row));
  }
  table.rows.resize(static_cast<Index>(values.size()), static_cast<Index>(table.header.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      table.rows(static_cast<Index>(i), static_cast<Index>(j)) = values[i][j];
    }
  }
  return table;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read(in);
}

std::vector<std::string> numbered(const std::string& prefix, Index count) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(count));
  for (Index i = 1; i <= count; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

}  // namespace omec::csv
