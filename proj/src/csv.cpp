#include "auss/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>

#include "auss/common.hpp"

namespace auss::csv {

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) {
    throw Error("format_double failed");
  }
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw DataError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  out += '"';
  return out;
}

std::string join(const std::vector<std::string> &fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) {
      out += ',';
    }
    out += escape(fields[i]);
  }
  return out;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) {
    throw DataError("unterminated quoted field");
  }
  out.push_back(std::move(field));
  return out;
}

namespace {

Table read_rows(const std::filesystem::path &path,
                const std::function<void(const std::vector<std::string> &)> &check_header) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> fields;
    try {
      fields = split(line);
    } catch (const DataError &e) {
      throw DataError(path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      try {
        check_header(fields);
      } catch (const DataError &e) {
        throw DataError(path.filename().string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
      }
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw DataError(path.filename().string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) {
    throw DataError(path.filename().string() + ": missing header");
  }
  return table;
}

} // namespace

Table read(const std::filesystem::path &path, const std::vector<std::string> &columns) {
  return read_rows(path, [&columns](const std::vector<std::string> &header) {
    if (header != columns) {
      std::string expected;
      for (const auto &c : columns) {
        expected += (expected.empty() ? "" : ",") + c;
      }
      throw DataError("header must be '" + expected + "'");
    }
  });
}

Table read_flexible(const std::filesystem::path &path, const std::vector<std::string> &required,
                    const std::vector<std::string> &optional) {
  return read_rows(path, [&](const std::vector<std::string> &header) {
    if (header.size() < required.size() ||
        !std::equal(required.begin(), required.end(), header.begin())) {
      throw DataError("header must start with the required columns");
    }
    std::set<std::string> seen;
    for (std::size_t i = required.size(); i < header.size(); ++i) {
      if (std::find(optional.begin(), optional.end(), header[i]) == optional.end()) {
        throw DataError("unknown column '" + header[i] + "'");
      }
      if (!seen.insert(header[i]).second) {
        throw DataError("duplicate column '" + header[i] + "'");
      }
    }
  });
}

void write(const std::filesystem::path &path, const std::vector<std::string> &header,
           const std::vector<std::vector<std::string>> &rows) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << join(header) << '\n';
  for (const auto &row : rows) {
    out << join(row) << '\n';
  }
  if (!out) {
    throw Error("write failed for " + path.string());
  }
}

} // namespace auss::csv
