#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace auss::csv {

/// Shortest text that parses back to the same double.
std::string format_double(double value);

/// Parses a whole field as a double; throws DataError on trailing garbage.
double parse_double(std::string_view text);

/// Quotes the field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string> &fields);

/// Splits one record; handles quoted fields with doubled quotes.
std::vector<std::string> split(std::string_view line);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers; // 1-based source line of each row
};

/**
 * Reads a CSV file whose header must equal `columns` exactly (same names, same
 * order). Unknown or missing columns and ragged rows raise DataError carrying
 * the file name and line number.
 */
Table read(const std::filesystem::path &path, const std::vector<std::string> &columns);

/// Like read() but accepts any header that starts with `required`, followed by
/// columns drawn from `optional`.
Table read_flexible(const std::filesystem::path &path, const std::vector<std::string> &required,
                    const std::vector<std::string> &optional);

void write(const std::filesystem::path &path, const std::vector<std::string> &header,
           const std::vector<std::vector<std::string>> &rows);

} // namespace auss::csv
