#pragma once

#include <string>
#include <vector>

namespace diffalign::csv {

// Shortest representation that parses back to the identical double.
std::string format_double(double v);

double parse_double(const std::string& s);

// Splits one CSV line on commas. No quoting support; none of the formats
// used here need it.
std::vector<std::string> split(const std::string& line);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  // Comment lines ("# ...") seen before the header, without the marker.
  std::vector<std::string> comments;
};

// Reads a numeric CSV with a single header row. Throws InputError if the file
// is missing or malformed (the message includes the path).
Table read_table(const std::string& path);

void write_table(const std::string& path, const Table& table);

}  // namespace diffalign::csv
