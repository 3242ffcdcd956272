#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace rntk::csv {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// RFC 4180 field quoting (only when the field needs it).
std::string quote(std::string_view field);

/// Line-oriented CSV writer: UTF-8, LF endings.
class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);
  void header(const std::vector<std::string>& cols);
  Writer& field(std::string_view s);
  Writer& field(double v);
  Writer& field(long long v);
  Writer& field(int v) { return field(static_cast<long long>(v)); }
  Writer& field(std::size_t v) { return field(static_cast<long long>(v)); }
  void end_row();

 private:
  std::ofstream out_;
  bool first_ = true;
};

/// Splits one RFC 4180 record (no embedded newlines).
std::vector<std::string> split_record(std::string_view line);

double parse_double(std::string_view s);

}  // namespace rntk::csv
