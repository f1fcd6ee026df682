#ifndef VIBENCH_IO_HPP
#define VIBENCH_IO_HPP

#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vibench/numkit.hpp"

namespace vibench {

/// RFC 4180 field quoting: fields containing a comma, quote, CR or LF are
/// wrapped in quotes with embedded quotes doubled.
std::string csv_escape(const std::string& field);

/// Shortest round-trip decimal form; empty for missing or non-finite values.
std::string format_number(std::optional<double> value);

/// Serialised CSV output; rows may be written from several threads.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header);
  void write_row(const std::vector<std::string>& fields);
  std::size_t columns() const { return header_.size(); }

 private:
  std::ostream& out_;
  std::vector<std::string> header_;
  std::mutex mutex_;
};

std::vector<std::vector<std::string>> parse_csv(std::istream& in);

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Matrix& m);

/// Non-finite numbers become null.
nlohmann::json number_or_null(double value);

/// {"version", "git_rev", "config"} stamp written next to every output file.
nlohmann::json sidecar(const nlohmann::json& resolved_config);
void write_json(const std::string& path, const nlohmann::json& value);
nlohmann::json read_json(const std::string& path);

/// Newline-delimited log-weights; blank lines and '#' comments are skipped.
Vector read_log_weights(const std::string& path);

std::string version_string();

}  // namespace vibench

#endif
