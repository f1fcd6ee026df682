#include "vibench/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "vibench/errors.hpp"

namespace vibench {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_number(std::optional<double> value) {
  if (!value || !std::isfinite(*value)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), *value);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> header)
    : out_(out), header_(std::move(header)) {
  write_row(header_);
}

void CsvWriter::write_row(const std::vector<std::string>& fields) {
  if (fields.size() != header_.size()) {
    throw std::invalid_argument("csv row has " + std::to_string(fields.size()) +
                                " fields, expected " + std::to_string(header_.size()));
  }
  std::lock_guard<std::mutex> lock(mutex_);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out_ << ',';
    out_ << csv_escape(fields[i]);
  }
  out_ << "\r\n";
}

std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && in.peek() == '\n') in.get(c);
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("csv: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(number_or_null(v[i]));
  return j;
}

Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] =
        j[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : j[i].get<double>();
  }
  return v;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    j.push_back(vector_to_json(m.row(r).transpose()));
  }
  return j;
}

nlohmann::json number_or_null(double value) {
  return std::isfinite(value) ? nlohmann::json(value) : nlohmann::json(nullptr);
}

std::string version_string() { return VIBENCH_VERSION; }

nlohmann::json sidecar(const nlohmann::json& resolved_config) {
  return {{"version", VIBENCH_VERSION},
          {"git_rev", VIBENCH_GIT_REV},
          {"config", resolved_config}};
}

void write_json(const std::string& path, const nlohmann::json& value) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << value.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec(path + ": " + e.what());
  }
}

Vector read_log_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<double> values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string token = line.substr(first, last - first + 1);
    // strtod accepts "-inf" and "inf"; from_chars does not on every library
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size()) {
      throw InvalidSpec(path + ":" + std::to_string(lineno) + ": not a number: " + token);
    }
    values.push_back(v);
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace vibench
