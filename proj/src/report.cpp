#include "rsv/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rsv/error.hpp"

namespace rsv {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) fail(ErrorCode::DimMismatch, "CSV row width differs from header");
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::ostringstream out;
  for (const auto& c : comments_) out << "# " << c << '\n';
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << csv_field(r[i]);
    out << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write " + path);
  out << content;
  if (!out) fail(ErrorCode::InvalidArgument, "failed writing " + path);
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

CsvTable estimate_table(const EstimateResult& r) {
  CsvTable t({"quantity", "value"});
  t.add_row({"theta_hat", format_double(r.theta_hat)});
  t.add_row({"se", format_double(r.se)});
  t.add_row({"ci_low", format_double(r.ci_low)});
  t.add_row({"ci_high", format_double(r.ci_high)});
  for (Eigen::Index j = 0; j < r.theta_vec.size(); ++j)
    t.add_row({"theta_vec[" + std::to_string(j) + "]", format_double(r.theta_vec(j))});
  if (r.se_analytic) t.add_row({"se_analytic", format_double(*r.se_analytic)});
  if (r.bias_bound) t.add_row({"bias_bound", format_double(*r.bias_bound)});
  for (const auto& [k, v] : r.components) t.add_row({k, format_double(v)});
  for (std::size_t f = 0; f < r.fold_theta.size(); ++f)
    t.add_row({"fold_theta[" + std::to_string(f) + "]", format_double(r.fold_theta[f])});
  return t;
}

}  // namespace rsv
