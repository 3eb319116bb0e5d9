#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "rsv/estimate.hpp"

namespace rsv {

// 17 significant digits; "nan", "inf", "-inf" for non-finite values.
std::string format_double(double v);

// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_field(const std::string& s);

// Minimal CSV table: header, rows of already formatted fields, and an
// optional leading "# key: value" comment line per entry.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add_comment(const std::string& line) { comments_.push_back(line); }
  void add_row(std::vector<std::string> row);
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::string> comments_;
  std::vector<std::vector<std::string>> rows_;
};

void write_text(const std::string& path, const std::string& content);
void write_json(const std::string& path, const nlohmann::json& j);

// One row per scalar quantity (theta_hat, se, ci, components, folds).
CsvTable estimate_table(const EstimateResult& r);

}  // namespace rsv
