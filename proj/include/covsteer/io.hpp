#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "covsteer/model.hpp"

namespace covsteer {

using Json = nlohmann::json;

/// Decimal text with 12 significant digits.
std::string format_number(double value);

/// value rounded to 12 significant digits; serializes to at most 12 digits.
double round_significant(double value);

/// Row-major nested array with every entry rounded to 12 significant digits.
Json matrix_to_json(const Matrix& M);
/// Parses a row-major nested array; `name` is used in error messages.
Matrix matrix_from_json(const Json& j, const std::string& name);

/// Appends ",<prefix>_<i>_<j>" for every entry in row-major order (1-based).
void write_matrix_header(std::ostream& out, const std::string& prefix, Eigen::Index rows,
                         Eigen::Index cols);
/// Appends ",<value>" for every entry in row-major order.
void write_matrix_row(std::ostream& out, const Matrix& M);

}  // namespace covsteer
