#pragma once

// Dense matrix I/O (MatrixMarket array/coordinate, CSV) and FactoredMatrix
// serialization (JSON document or three CSV blocks).

#include <cctype>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowrank/core.hpp"

namespace lowrank {

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

inline std::vector<double> parse_csv_row(const std::string& line) {
  std::vector<double> row;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      row.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw IoError("csv: cannot parse '" + cell + "' as a number");
    }
  }
  return row;
}

inline Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows, Index cols_if_empty) {
  if (rows.empty()) return Matrix(0, cols_if_empty);
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw IoError("csv: ragged rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return out;
}

}  // namespace detail

// ---- CSV ----

inline void write_csv(std::ostream& os, const Matrix& a) {
  os << std::setprecision(17);
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) os << (j ? "," : "") << a(i, j);
    os << '\n';
  }
}

inline Matrix read_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(detail::parse_csv_row(line));
  }
  return detail::rows_to_matrix(rows, 0);
}

// ---- MatrixMarket (real general) ----

enum class MatrixMarketFormat { array, coordinate };

inline void write_matrix_market(std::ostream& os, const Matrix& a,
                                MatrixMarketFormat format = MatrixMarketFormat::array) {
  os << std::setprecision(17);
  if (format == MatrixMarketFormat::array) {
    os << "%%MatrixMarket matrix array real general\n" << a.rows() << ' ' << a.cols() << '\n';
    for (Index j = 0; j < a.cols(); ++j)
      for (Index i = 0; i < a.rows(); ++i) os << a(i, j) << '\n';
    return;
  }
  Index nnz = 0;
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) nnz += a(i, j) != 0.0;
  os << "%%MatrixMarket matrix coordinate real general\n"
     << a.rows() << ' ' << a.cols() << ' ' << nnz << '\n';
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      if (a(i, j) != 0.0) os << i + 1 << ' ' << j + 1 << ' ' << a(i, j) << '\n';
}

inline Matrix read_matrix_market(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("matrix market: empty input");
  std::istringstream banner(line);
  std::string tag, object, format, field, symmetry;
  banner >> tag >> object >> format >> field >> symmetry;
  if (tag != "%%MatrixMarket" || detail::lower(object) != "matrix") {
    throw IoError("matrix market: missing '%%MatrixMarket matrix' banner");
  }
  format = detail::lower(format);
  field = detail::lower(field);
  symmetry = detail::lower(symmetry);
  if (field != "real" && field != "integer" && field != "double") {
    throw IoError("matrix market: unsupported field '" + field + "'");
  }
  if (symmetry != "general" && symmetry != "symmetric") {
    throw IoError("matrix market: unsupported symmetry '" + symmetry + "'");
  }
  const bool sym = symmetry == "symmetric";
  while (std::getline(is, line))
    if (!line.empty() && line[0] != '%') break;
  std::istringstream size_line(line);
  Index m = 0, n = 0;
  if (!(size_line >> m >> n) || m < 0 || n < 0) throw IoError("matrix market: bad size line");
  Matrix a = Matrix::Zero(m, n);
  if (format == "array") {
    for (Index j = 0; j < n; ++j)
      for (Index i = sym ? j : 0; i < m; ++i) {
        double v;
        if (!(is >> v)) throw IoError("matrix market: truncated array data");
        a(i, j) = v;
        if (sym) a(j, i) = v;
      }
    return a;
  }
  if (format != "coordinate") throw IoError("matrix market: unknown format '" + format + "'");
  Index nnz = 0;
  if (!(size_line >> nnz)) throw IoError("matrix market: coordinate size line needs nnz");
  for (Index k = 0; k < nnz; ++k) {
    Index i, j;
    double v;
    if (!(is >> i >> j >> v)) throw IoError("matrix market: truncated coordinate data");
    if (i < 1 || i > m || j < 1 || j > n) throw IoError("matrix market: index out of range");
    a(i - 1, j - 1) = v;
    if (sym) a(j - 1, i - 1) = v;
  }
  return a;
}

// ---- file helpers ----

inline Matrix load_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  const bool mm = path.size() > 4 && detail::lower(path.substr(path.size() - 4)) == ".mtx";
  return mm ? read_matrix_market(in) : read_csv(in);
}

inline void save_matrix(const std::string& path, const Matrix& a) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  const bool mm = path.size() > 4 && detail::lower(path.substr(path.size() - 4)) == ".mtx";
  if (mm) {
    write_matrix_market(out, a);
  } else {
    write_csv(out, a);
  }
}

// ---- FactoredMatrix ----

inline nlohmann::json matrix_to_json(const Matrix& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < a.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) throw IoError("json: row count mismatch");
  Matrix a(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw IoError("json: column count mismatch");
    }
    for (Index k = 0; k < cols; ++k) a(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return a;
}

inline nlohmann::json factored_to_json(const FactoredMatrix& x) {
  nlohmann::json s = nlohmann::json::array();
  for (Index k = 0; k < x.rank(); ++k) s.push_back(x.sigma()(k));
  return {{"m", x.rows()}, {"n", x.cols()}, {"r", x.rank()},
          {"U", matrix_to_json(x.U())}, {"S", s}, {"V", matrix_to_json(x.V())}};
}

inline FactoredMatrix factored_from_json(const nlohmann::json& j) {
  const Index m = j.at("m").get<Index>();
  const Index n = j.at("n").get<Index>();
  const Index r = j.at("r").get<Index>();
  if (r == 0) return FactoredMatrix::zero(m, n);
  const auto& s = j.at("S");
  if (!s.is_array() || static_cast<Index>(s.size()) != r) throw IoError("json: S must hold r values");
  Vector sigma(r);
  for (Index k = 0; k < r; ++k) sigma(k) = s[static_cast<std::size_t>(k)].get<double>();
  return FactoredMatrix(matrix_from_json(j.at("U"), m, r), sigma, matrix_from_json(j.at("V"), n, r));
}

/// Three CSV blocks headed "# U", "# S" (one value per line) and "# V",
/// preceded by a "# m,n,r" line.
inline void write_factored_csv(std::ostream& os, const FactoredMatrix& x) {
  os << "# m,n,r\n" << x.rows() << ',' << x.cols() << ',' << x.rank() << "\n# U\n";
  write_csv(os, x.U());
  os << "# S\n";
  write_csv(os, Matrix(x.sigma()));
  os << "# V\n";
  write_csv(os, x.V());
}

inline FactoredMatrix read_factored_csv(std::istream& is) {
  std::string line;
  std::string section;
  std::vector<std::vector<double>> dims, u, s, v;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      section = line.substr(line.find_first_not_of("# "));
      continue;
    }
    auto row = detail::parse_csv_row(line);
    if (section == "m,n,r") {
      dims.push_back(row);
    } else if (section == "U") {
      u.push_back(row);
    } else if (section == "S") {
      s.push_back(row);
    } else if (section == "V") {
      v.push_back(row);
    } else {
      throw IoError("factored csv: data outside a '# U' / '# S' / '# V' block");
    }
  }
  if (dims.size() != 1 || dims[0].size() != 3) throw IoError("factored csv: missing '# m,n,r' line");
  const auto m = static_cast<Index>(dims[0][0]);
  const auto n = static_cast<Index>(dims[0][1]);
  const auto r = static_cast<Index>(dims[0][2]);
  if (r == 0) return FactoredMatrix::zero(m, n);
  const Matrix sm = detail::rows_to_matrix(s, 1);
  if (sm.size() != r) throw IoError("factored csv: S block must hold r values");
  const Matrix um = detail::rows_to_matrix(u, r);
  const Matrix vm = detail::rows_to_matrix(v, r);
  if (um.rows() != m || um.cols() != r || vm.rows() != n || vm.cols() != r) {
    throw IoError("factored csv: factor shapes disagree with m,n,r");
  }
  return FactoredMatrix(um, Eigen::Map<const Vector>(sm.data(), r), vm);
}

}  // namespace lowrank
