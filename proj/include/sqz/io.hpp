#pragma once

// File formats.
//
// Covariance binary (.sqzcov), little-endian:
//   bytes  0..7   ASCII magic "SQZCOV01"
//   bytes  8..15  uint64 M (mode count)
//   bytes 16..19  uint32 layout tag (1 = xi basis [a_1..a_M, a_1^dag..a_M^dag], row-major)
//   bytes 20..23  uint32 reserved, 0
//   then (2M)^2 entries, each two float64 (real, imag)
//
// Covariance CSV:
//   line 1: "# sqz-covariance,M=<M>,layout=xi-rowmajor-reim"
//   then 2M rows of 4M values: re(s_i0),im(s_i0),re(s_i1),im(s_i1),...

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sqz/gaussian.hpp"

namespace sqz::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr char cov_magic[8] = {'S', 'Q', 'Z', 'C', 'O', 'V', '0', '1'};
inline constexpr std::uint32_t layout_xi_rowmajor = 1;

// Shortest round-trip formatting for doubles.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
  }
  std::ofstream os(p, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Minimal CSV table: one header row plus numeric or string cells.
class CsvWriter {
public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void row(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(fmt(v));
    row(cells);
  }
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size()) throw ConfigError("CsvWriter: row width does not match header");
    rows_.push_back(cells);
  }

  std::string str() const {
    std::string out;
    auto emit = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    emit(header_);
    for (const auto& r : rows_) emit(r);
    return out;
  }

  void save(const std::filesystem::path& p) const {
    auto os = open_out(p);
    os << str();
    if (!os) throw IoError("write failed: " + p.string());
  }

private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Parses a numeric CSV with one header line; returns columns by header order.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::vector<double> column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) {
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r.at(c));
        return out;
      }
    throw ConfigError("CSV column not found: " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream ss(text);
  std::string line;
  bool have_header = false;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) throw ConfigError("CSV row width does not match header: " + line);
    std::vector<double> r;
    for (const auto& c : cells) {
      try {
        r.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw ConfigError("CSV cell is not numeric: " + c);
      }
    }
    t.rows.push_back(std::move(r));
  }
  if (!have_header) throw ConfigError("CSV has no header line");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& p) { return parse_csv(read_text(p)); }

// ---------------------------------------------------------------------------
// Covariance matrices

inline std::string covariance_to_csv(const CovarianceMatrix& s) {
  const auto& m = s.matrix();
  std::string out = "# sqz-covariance,M=" + std::to_string(s.modes()) + ",layout=xi-rowmajor-reim\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += fmt(m(i, j).real());
      out += ',';
      out += fmt(m(i, j).imag());
    }
    out += '\n';
  }
  return out;
}

inline CovarianceMatrix covariance_from_csv(const std::string& text) {
  std::istringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line.rfind("# sqz-covariance,M=", 0) != 0)
    throw ConfigError("covariance CSV: missing header");
  const auto mpos = line.find("M=") + 2;
  const std::size_t m = std::stoul(line.substr(mpos, line.find(',', mpos) - mpos));
  if (line.find("layout=xi-rowmajor-reim") == std::string::npos)
    throw ConfigError("covariance CSV: unsupported layout");
  const auto n = static_cast<Eigen::Index>(2 * m);
  MatrixXcd data(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::getline(ss, line)) throw ConfigError("covariance CSV: truncated");
    const auto cells = split_csv_line(line);
    if (cells.size() != static_cast<std::size_t>(2 * n)) throw ConfigError("covariance CSV: bad row width");
    for (Eigen::Index j = 0; j < n; ++j)
      data(i, j) = cd(std::stod(cells[static_cast<std::size_t>(2 * j)]),
                      std::stod(cells[static_cast<std::size_t>(2 * j + 1)]));
  }
  return CovarianceMatrix(std::move(data));
}

inline void write_covariance_binary(const std::filesystem::path& p, const CovarianceMatrix& s) {
  auto os = open_out(p, true);
  const std::uint64_t m = s.modes();
  const std::uint32_t layout = layout_xi_rowmajor, reserved = 0;
  os.write(cov_magic, 8);
  os.write(reinterpret_cast<const char*>(&m), sizeof m);
  os.write(reinterpret_cast<const char*>(&layout), sizeof layout);
  os.write(reinterpret_cast<const char*>(&reserved), sizeof reserved);
  const auto& d = s.matrix();
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      const double re = d(i, j).real(), im = d(i, j).imag();
      os.write(reinterpret_cast<const char*>(&re), sizeof re);
      os.write(reinterpret_cast<const char*>(&im), sizeof im);
    }
  if (!os) throw IoError("write failed: " + p.string());
}

inline CovarianceMatrix read_covariance_binary(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  char magic[8];
  std::uint64_t m = 0;
  std::uint32_t layout = 0, reserved = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&m), sizeof m);
  is.read(reinterpret_cast<char*>(&layout), sizeof layout);
  is.read(reinterpret_cast<char*>(&reserved), sizeof reserved);
  if (!is || std::string(magic, 8) != std::string(cov_magic, 8)) throw IoError("not a covariance file: " + p.string());
  if (layout != layout_xi_rowmajor) throw IoError("unsupported covariance layout tag");
  const auto n = static_cast<Eigen::Index>(2 * m);
  MatrixXcd data(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double re = 0, im = 0;
      is.read(reinterpret_cast<char*>(&re), sizeof re);
      is.read(reinterpret_cast<char*>(&im), sizeof im);
      data(i, j) = cd(re, im);
    }
  if (!is) throw IoError("truncated covariance file: " + p.string());
  return CovarianceMatrix(std::move(data));
}

} // namespace sqz::io
