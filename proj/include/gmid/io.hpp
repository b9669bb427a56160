#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmid/grid.hpp"

namespace gmid {

/// Shortest decimal text that round-trips a double.
inline std::string format_double(double x) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

/// Header plus string cells; enough for the long-format files used here.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw std::invalid_argument("csv: missing column '" + name + "'");
  }

  bool has_column(const std::string& name) const {
    for (const auto& h : header) {
      if (h == name) return true;
    }
    return false;
  }

  double number(std::size_t row, std::size_t col) const {
    const std::string& cell = rows.at(row).at(col);
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size()) {
      throw std::invalid_argument("csv: row " + std::to_string(row + 1) + ": '" + cell +
                                  "' is not a number");
    }
    return v;
  }

  std::string to_string() const {
    std::ostringstream out;
    auto write_row = [&out](const std::vector<std::string>& r) {
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (j) out << ',';
        out << r[j];
      }
      out << '\n';
    };
    write_row(header);
    for (const auto& r : rows) write_row(r);
    return out.str();
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != table.header.size()) {
        throw std::invalid_argument("csv: row with " + std::to_string(cells.size()) +
                                    " cells, header has " + std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw std::invalid_argument("csv: empty file");
  return table;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_text_file(path));
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    if (what.rfind("cannot open", 0) == 0) throw;
    throw std::invalid_argument(path.string() + ": " + what);
  }
}

/// Writes a group of files all-or-nothing: contents go to temporaries in the
/// target directory first and are renamed only after every write succeeded.
inline void write_files_atomically(const std::filesystem::path& dir,
                                   const std::map<std::string, std::string>& files) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) {
    throw std::invalid_argument("output directory not usable: " + dir.string());
  }
  std::vector<fs::path> temps;
  auto cleanup = [&temps] {
    std::error_code ignore;
    for (const auto& p : temps) fs::remove(p, ignore);
  };
  for (const auto& [name, content] : files) {
    fs::path tmp = dir / ("." + name + ".tmp");
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      cleanup();
      throw std::invalid_argument("cannot write to output directory: " + dir.string());
    }
    temps.push_back(tmp);
    out << content;
    out.close();
    if (!out) {
      cleanup();
      throw std::invalid_argument("write failed: " + tmp.string());
    }
  }
  std::size_t k = 0;
  for (const auto& [name, content] : files) {
    fs::rename(temps[k++], dir / name, ec);
    if (ec) {
      cleanup();
      throw std::invalid_argument("cannot finalize " + (dir / name).string() + ": " + ec.message());
    }
  }
}

/// `t,s,value,observed`; unobserved values are written as empty cells.
inline std::string field_to_csv(const Field& f) {
  std::ostringstream out;
  out << "t,s,value,observed\n";
  for (std::size_t k = 0; k < f.T(); ++k) {
    for (std::size_t i = 0; i < f.n(); ++i) {
      const auto r = static_cast<Eigen::Index>(k), c = static_cast<Eigen::Index>(i);
      out << format_double(f.grid->t(k)) << ',' << format_double(f.grid->s(i)) << ',';
      if (f.mask(r, c)) out << format_double(f.values(r, c));
      out << ',' << (f.mask(r, c) ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

/// Recovers the grid from the (t, s) columns of a long-format table. Rows
/// must be time-major, as every writer in this library emits them.
inline std::shared_ptr<const SpaceTimeGrid> grid_from_table(const CsvTable& table) {
  const std::size_t ct = table.column("t"), cs = table.column("s");
  std::vector<double> t_nodes, s_nodes;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const double t = table.number(r, ct), s = table.number(r, cs);
    if (t_nodes.empty() || t != t_nodes.back()) t_nodes.push_back(t);
    if (t_nodes.size() == 1) s_nodes.push_back(s);
  }
  auto grid = std::make_shared<const SpaceTimeGrid>(std::move(s_nodes), std::move(t_nodes));
  if (grid->size() != table.rows.size()) {
    throw std::invalid_argument("csv: rows do not form a complete time-major grid");
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.number(r, ct) != grid->t(r / grid->n()) || table.number(r, cs) != grid->s(r % grid->n())) {
      throw std::invalid_argument("csv: row " + std::to_string(r + 1) + " breaks the grid ordering");
    }
  }
  return grid;
}

/// Reads `value_column` (and optionally an `observed` column) into a Field.
inline Field field_from_table(const CsvTable& table, const std::string& value_column,
                              std::shared_ptr<const SpaceTimeGrid> grid = nullptr) {
  if (!grid) grid = grid_from_table(table);
  Field f(grid);
  const std::size_t cv = table.column(value_column);
  const bool has_obs = table.has_column("observed");
  const std::size_t co = has_obs ? table.column("observed") : 0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto k = static_cast<Eigen::Index>(r / grid->n()), i = static_cast<Eigen::Index>(r % grid->n());
    const bool observed = has_obs ? table.rows[r][co] == "1" : true;
    f.mask(k, i) = observed;
    f.values(k, i) = observed ? table.number(r, cv) : 0.0;
  }
  return f;
}

}  // namespace gmid
