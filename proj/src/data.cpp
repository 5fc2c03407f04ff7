#include "vfg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "vfg/error.hpp"
#include "vfg/rng.hpp"

namespace vfg {

Table gen_sine(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  Table t;
  t.columns = {"x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8"};
  t.values = Tensor(Shape{count, 8});
  for (std::size_t r = 0; r < count; ++r) {
    const double z1 = rng.normal(0.0, 1.0);
    const double z2 = rng.normal(1.0, 2.0);
    const double row[8] = {z1, z1, 2.0 * std::sin(z1), 2.0 * std::sin(z1), z2, z2, z2 * z2, z2 * z2};
    std::copy(std::begin(row), std::end(row), t.values.data().begin() + static_cast<std::ptrdiff_t>(r * 8));
  }
  return t;
}

ScmSpec ScmSpec::default_spec() {
  ScmSpec spec;
  spec.variables = {"A", "B", "C", "D", "E", "F", "G"};
  Rng rng(kDefaultScmSeed);
  const std::pair<const char*, const char*> edges[] = {{"A", "C"}, {"B", "C"}, {"B", "D"}, {"A", "F"},
                                                       {"D", "F"}, {"E", "F"}, {"G", "F"}};
  for (const auto& [from, to] : edges) spec.edges.push_back({from, to, rng.uniform(0.5, 1.5)});
  spec.noise_std.assign(spec.variables.size(), 1.0);
  return spec;
}

namespace {

std::size_t variable_index(const ScmSpec& spec, const std::string& name) {
  const auto it = std::find(spec.variables.begin(), spec.variables.end(), name);
  if (it == spec.variables.end()) throw DataError("SCM edge references unknown variable '" + name + "'");
  return static_cast<std::size_t>(it - spec.variables.begin());
}

}  // namespace

std::vector<std::size_t> ScmSpec::parents(std::size_t v) const {
  std::vector<std::size_t> out;
  for (const auto& e : edges) {
    if (variable_index(*this, e.to) == v) out.push_back(variable_index(*this, e.from));
  }
  return out;
}

std::vector<std::size_t> ScmSpec::topo_order() const {
  const std::size_t n = variables.size();
  std::vector<std::size_t> indegree(n, 0);
  for (const auto& e : edges) {
    if (!std::isfinite(e.coefficient)) throw DataError("SCM coefficient " + e.from + "->" + e.to + " is not finite");
    ++indegree[variable_index(*this, e.to)];
  }
  std::vector<std::size_t> order;
  std::vector<bool> done(n, false);
  while (order.size() < n) {
    bool progressed = false;
    for (std::size_t v = 0; v < n; ++v) {
      if (done[v] || indegree[v] != 0) continue;
      done[v] = true;
      order.push_back(v);
      progressed = true;
      for (const auto& e : edges) {
        if (variable_index(*this, e.from) == v) --indegree[variable_index(*this, e.to)];
      }
    }
    if (!progressed) throw DataError("SCM spec contains a cycle");
  }
  return order;
}

VfgGraph scm_graph(const ScmSpec& spec, int blocks) {
  std::vector<NodeSpec> nodes;
  std::vector<EdgeSpec> edges;
  for (const auto& v : spec.variables) nodes.push_back({v, NodeKind::Leaf, false, 2});
  for (std::size_t v = 0; v < spec.variables.size(); ++v) {
    const auto parents = spec.parents(v);
    if (parents.empty()) continue;
    const std::string family = "fam_" + spec.variables[v];
    nodes.push_back({family, NodeKind::Internal, true, 2});
    edges.push_back({spec.variables[v], family, EdgeFunc::flow(blocks)});
    for (std::size_t p : parents) edges.push_back({spec.variables[p], family, EdgeFunc::flow(blocks)});
  }
  return VfgGraph::build(std::move(nodes), std::move(edges), spec.variables);
}

ScmData gen_scm(std::size_t count, std::uint64_t seed, const ScmSpec& spec, int blocks) {
  const auto order = spec.topo_order();
  if (spec.noise_std.size() != spec.variables.size()) throw DataError("SCM noise_std length mismatch");
  const std::size_t n = spec.variables.size();
  std::vector<std::vector<std::pair<std::size_t, double>>> incoming(n);
  for (const auto& e : spec.edges) {
    incoming[variable_index(spec, e.to)].emplace_back(variable_index(spec, e.from), e.coefficient);
  }
  Rng rng(seed);
  Table t;
  t.columns = spec.variables;
  t.values = Tensor(Shape{count, n});
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t v : order) {
      double value = 0.0;
      for (const auto& [p, c] : incoming[v]) value += c * t.values.at(r, p);
      t.values.at(r, v) = value + spec.noise_std[v] * rng.normal();
    }
  }
  return ScmData{std::move(t), scm_graph(spec, blocks)};
}

Table duplicate_columns(const Table& table) {
  Table out;
  for (const auto& c : table.columns) {
    out.columns.push_back(c + "_1");
    out.columns.push_back(c + "_2");
  }
  const std::size_t rows = table.rows();
  const std::size_t cols = table.cols();
  out.values = Tensor(Shape{rows, 2 * cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.values.at(r, 2 * c) = table.values.at(r, c);
      out.values.at(r, 2 * c + 1) = table.values.at(r, c);
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Table parse_table(const std::string& text, bool has_header, const std::string& source) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_cells(line);
    if (has_header && t.columns.empty()) {
      for (auto& c : cells) t.columns.push_back(trim(c));
      width = cells.size();
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw DataError(source + ":" + std::to_string(line_no) + ": ragged row with " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(width));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw DataError(source + ":" + std::to_string(line_no) + ": column " + std::to_string(c + 1) +
                        ": non-numeric cell '" + cell + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (t.columns.empty()) {
    for (std::size_t c = 0; c < width; ++c) t.columns.push_back("c" + std::to_string(c + 1));
  }
  t.values = Tensor(Shape{rows, width}, std::move(values));
  return t;
}

Table load_table(const std::filesystem::path& path, bool has_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str(), has_header, path.string());
}

std::string format_table(const Table& table, bool header) {
  std::ostringstream out;
  if (header) {
    for (std::size_t c = 0; c < table.cols(); ++c) out << (c ? "," : "") << table.columns[c];
    out << '\n';
  }
  char buf[64];
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.values.cols(); ++c) {
      const auto res = std::to_chars(buf, buf + sizeof buf, table.values.at(r, c));
      if (c) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  return out.str();
}

void save_table(const Table& table, const std::filesystem::path& path, bool header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << format_table(table, header);
}

Table standardize(const Table& table) {
  const std::size_t rows = table.rows();
  const std::size_t cols = table.values.cols();
  if (rows == 0) throw DataError("cannot standardize an empty table");
  ColumnStats stats{std::vector<double>(cols, 0.0), std::vector<double>(cols, 0.0)};
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += table.values.at(r, c);
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) var += (table.values.at(r, c) - mean) * (table.values.at(r, c) - mean);
    var /= static_cast<double>(rows);
    if (!(var > 0.0)) {
      throw DataError("column " + std::to_string(c + 1) + " ('" + (c < table.columns.size() ? table.columns[c] : "") +
                      "') has zero variance");
    }
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(var);
  }
  Table out{table.columns, apply_standardization(table.values, stats), stats};
  return out;
}

Tensor apply_standardization(const Tensor& values, const ColumnStats& stats) {
  Tensor out = values;
  if (values.cols() != stats.mean.size()) throw DataError("standardization stats do not match column count");
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) out.at(r, c) = (values.at(r, c) - stats.mean[c]) / stats.std[c];
  }
  return out;
}

Tensor invert_standardization(const Tensor& values, const ColumnStats& stats) {
  Tensor out = values;
  if (values.cols() != stats.mean.size()) throw DataError("standardization stats do not match column count");
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) out.at(r, c) = values.at(r, c) * stats.std[c] + stats.mean[c];
  }
  return out;
}

Table take_rows(const Table& table, std::size_t begin, std::size_t end) {
  const std::size_t cols = table.values.cols();
  if (begin > end || end > table.rows()) throw DataError("row range out of bounds");
  const auto& src = table.values.storage();
  Storage v(src.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                        src.begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Table{table.columns, Tensor(Shape{end - begin, cols}, std::move(v)), table.stats};
}

std::pair<Table, Table> split(const Table& table, std::size_t n_train, SplitMode mode, std::uint64_t seed) {
  const std::size_t rows = table.rows();
  if (n_train == 0 || n_train >= rows) {
    throw DataError("split needs 0 < n_train < rows (n_train=" + std::to_string(n_train) + ", rows=" +
                    std::to_string(rows) + ")");
  }
  if (mode == SplitMode::HeadTail) return {take_rows(table, 0, n_train), take_rows(table, n_train, rows)};
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  const std::size_t cols = table.values.cols();
  Table shuffled{table.columns, Tensor(Shape{rows, cols}), table.stats};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) shuffled.values.at(r, c) = table.values.at(perm[r], c);
  }
  return {take_rows(shuffled, 0, n_train), take_rows(shuffled, n_train, rows)};
}

}  // namespace vfg
