#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vfg/graph.hpp"
#include "vfg/tensor.hpp"

namespace vfg {

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Rectangular numeric table; `values` is [rows x cols].
struct Table {
  std::vector<std::string> columns;
  Tensor values;
  std::optional<ColumnStats> stats;

  std::size_t rows() const { return values.rank() == 2 ? values.rows() : 0; }
  std::size_t cols() const { return columns.size(); }
};

/// 8 columns: x1=x2=z1, x3=x4=2 sin z1, x5=x6=z2, x7=x8=z2^2 with
/// z1 ~ N(0, 1), z2 ~ N(1, 2^2). Per row, z1 is drawn before z2.
Table gen_sine(std::size_t count, std::uint64_t seed);

/// Linear-Gaussian structural causal model over named variables.
struct ScmSpec {
  struct Edge {
    std::string from;
    std::string to;
    double coefficient = 0.0;
  };
  std::vector<std::string> variables;
  std::vector<Edge> edges;
  std::vector<double> noise_std;  // parallel to variables

  /// Seven-variable DAG A..G with edges A->C, B->C, B->D, A->F, D->F, E->F,
  /// G->F. Coefficients are drawn once from U[0.5, 1.5] by Rng(kDefaultScmSeed)
  /// in edge order; every noise std is 1.
  static ScmSpec default_spec();

  /// Topological order of variable indices; throws DataError on a cycle.
  std::vector<std::size_t> topo_order() const;
  std::vector<std::size_t> parents(std::size_t v) const;
};

inline constexpr std::uint64_t kDefaultScmSeed = 20200601;

struct ScmData {
  Table table;     // one column per variable
  VfgGraph graph;  // over the duplicated columns, see duplicate_columns()
};

/// Ancestral sampling in topological order: value = sum(coef * parent) +
/// N(0, std^2). The emitted VFG has one dim-2 leaf per variable and one
/// aggregation root per non-source variable V whose children are V and
/// pa(V), all connected by flow edges with `blocks` coupling blocks.
ScmData gen_scm(std::size_t count, std::uint64_t seed, const ScmSpec& spec, int blocks = 4);

VfgGraph scm_graph(const ScmSpec& spec, int blocks = 4);

/// Repeats every column twice (a, a, b, b, ...), lifting scalar variables
/// to dim-2 sections.
Table duplicate_columns(const Table& table);

Table load_table(const std::filesystem::path& path, bool has_header);
Table parse_table(const std::string& text, bool has_header, const std::string& source = "<text>");
void save_table(const Table& table, const std::filesystem::path& path, bool header = true);
std::string format_table(const Table& table, bool header = true);

/// Zero mean, unit variance per column (population std). Stores stats.
/// Throws DataError on a zero-variance column.
Table standardize(const Table& table);
Tensor apply_standardization(const Tensor& values, const ColumnStats& stats);
Tensor invert_standardization(const Tensor& values, const ColumnStats& stats);

enum class SplitMode { HeadTail, Shuffle };

/// First n_train rows (or a seeded shuffle of them) for training, the rest
/// for testing. Throws DataError unless 0 < n_train < rows.
std::pair<Table, Table> split(const Table& table, std::size_t n_train, SplitMode mode, std::uint64_t seed = 0);

/// Rows [begin, end) of a table.
Table take_rows(const Table& table, std::size_t begin, std::size_t end);

}  // namespace vfg
