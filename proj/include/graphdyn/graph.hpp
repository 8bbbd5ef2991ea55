#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace graphdyn {

/// Weighted interaction graph. A(i, j) is the weight of the edge j -> i and
/// enters node i's dynamics. Immutable once constructed.
class Graph {
 public:
  Graph() = default;
  /// Empty graph on n nodes.
  explicit Graph(std::size_t n);
  /// Row-major n x n adjacency; throws ShapeError or ParamError (negative or
  /// non-finite weight).
  Graph(std::size_t n, std::vector<double> adjacency);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
  std::span<const double> dense() const { return a_; }

  /// Nonzero entries of row i, in increasing column order.
  std::span<const std::size_t> neighbors(std::size_t i) const;
  std::span<const double> weights(std::size_t i) const;

  /// Number of nonzero entries of A.
  std::size_t nonzero_count() const { return col_.size(); }
  /// Number of unordered pairs {i, j}, i != j, joined in either direction.
  std::size_t edge_count() const;
  bool is_symmetric() const;
  bool is_binary() const;
  bool is_connected() const;  // ignoring direction
  std::vector<std::size_t> degrees() const;  // nonzeros per row

  friend bool operator==(const Graph& a, const Graph& b) { return a.n_ == b.n_ && a.a_ == b.a_; }

 private:
  void build_rows();

  std::size_t n_ = 0;
  std::vector<double> a_;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_;
  std::vector<double> val_;
};

/// Barabasi-Albert: seed clique on m+1 nodes, then each new node attaches m
/// edges to distinct existing nodes with probability proportional to degree.
Graph gen_ba(std::size_t n, std::size_t m, std::uint64_t seed);
/// Watts-Strogatz ring lattice with k nearest neighbours, each edge rewired
/// with probability p.
Graph gen_ws(std::size_t n, std::size_t k, double p, std::uint64_t seed);
/// Erdos-Renyi G(n, p).
Graph gen_er(std::size_t n, double p, std::uint64_t seed);

/// Edge-list text: header `n=<nodes>` (optionally followed by `directed=1`),
/// then one `i j [w]` line per edge meaning A(i, j) = w (default 1). Without
/// the directed flag every line also sets A(j, i). `#` starts a comment.
void write_edge_list(const Graph& g, const std::filesystem::path& path);
Graph read_edge_list(const std::filesystem::path& path);

}  // namespace graphdyn
