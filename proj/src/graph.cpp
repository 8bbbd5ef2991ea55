#include "graphdyn/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "graphdyn/errors.hpp"

namespace graphdyn {

Graph::Graph(std::size_t n) : n_(n), a_(n * n, 0.0) { build_rows(); }

Graph::Graph(std::size_t n, std::vector<double> adjacency) : n_(n), a_(std::move(adjacency)) {
  if (a_.size() != n * n) {
    throw ShapeError("adjacency has " + std::to_string(a_.size()) + " entries, expected " +
                     std::to_string(n * n));
  }
  for (double w : a_) {
    if (!std::isfinite(w) || w < 0.0) throw ParamError("adjacency weights must be finite and >= 0");
  }
  build_rows();
}

void Graph::build_rows() {
  row_ptr_.assign(1, 0);
  col_.clear();
  val_.clear();
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) {
      const double w = a_[i * n_ + j];
      if (w != 0.0) {
        col_.push_back(j);
        val_.push_back(w);
      }
    }
    row_ptr_.push_back(col_.size());
  }
}

std::span<const std::size_t> Graph::neighbors(std::size_t i) const {
  return std::span<const std::size_t>(col_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
}

std::span<const double> Graph::weights(std::size_t i) const {
  return std::span<const double>(val_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
}

std::size_t Graph::edge_count() const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      if ((*this)(i, j) != 0.0 || (*this)(j, i) != 0.0) ++c;
    }
  }
  return c;
}

bool Graph::is_symmetric() const {
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      if ((*this)(i, j) != (*this)(j, i)) return false;
    }
  }
  return true;
}

bool Graph::is_binary() const {
  return std::all_of(a_.begin(), a_.end(), [](double w) { return w == 0.0 || w == 1.0; });
}

bool Graph::is_connected() const {
  if (n_ <= 1) return true;
  std::vector<char> seen(n_, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < n_; ++v) {
      if (!seen[v] && ((*this)(u, v) != 0.0 || (*this)(v, u) != 0.0)) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n_;
}

std::vector<std::size_t> Graph::degrees() const {
  std::vector<std::size_t> d(n_);
  for (std::size_t i = 0; i < n_; ++i) d[i] = row_ptr_[i + 1] - row_ptr_[i];
  return d;
}

namespace {

void link(std::vector<double>& a, std::size_t n, std::size_t i, std::size_t j) {
  a[i * n + j] = 1.0;
  a[j * n + i] = 1.0;
}

}  // namespace

Graph gen_ba(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m < 1 || m >= n) {
    throw ParamError("gen_ba requires 1 <= m < n (n=" + std::to_string(n) + ", m=" + std::to_string(m) + ")");
  }
  std::mt19937_64 rng(seed);
  std::vector<double> a(n * n, 0.0);
  // every edge endpoint, so uniform draws are degree-proportional
  std::vector<std::size_t> endpoints;
  for (std::size_t i = 0; i <= m; ++i) {
    for (std::size_t j = i + 1; j <= m; ++j) {
      link(a, n, i, j);
      endpoints.push_back(i);
      endpoints.push_back(j);
    }
  }
  for (std::size_t v = m + 1; v < n; ++v) {
    std::vector<std::size_t> targets;
    std::uniform_int_distribution<std::size_t> pick(0, endpoints.size() - 1);
    while (targets.size() < m) {
      const std::size_t t = endpoints[pick(rng)];
      if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
    }
    for (std::size_t t : targets) {
      link(a, n, v, t);
      endpoints.push_back(v);
      endpoints.push_back(t);
    }
  }
  return Graph(n, std::move(a));
}

Graph gen_ws(std::size_t n, std::size_t k, double p, std::uint64_t seed) {
  if (k % 2 != 0 || k >= n || !(p >= 0.0 && p <= 1.0)) {
    throw ParamError("gen_ws requires even k < n and 0 <= p <= 1");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::set<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 1; s <= k / 2; ++s) {
      const std::size_t j = (i + s) % n;
      adj[i].insert(j);
      adj[j].insert(i);
    }
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> node(0, n - 1);
  for (std::size_t s = 1; s <= k / 2; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + s) % n;
      if (coin(rng) >= p || !adj[i].count(j)) continue;
      if (adj[i].size() >= n - 1) continue;
      std::size_t w = node(rng);
      while (w == i || adj[i].count(w)) w = node(rng);
      adj[i].erase(j);
      adj[j].erase(i);
      adj[i].insert(w);
      adj[w].insert(i);
    }
  }
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : adj[i]) a[i * n + j] = 1.0;
  }
  return Graph(n, std::move(a));
}

Graph gen_er(std::size_t n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParamError("gen_er requires 0 <= p <= 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution edge(p);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (edge(rng)) link(a, n, i, j);
    }
  }
  return Graph(n, std::move(a));
}

namespace {

std::string number_text(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
bool parse_token(const std::string& tok, T& out) {
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

}  // namespace

void write_edge_list(const Graph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const bool sym = g.is_symmetric();
  out << "n=" << g.size();
  if (!sym) out << " directed=1";
  out << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto nb = g.neighbors(i);
    const auto w = g.weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (sym && nb[k] < i) continue;
      out << i << ' ' << nb[k];
      if (w[k] != 1.0) out << ' ' << number_text(w[k]);
      out << '\n';
    }
  }
  if (!out) throw IoError("error writing " + path.string());
}

Graph read_edge_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::size_t n = 0;
  bool have_header = false;
  bool directed = false;
  std::vector<double> a;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (!have_header) {
      if (tok[0].rfind("n=", 0) != 0 || !parse_token(tok[0].substr(2), n)) {
        throw FormatError("expected header 'n=<nodes>'", lineno);
      }
      for (std::size_t k = 1; k < tok.size(); ++k) {
        if (tok[k] == "directed=1") {
          directed = true;
        } else if (tok[k] != "directed=0") {
          throw FormatError("unknown header token '" + tok[k] + "'", lineno);
        }
      }
      have_header = true;
      a.assign(n * n, 0.0);
      continue;
    }
    std::size_t i = 0, j = 0;
    double w = 1.0;
    if (tok.size() < 2 || tok.size() > 3 || !parse_token(tok[0], i) || !parse_token(tok[1], j) ||
        (tok.size() == 3 && !parse_token(tok[2], w))) {
      throw FormatError("expected 'i j [w]'", lineno);
    }
    if (i >= n || j >= n) throw FormatError("node index out of range", lineno);
    if (!std::isfinite(w) || w < 0.0) throw FormatError("weight must be finite and >= 0", lineno);
    a[i * n + j] = w;
    if (!directed) a[j * n + i] = w;
  }
  if (!have_header) throw FormatError("missing header 'n=<nodes>'", lineno + 1);
  return Graph(n, std::move(a));
}

}  // namespace graphdyn
