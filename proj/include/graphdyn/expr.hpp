#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace graphdyn {

/// Univariate primitives that may appear inside an expression.
enum class Primitive { Sin, Cos, Tanh, Exp, Log, Sqrt, Reciprocal, Sigmoid };

std::string_view primitive_name(Primitive p);
std::optional<Primitive> primitive_from_name(std::string_view name);

/// Applies `p` to `x`; throws DomainError outside the primitive's domain.
double apply_primitive(Primitive p, double x);
/// d/dx of `p` at `x` (caller guarantees `x` is inside the domain).
double primitive_derivative(Primitive p, double x);

/// Immutable symbolic expression tree with value semantics.
///
/// Nodes are shared between copies, so an Expr is cheap to copy and safe to
/// read from many threads. A default-constructed Expr is the constant 0.
class Expr {
 public:
  enum class Kind { Const, VarSelf, VarNeighbor, Neg, Add, Mul, Pow, Unary };

  static constexpr int kMaxExponent = 6;

  Expr();

  static Expr constant(double value);
  static Expr self(std::size_t feature = 0);
  static Expr neighbor(std::size_t feature = 0);
  static Expr neg(Expr child);
  static Expr add(Expr lhs, Expr rhs);
  static Expr mul(Expr lhs, Expr rhs);
  /// Throws ParamError unless 0 < |exponent| <= kMaxExponent.
  static Expr pow(Expr base, int exponent);
  static Expr unary(Primitive p, Expr child);

  Kind kind() const;
  double value() const;          // Const
  std::size_t feature() const;   // VarSelf / VarNeighbor
  int exponent() const;          // Pow
  Primitive primitive() const;   // Unary
  const Expr& child() const;     // Neg / Pow / Unary
  const Expr& lhs() const;       // Add / Mul
  const Expr& rhs() const;       // Add / Mul

  bool is_const() const { return kind() == Kind::Const; }
  bool is_zero() const { return is_const() && value() == 0.0; }
  bool has_neighbor() const;
  /// Largest self (neighbor) feature index referenced, or nullopt.
  std::optional<std::size_t> max_self_feature() const;
  std::optional<std::size_t> max_neighbor_feature() const;
  std::size_t node_count() const;

  /// Structural equality (constants compared exactly).
  friend bool operator==(const Expr& a, const Expr& b);

 private:
  struct Node;
  struct NullTag {};
  explicit Expr(NullTag) {}
  explicit Expr(std::shared_ptr<const Node> node);
  std::shared_ptr<const Node> node_;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator-(Expr a);

/// Evaluates `e`. `x_neighbor` is only consulted by VarNeighbor leaves.
/// Throws DomainError or IndexError.
double eval_expr(const Expr& e, std::span<const double> x_self,
                 std::span<const double> x_neighbor = {});

/// Operator count on the evaluated canonical form: numbers and variables are
/// free, every +/-, *, /, power, function application and leading minus sign
/// costs one. This matches what computer-algebra operator counters report,
/// which is the convention used when comparing with tabulated complexities.
std::size_t complexity(const Expr& e);

/// Sign-insensitive node count: Add, Mul, Pow and Unary cost one each, Neg,
/// constants and variables are free.
std::size_t structural_complexity(const Expr& e);

/// Local constant folding (no expansion).
Expr fold_constants(const Expr& e);

/// Drops constants with magnitude below `eps`, together with the products they
/// multiply, then refolds. Idempotent.
Expr prune_constants(const Expr& e, double eps);

/// Distributes products and integer powers over sums, treating non-polynomial
/// subexpressions as opaque factors, and collects like terms. Terms are ordered
/// by decreasing degree with the constant last. Exponents never exceed
/// kMaxExponent; a product that would is left unexpanded.
Expr expand(const Expr& e);

/// Replaces every VarSelf(feature) leaf with `replacement`.
Expr substitute_self(const Expr& e, std::size_t feature, const Expr& replacement);

/// Constants in post-order (left subtree first), the order used by
/// with_constants() and CompiledExpr gradients.
std::vector<double> constants(const Expr& e);
Expr with_constants(const Expr& e, std::span<const double> values);

/// Precision value that prints the shortest text that parses back exactly.
inline constexpr int kExactPrecision = 0;

std::string format_expr(const Expr& e, int precision = 6);
/// Parses the canonical grammar. Throws ParseError with a 0-based column.
Expr parse_expr(std::string_view text);

/// Flattened postfix program for hot-loop evaluation of one expression.
class CompiledExpr {
 public:
  CompiledExpr() = default;
  explicit CompiledExpr(const Expr& e);

  double eval(std::span<const double> x_self, std::span<const double> x_neighbor = {}) const;
  /// Value plus gradient with respect to the constants (post-order indexing);
  /// `grad` must have constant_count() entries and is overwritten.
  double eval_constant_gradient(std::span<const double> x_self,
                                std::span<const double> x_neighbor,
                                std::span<double> grad) const;
  std::size_t constant_count() const { return constant_count_; }

 private:
  enum class Op : unsigned char { Const, Self, Neighbor, Neg, Add, Mul, Pow, Unary };
  struct Instr {
    Op op;
    Primitive prim;
    int exponent;
    std::size_t index;  // feature index or constant slot
    double value;
  };
  std::vector<Instr> code_;
  std::size_t constant_count_ = 0;
  std::size_t max_depth_ = 0;
};

/// Learned or ground-truth law x_i' = H(x_i) + sum_j A_ij G(x_i, x_j) for a
/// scalar node state.
struct SymbolicModel {
  Expr self_term;
  Expr interaction_term;

  /// Evaluates the law for one node given (weight, neighbor state) pairs.
  double evaluate(std::span<const double> x_self,
                  std::span<const std::pair<double, std::span<const double>>> neighbors) const;

  friend bool operator==(const SymbolicModel&, const SymbolicModel&) = default;
};

/// complexity(H) plus one for the neighbor aggregation plus complexity(G);
/// the aggregation is free when G is identically zero.
std::size_t complexity(const SymbolicModel& m);
std::size_t structural_complexity(const SymbolicModel& m);

/// Human-readable "H + sum_j A_ij*(G)" form.
std::string format_model(const SymbolicModel& m, int precision = 6);

}  // namespace graphdyn
