#include "graphdyn/expr.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "graphdyn/errors.hpp"

namespace graphdyn {

namespace {

constexpr std::string_view kPrimitiveNames[] = {"sin",  "cos",  "tanh",       "exp",
                                                "log",  "sqrt", "reciprocal", "sigmoid"};

}  // namespace

std::string_view primitive_name(Primitive p) { return kPrimitiveNames[static_cast<int>(p)]; }

std::optional<Primitive> primitive_from_name(std::string_view name) {
  for (int i = 0; i < 8; ++i) {
    if (kPrimitiveNames[i] == name) return static_cast<Primitive>(i);
  }
  return std::nullopt;
}

double apply_primitive(Primitive p, double x) {
  switch (p) {
    case Primitive::Sin: return std::sin(x);
    case Primitive::Cos: return std::cos(x);
    case Primitive::Tanh: return std::tanh(x);
    case Primitive::Exp: return std::exp(x);
    case Primitive::Log:
      if (!(x > 0.0)) throw DomainError("log of nonpositive value " + std::to_string(x));
      return std::log(x);
    case Primitive::Sqrt:
      if (!(x >= 0.0)) throw DomainError("sqrt of negative value " + std::to_string(x));
      return std::sqrt(x);
    case Primitive::Reciprocal:
      if (x == 0.0 || std::isnan(x)) throw DomainError("reciprocal of zero");
      return 1.0 / x;
    case Primitive::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return 0.0;
}

double primitive_derivative(Primitive p, double x) {
  switch (p) {
    case Primitive::Sin: return std::cos(x);
    case Primitive::Cos: return -std::sin(x);
    case Primitive::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Primitive::Exp: return std::exp(x);
    case Primitive::Log: return 1.0 / x;
    case Primitive::Sqrt: return 0.5 / std::sqrt(x);
    case Primitive::Reciprocal: return -1.0 / (x * x);
    case Primitive::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

struct Expr::Node {
  Kind kind = Kind::Const;
  double value = 0.0;
  std::size_t feature = 0;
  int exponent = 0;
  Primitive prim = Primitive::Sin;
  Expr a{NullTag{}};
  Expr b{NullTag{}};
};

namespace {
const Expr& zero_expr() {
  static const Expr z = Expr::constant(0.0);
  return z;
}
}  // namespace

Expr::Expr() : node_(zero_expr().node_) {}

Expr::Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

Expr Expr::constant(double value) {
  if (!std::isfinite(value)) throw ParamError("expression constants must be finite");
  auto n = std::make_shared<Node>();
  n->kind = Kind::Const;
  n->value = value == 0.0 ? 0.0 : value;  // no negative zero
  return Expr(std::move(n));
}

Expr Expr::self(std::size_t feature) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::VarSelf;
  n->feature = feature;
  return Expr(std::move(n));
}

Expr Expr::neighbor(std::size_t feature) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::VarNeighbor;
  n->feature = feature;
  return Expr(std::move(n));
}

Expr Expr::neg(Expr child) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Neg;
  n->a = std::move(child);
  return Expr(std::move(n));
}

Expr Expr::add(Expr lhs, Expr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Add;
  n->a = std::move(lhs);
  n->b = std::move(rhs);
  return Expr(std::move(n));
}

Expr Expr::mul(Expr lhs, Expr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Mul;
  n->a = std::move(lhs);
  n->b = std::move(rhs);
  return Expr(std::move(n));
}

Expr Expr::pow(Expr base, int exponent) {
  if (exponent == 0 || std::abs(exponent) > kMaxExponent) {
    throw ParamError("power exponent must be a nonzero integer with |n| <= 6, got " +
                     std::to_string(exponent));
  }
  auto n = std::make_shared<Node>();
  n->kind = Kind::Pow;
  n->a = std::move(base);
  n->exponent = exponent;
  return Expr(std::move(n));
}

Expr Expr::unary(Primitive p, Expr child) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Unary;
  n->prim = p;
  n->a = std::move(child);
  return Expr(std::move(n));
}

Expr::Kind Expr::kind() const { return node_->kind; }
double Expr::value() const { return node_->value; }
std::size_t Expr::feature() const { return node_->feature; }
int Expr::exponent() const { return node_->exponent; }
Primitive Expr::primitive() const { return node_->prim; }
const Expr& Expr::child() const { return node_->a; }
const Expr& Expr::lhs() const { return node_->a; }
const Expr& Expr::rhs() const { return node_->b; }

bool Expr::has_neighbor() const {
  switch (kind()) {
    case Kind::VarNeighbor: return true;
    case Kind::Const:
    case Kind::VarSelf: return false;
    case Kind::Neg:
    case Kind::Pow:
    case Kind::Unary: return child().has_neighbor();
    case Kind::Add:
    case Kind::Mul: return lhs().has_neighbor() || rhs().has_neighbor();
  }
  return false;
}

namespace {
void max_feature(const Expr& e, Expr::Kind which, std::optional<std::size_t>& out) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: return;
    case K::VarSelf:
    case K::VarNeighbor:
      if (e.kind() == which && (!out || e.feature() > *out)) out = e.feature();
      return;
    case K::Neg:
    case K::Pow:
    case K::Unary: max_feature(e.child(), which, out); return;
    case K::Add:
    case K::Mul:
      max_feature(e.lhs(), which, out);
      max_feature(e.rhs(), which, out);
      return;
  }
}
}  // namespace

std::optional<std::size_t> Expr::max_self_feature() const {
  std::optional<std::size_t> out;
  max_feature(*this, Kind::VarSelf, out);
  return out;
}

std::optional<std::size_t> Expr::max_neighbor_feature() const {
  std::optional<std::size_t> out;
  max_feature(*this, Kind::VarNeighbor, out);
  return out;
}

std::size_t Expr::node_count() const {
  switch (kind()) {
    case Kind::Const:
    case Kind::VarSelf:
    case Kind::VarNeighbor: return 1;
    case Kind::Neg:
    case Kind::Pow:
    case Kind::Unary: return 1 + child().node_count();
    case Kind::Add:
    case Kind::Mul: return 1 + lhs().node_count() + rhs().node_count();
  }
  return 1;
}

bool operator==(const Expr& x, const Expr& y) {
  if (x.node_ == y.node_) return true;
  if (x.kind() != y.kind()) return false;
  using K = Expr::Kind;
  switch (x.kind()) {
    case K::Const: return x.value() == y.value();
    case K::VarSelf:
    case K::VarNeighbor: return x.feature() == y.feature();
    case K::Neg: return x.child() == y.child();
    case K::Pow: return x.exponent() == y.exponent() && x.child() == y.child();
    case K::Unary: return x.primitive() == y.primitive() && x.child() == y.child();
    case K::Add:
    case K::Mul: return x.lhs() == y.lhs() && x.rhs() == y.rhs();
  }
  return false;
}

Expr operator+(Expr a, Expr b) { return Expr::add(std::move(a), std::move(b)); }
Expr operator-(Expr a, Expr b) { return Expr::add(std::move(a), Expr::neg(std::move(b))); }
Expr operator*(Expr a, Expr b) { return Expr::mul(std::move(a), std::move(b)); }
Expr operator-(Expr a) { return Expr::neg(std::move(a)); }

namespace {

double int_power(double base, int n) {
  if (n < 0) {
    if (base == 0.0) throw DomainError("reciprocal of zero in negative power");
    return 1.0 / int_power(base, -n);
  }
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= base;
  return r;
}

double lookup(std::span<const double> xs, std::size_t k, const char* what) {
  if (k >= xs.size()) {
    throw IndexError(std::string(what) + " feature index " + std::to_string(k) +
                     " out of range (size " + std::to_string(xs.size()) + ")");
  }
  return xs[k];
}

}  // namespace

double eval_expr(const Expr& e, std::span<const double> x_self,
                 std::span<const double> x_neighbor) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: return e.value();
    case K::VarSelf: return lookup(x_self, e.feature(), "self");
    case K::VarNeighbor: return lookup(x_neighbor, e.feature(), "neighbor");
    case K::Neg: return -eval_expr(e.child(), x_self, x_neighbor);
    case K::Add:
      return eval_expr(e.lhs(), x_self, x_neighbor) + eval_expr(e.rhs(), x_self, x_neighbor);
    case K::Mul:
      return eval_expr(e.lhs(), x_self, x_neighbor) * eval_expr(e.rhs(), x_self, x_neighbor);
    case K::Pow: return int_power(eval_expr(e.child(), x_self, x_neighbor), e.exponent());
    case K::Unary: return apply_primitive(e.primitive(), eval_expr(e.child(), x_self, x_neighbor));
  }
  return 0.0;
}

Expr fold_constants(const Expr& e) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const:
    case K::VarSelf:
    case K::VarNeighbor: return e;
    case K::Neg: {
      Expr c = fold_constants(e.child());
      if (c.is_const()) return Expr::constant(-c.value());
      if (c.kind() == K::Neg) return c.child();
      return Expr::neg(c);
    }
    case K::Add: {
      Expr l = fold_constants(e.lhs());
      Expr r = fold_constants(e.rhs());
      if (l.is_const() && r.is_const()) return Expr::constant(l.value() + r.value());
      if (l.is_zero()) return r;
      if (r.is_zero()) return l;
      return Expr::add(l, r);
    }
    case K::Mul: {
      Expr l = fold_constants(e.lhs());
      Expr r = fold_constants(e.rhs());
      if (l.is_const() && r.is_const()) return Expr::constant(l.value() * r.value());
      if (l.is_zero() || r.is_zero()) return Expr::constant(0.0);
      if (l.is_const() && l.value() == 1.0) return r;
      if (r.is_const() && r.value() == 1.0) return l;
      // c1 * (c2 * x) -> (c1 c2) * x
      if (l.is_const() && r.kind() == K::Mul && r.lhs().is_const()) {
        return fold_constants(Expr::mul(Expr::constant(l.value() * r.lhs().value()), r.rhs()));
      }
      return Expr::mul(l, r);
    }
    case K::Pow: {
      Expr c = fold_constants(e.child());
      if (c.is_const()) {
        try {
          return Expr::constant(int_power(c.value(), e.exponent()));
        } catch (const DomainError&) {
        }
      }
      return Expr::pow(c, e.exponent());
    }
    case K::Unary: {
      Expr c = fold_constants(e.child());
      if (c.is_const()) {
        try {
          const double v = apply_primitive(e.primitive(), c.value());
          if (std::isfinite(v)) return Expr::constant(v);
        } catch (const DomainError&) {
        }
      }
      return Expr::unary(e.primitive(), c);
    }
  }
  return e;
}

namespace {

// One pruning sweep. Subtrees that would become undefined (1/0, log 0, ...)
// are kept as they were.
Expr prune_pass(const Expr& e, double eps) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: return std::abs(e.value()) < eps ? Expr::constant(0.0) : e;
    case K::VarSelf:
    case K::VarNeighbor: return e;
    case K::Neg: return fold_constants(Expr::neg(prune_pass(e.child(), eps)));
    case K::Add: return fold_constants(Expr::add(prune_pass(e.lhs(), eps), prune_pass(e.rhs(), eps)));
    case K::Mul: return fold_constants(Expr::mul(prune_pass(e.lhs(), eps), prune_pass(e.rhs(), eps)));
    case K::Pow: {
      Expr c = prune_pass(e.child(), eps);
      if (c.is_zero() && e.exponent() < 0) return e;
      return fold_constants(Expr::pow(c, e.exponent()));
    }
    case K::Unary: {
      Expr c = prune_pass(e.child(), eps);
      if (c.is_const()) {
        try {
          const double v = apply_primitive(e.primitive(), c.value());
          if (!std::isfinite(v)) return e;
          return Expr::constant(std::abs(v) < eps ? 0.0 : v);
        } catch (const DomainError&) {
          return e;
        }
      }
      return Expr::unary(e.primitive(), c);
    }
  }
  return e;
}

}  // namespace

Expr prune_constants(const Expr& e, double eps) {
  if (!(eps > 0.0)) throw ParamError("prune threshold must be positive");
  Expr cur = fold_constants(e);
  for (int iter = 0; iter < 64; ++iter) {
    Expr next = prune_pass(cur, eps);
    if (next == cur) break;
    cur = std::move(next);
  }
  return cur;
}

Expr substitute_self(const Expr& e, std::size_t feature, const Expr& replacement) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const:
    case K::VarNeighbor: return e;
    case K::VarSelf: return e.feature() == feature ? replacement : e;
    case K::Neg: return Expr::neg(substitute_self(e.child(), feature, replacement));
    case K::Add:
      return Expr::add(substitute_self(e.lhs(), feature, replacement),
                       substitute_self(e.rhs(), feature, replacement));
    case K::Mul:
      return Expr::mul(substitute_self(e.lhs(), feature, replacement),
                       substitute_self(e.rhs(), feature, replacement));
    case K::Pow: return Expr::pow(substitute_self(e.child(), feature, replacement), e.exponent());
    case K::Unary:
      return Expr::unary(e.primitive(), substitute_self(e.child(), feature, replacement));
  }
  return e;
}

namespace {
void collect_constants(const Expr& e, std::vector<double>& out) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: out.push_back(e.value()); return;
    case K::VarSelf:
    case K::VarNeighbor: return;
    case K::Neg:
    case K::Pow:
    case K::Unary: collect_constants(e.child(), out); return;
    case K::Add:
    case K::Mul:
      collect_constants(e.lhs(), out);
      collect_constants(e.rhs(), out);
      return;
  }
}

Expr replace_constants(const Expr& e, std::span<const double> values, std::size_t& next) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: return Expr::constant(values[next++]);
    case K::VarSelf:
    case K::VarNeighbor: return e;
    case K::Neg: return Expr::neg(replace_constants(e.child(), values, next));
    case K::Pow: return Expr::pow(replace_constants(e.child(), values, next), e.exponent());
    case K::Unary: return Expr::unary(e.primitive(), replace_constants(e.child(), values, next));
    case K::Add: {
      Expr l = replace_constants(e.lhs(), values, next);
      return Expr::add(l, replace_constants(e.rhs(), values, next));
    }
    case K::Mul: {
      Expr l = replace_constants(e.lhs(), values, next);
      return Expr::mul(l, replace_constants(e.rhs(), values, next));
    }
  }
  return e;
}
}  // namespace

std::vector<double> constants(const Expr& e) {
  std::vector<double> out;
  collect_constants(e, out);
  return out;
}

Expr with_constants(const Expr& e, std::span<const double> values) {
  if (values.size() != constants(e).size()) {
    throw ShapeError("with_constants: expected " + std::to_string(constants(e).size()) +
                     " constants, got " + std::to_string(values.size()));
  }
  std::size_t next = 0;
  return replace_constants(e, values, next);
}

// ---------------------------------------------------------------------------
// CompiledExpr

CompiledExpr::CompiledExpr(const Expr& e) {
  using K = Expr::Kind;
  std::size_t depth = 0;
  std::function<void(const Expr&)> emit = [&](const Expr& x) {
    switch (x.kind()) {
      case K::Const:
        code_.push_back({Op::Const, Primitive::Sin, 0, constant_count_++, x.value()});
        ++depth;
        break;
      case K::VarSelf:
        code_.push_back({Op::Self, Primitive::Sin, 0, x.feature(), 0.0});
        ++depth;
        break;
      case K::VarNeighbor:
        code_.push_back({Op::Neighbor, Primitive::Sin, 0, x.feature(), 0.0});
        ++depth;
        break;
      case K::Neg:
        emit(x.child());
        code_.push_back({Op::Neg, Primitive::Sin, 0, 0, 0.0});
        break;
      case K::Pow:
        emit(x.child());
        code_.push_back({Op::Pow, Primitive::Sin, x.exponent(), 0, 0.0});
        break;
      case K::Unary:
        emit(x.child());
        code_.push_back({Op::Unary, x.primitive(), 0, 0, 0.0});
        break;
      case K::Add:
      case K::Mul:
        emit(x.lhs());
        emit(x.rhs());
        code_.push_back({x.kind() == K::Add ? Op::Add : Op::Mul, Primitive::Sin, 0, 0, 0.0});
        --depth;
        break;
    }
    max_depth_ = std::max(max_depth_, depth);
  };
  emit(e);
}

double CompiledExpr::eval(std::span<const double> x_self, std::span<const double> x_neighbor) const {
  constexpr std::size_t kInline = 64;
  double inline_stack[kInline];
  std::vector<double> heap;
  double* stack = inline_stack;
  if (max_depth_ > kInline) {
    heap.resize(max_depth_);
    stack = heap.data();
  }
  std::size_t sp = 0;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::Const: stack[sp++] = in.value; break;
      case Op::Self: stack[sp++] = lookup(x_self, in.index, "self"); break;
      case Op::Neighbor: stack[sp++] = lookup(x_neighbor, in.index, "neighbor"); break;
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Add:
        stack[sp - 2] += stack[sp - 1];
        --sp;
        break;
      case Op::Mul:
        stack[sp - 2] *= stack[sp - 1];
        --sp;
        break;
      case Op::Pow: stack[sp - 1] = int_power(stack[sp - 1], in.exponent); break;
      case Op::Unary: stack[sp - 1] = apply_primitive(in.prim, stack[sp - 1]); break;
    }
  }
  return code_.empty() ? 0.0 : stack[0];
}

double CompiledExpr::eval_constant_gradient(std::span<const double> x_self,
                                            std::span<const double> x_neighbor,
                                            std::span<double> grad) const {
  if (grad.size() != constant_count_) throw ShapeError("gradient buffer size mismatch");
  const std::size_t n = code_.size();
  // Forward: value of each instruction and the instruction indices of its operands.
  std::vector<double> val(n);
  std::vector<std::size_t> arg0(n), arg1(n), stack;
  stack.reserve(max_depth_);
  for (std::size_t k = 0; k < n; ++k) {
    const Instr& in = code_[k];
    switch (in.op) {
      case Op::Const: val[k] = in.value; break;
      case Op::Self: val[k] = lookup(x_self, in.index, "self"); break;
      case Op::Neighbor: val[k] = lookup(x_neighbor, in.index, "neighbor"); break;
      case Op::Neg:
      case Op::Pow:
      case Op::Unary: {
        arg0[k] = stack.back();
        stack.pop_back();
        const double a = val[arg0[k]];
        val[k] = in.op == Op::Neg   ? -a
                 : in.op == Op::Pow ? int_power(a, in.exponent)
                                    : apply_primitive(in.prim, a);
        break;
      }
      case Op::Add:
      case Op::Mul: {
        arg1[k] = stack.back();
        stack.pop_back();
        arg0[k] = stack.back();
        stack.pop_back();
        val[k] = in.op == Op::Add ? val[arg0[k]] + val[arg1[k]] : val[arg0[k]] * val[arg1[k]];
        break;
      }
    }
    stack.push_back(k);
  }
  std::fill(grad.begin(), grad.end(), 0.0);
  if (n == 0) return 0.0;
  std::vector<double> adj(n, 0.0);
  adj[n - 1] = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    const Instr& in = code_[k];
    const double g = adj[k];
    if (g == 0.0) continue;
    switch (in.op) {
      case Op::Const: grad[in.index] += g; break;
      case Op::Self:
      case Op::Neighbor: break;
      case Op::Neg: adj[arg0[k]] -= g; break;
      case Op::Pow: {
        const double a = val[arg0[k]];
        adj[arg0[k]] += g * in.exponent * int_power(a, in.exponent - 1);
        break;
      }
      case Op::Unary: adj[arg0[k]] += g * primitive_derivative(in.prim, val[arg0[k]]); break;
      case Op::Add:
        adj[arg0[k]] += g;
        adj[arg1[k]] += g;
        break;
      case Op::Mul:
        adj[arg0[k]] += g * val[arg1[k]];
        adj[arg1[k]] += g * val[arg0[k]];
        break;
    }
  }
  return val[n - 1];
}

// ---------------------------------------------------------------------------
// SymbolicModel

double SymbolicModel::evaluate(
    std::span<const double> x_self,
    std::span<const std::pair<double, std::span<const double>>> neighbors) const {
  double out = eval_expr(self_term, x_self);
  for (const auto& [w, xn] : neighbors) out += w * eval_expr(interaction_term, x_self, xn);
  return out;
}

std::size_t complexity(const SymbolicModel& m) {
  std::size_t c = complexity(m.self_term);
  if (!m.interaction_term.is_zero()) c += 1 + complexity(m.interaction_term);
  return c;
}

std::size_t structural_complexity(const SymbolicModel& m) {
  std::size_t c = structural_complexity(m.self_term);
  if (!m.interaction_term.is_zero()) {
    c += 1 + structural_complexity(m.interaction_term);  // the aggregation
    if (!m.self_term.is_zero()) c += 1;                   // H + sum
  }
  return c;
}

std::string format_model(const SymbolicModel& m, int precision) {
  std::string out = format_expr(m.self_term, precision);
  if (!m.interaction_term.is_zero()) {
    out += " + sum_j A_ij*(" + format_expr(m.interaction_term, precision) + ")";
  }
  return out;
}

}  // namespace graphdyn
