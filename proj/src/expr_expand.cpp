#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "graphdyn/errors.hpp"
#include "graphdyn/expr.hpp"

namespace graphdyn {

namespace {

// Atoms are keyed by their exact text so that equal subtrees merge.
using Monomial = std::map<std::string, int>;

struct Poly {
  std::map<Monomial, double> terms;
  std::map<std::string, Expr> atoms;
};

Poly constant_poly(double c) {
  Poly p;
  if (c != 0.0) p.terms[{}] = c;
  return p;
}

Poly atom_poly(const Expr& atom) {
  Poly p;
  const std::string k = format_expr(atom, kExactPrecision);
  p.atoms.emplace(k, atom);
  p.terms[Monomial{{k, 1}}] = 1.0;
  return p;
}

void add_into(Poly& acc, const Poly& q, double scale) {
  for (const auto& [m, c] : q.terms) {
    double& slot = acc.terms[m];
    slot += scale * c;
    if (slot == 0.0) acc.terms.erase(m);
  }
  acc.atoms.insert(q.atoms.begin(), q.atoms.end());
}

int max_power(const Poly& a, const Poly& b) {
  std::map<std::string, int> ma, mb;
  for (const auto& [m, c] : a.terms) {
    for (const auto& [k, e] : m) ma[k] = std::max(ma[k], e);
  }
  for (const auto& [m, c] : b.terms) {
    for (const auto& [k, e] : m) mb[k] = std::max(mb[k], e);
  }
  int best = 0;
  for (const auto& [k, e] : ma) best = std::max(best, e + (mb.count(k) ? mb[k] : 0));
  for (const auto& [k, e] : mb) best = std::max(best, e);
  return best;
}

Poly multiply(const Poly& a, const Poly& b) {
  Poly out;
  out.atoms = a.atoms;
  out.atoms.insert(b.atoms.begin(), b.atoms.end());
  for (const auto& [ma, ca] : a.terms) {
    for (const auto& [mb, cb] : b.terms) {
      Monomial m = ma;
      for (const auto& [k, e] : mb) m[k] += e;
      double& slot = out.terms[m];
      slot += ca * cb;
    }
  }
  for (auto it = out.terms.begin(); it != out.terms.end();) {
    it = it->second == 0.0 ? out.terms.erase(it) : std::next(it);
  }
  return out;
}

int degree(const Monomial& m) {
  int d = 0;
  for (const auto& [k, e] : m) d += e;
  return d;
}

Expr monomial_expr(const Monomial& m, const std::map<std::string, Expr>& atoms,
                   std::optional<Expr> coefficient) {
  Expr acc;
  bool first = true;
  if (coefficient) {
    acc = *coefficient;
    first = false;
  }
  for (const auto& [k, e] : m) {
    Expr f = e == 1 ? atoms.at(k) : Expr::pow(atoms.at(k), e);
    acc = first ? f : Expr::mul(acc, f);
    first = false;
  }
  return acc;
}

Expr to_expr(const Poly& p) {
  std::vector<std::pair<Monomial, double>> terms(p.terms.begin(), p.terms.end());
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
    return degree(a.first) > degree(b.first);
  });
  Expr acc;
  bool first = true;
  for (const auto& [m, c] : terms) {
    if (c == 0.0) continue;
    const bool negative = c < 0 && !first;
    const double mag = negative ? -c : c;
    Expr term;
    if (m.empty()) {
      term = Expr::constant(mag);
    } else {
      if (mag == 1.0) {
        term = monomial_expr(m, p.atoms, std::nullopt);
      } else if (mag == -1.0) {
        term = Expr::neg(monomial_expr(m, p.atoms, std::nullopt));
      } else {
        term = monomial_expr(m, p.atoms, Expr::constant(mag));
      }
    }
    if (first) {
      acc = term;
      first = false;
    } else {
      acc = Expr::add(acc, negative ? Expr::neg(term) : term);
    }
  }
  return acc;
}

Poly to_poly(const Expr& e) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: return constant_poly(e.value());
    case K::VarSelf:
    case K::VarNeighbor: return atom_poly(e);
    case K::Neg: {
      Poly out;
      add_into(out, to_poly(e.child()), -1.0);
      return out;
    }
    case K::Add: {
      Poly out = to_poly(e.lhs());
      add_into(out, to_poly(e.rhs()), 1.0);
      return out;
    }
    case K::Mul: {
      Poly a = to_poly(e.lhs());
      Poly b = to_poly(e.rhs());
      if (max_power(a, b) > Expr::kMaxExponent) {
        return atom_poly(Expr::mul(to_expr(a), to_expr(b)));
      }
      return multiply(a, b);
    }
    case K::Pow: {
      Poly base = to_poly(e.child());
      if (e.exponent() < 0) {
        if (base.terms.size() == 1 && base.terms.begin()->first.empty()) {
          const double v = base.terms.begin()->second;
          if (v != 0.0) return constant_poly(std::pow(v, e.exponent()));
        }
        return atom_poly(Expr::pow(to_expr(base), e.exponent()));
      }
      Poly out = constant_poly(1.0);
      for (int k = 0; k < e.exponent(); ++k) {
        if (max_power(out, base) > Expr::kMaxExponent) {
          return atom_poly(Expr::pow(to_expr(base), e.exponent()));
        }
        out = multiply(out, base);
      }
      return out;
    }
    case K::Unary: {
      Expr inner = expand(e.child());
      if (inner.is_const()) {
        try {
          const double v = apply_primitive(e.primitive(), inner.value());
          if (std::isfinite(v)) return constant_poly(v);
        } catch (const DomainError&) {
        }
      }
      return atom_poly(Expr::unary(e.primitive(), inner));
    }
  }
  return {};
}

}  // namespace

Expr expand(const Expr& e) { return to_expr(to_poly(e)); }

}  // namespace graphdyn
