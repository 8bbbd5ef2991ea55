// Operator counting on an auto-simplified canonical form.
//
// The canonical form mirrors what a computer-algebra system produces when the
// expression is entered as text: numbers are folded, like terms and equal bases
// are merged, a lone numeric factor is distributed over a sum, odd functions
// pull a leading minus sign outside, exp() splits off numeric summands, and
// sqrt/reciprocal/sigmoid become powers. Counting then follows the usual
// "count_ops" rules: leaves are free, a sum of k terms costs k-1 (+1 when every
// term is negative), a product of k factors costs k-1, a negative leading
// coefficient costs one, denominators cost one division, powers cost one (+1
// for a negative exponent other than -1, +1 for a fractional exponent) and
// every function application costs one.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "graphdyn/errors.hpp"
#include "graphdyn/expr.hpp"

namespace graphdyn {

namespace {

struct CNode;
using CPtr = std::shared_ptr<const CNode>;

enum class CT { Num, Sym, Add, Mul, Pow, Func };

struct Rational {
  long p = 1;
  long q = 1;
  bool is_int() const { return q == 1; }
};

Rational make_rat(long p, long q) {
  if (q < 0) p = -p, q = -q;
  const long g = std::gcd(p, q);
  return {p / (g ? g : 1), q / (g ? g : 1)};
}

Rational operator+(Rational a, Rational b) { return make_rat(a.p * b.q + b.p * a.q, a.q * b.q); }
Rational operator*(Rational a, Rational b) { return make_rat(a.p * b.p, a.q * b.q); }

struct CNode {
  CT t = CT::Num;
  double num = 0.0;   // Num value, Mul coefficient
  bool neighbor = false;
  std::size_t feature = 0;
  Rational exp;       // Pow
  Primitive prim = Primitive::Sin;
  std::vector<CPtr> args;
  std::string key;
};

std::string num_key(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CPtr num(double v) {
  auto n = std::make_shared<CNode>();
  n->t = CT::Num;
  n->num = v == 0.0 ? 0.0 : v;
  n->key = "#" + num_key(n->num);
  return n;
}

CPtr sym(bool neighbor, std::size_t feature) {
  auto n = std::make_shared<CNode>();
  n->t = CT::Sym;
  n->neighbor = neighbor;
  n->feature = feature;
  n->key = std::string(neighbor ? "x_j" : "x_i") + std::to_string(feature);
  return n;
}

CPtr make_add(std::vector<CPtr> terms);
CPtr make_mul(std::vector<CPtr> factors);
CPtr make_pow(CPtr base, Rational e);
CPtr make_func(Primitive p, CPtr arg);

CPtr neg(const CPtr& e) { return make_mul({num(-1.0), e}); }

// (coefficient, rest) with rest == nullptr for a pure number.
std::pair<double, CPtr> split_coeff(const CPtr& e) {
  if (e->t == CT::Num) return {e->num, nullptr};
  if (e->t == CT::Mul && e->num != 1.0) {
    if (e->args.size() == 1) return {e->num, e->args[0]};
    auto r = std::make_shared<CNode>(*e);
    r->num = 1.0;
    r->key = "M(";
    for (const auto& a : r->args) r->key += a->key + ",";
    r->key += ")";
    return {e->num, r};
  }
  return {1.0, e};
}

std::pair<CPtr, Rational> split_pow(const CPtr& e) {
  if (e->t == CT::Pow) return {e->args[0], e->exp};
  return {e, Rational{1, 1}};
}

bool could_extract_minus(const CPtr& e);

int poly_degree(const CPtr& e) {
  switch (e->t) {
    case CT::Sym: return 1;
    case CT::Pow:
      return e->args[0]->t == CT::Sym && e->exp.is_int() ? static_cast<int>(e->exp.p) : 0;
    case CT::Mul: {
      int d = 0;
      for (const auto& a : e->args) d += poly_degree(a);
      return d;
    }
    default: return 0;
  }
}

// Display order of the terms of a sum: numbers last, higher degree first,
// otherwise by variable name.
std::vector<CPtr> ordered_terms(const CPtr& add) {
  std::vector<CPtr> terms = add->args;
  std::stable_sort(terms.begin(), terms.end(), [](const CPtr& a, const CPtr& b) {
    const bool na = a->t == CT::Num, nb = b->t == CT::Num;
    if (na != nb) return nb;
    const int da = poly_degree(a), db = poly_degree(b);
    if (da != db) return da > db;
    const auto ra = split_coeff(a).second, rb = split_coeff(b).second;
    const std::string ka = ra ? ra->key : "", kb = rb ? rb->key : "";
    return ka < kb;
  });
  return terms;
}

bool could_extract_minus(const CPtr& e) {
  switch (e->t) {
    case CT::Num: return e->num < 0;
    case CT::Mul: return e->num < 0;
    case CT::Add: {
      std::size_t negs = 0;
      for (const auto& t : e->args) negs += could_extract_minus(t) ? 1 : 0;
      const std::size_t pos = e->args.size() - negs;
      if (pos != negs) return negs > pos;
      return could_extract_minus(ordered_terms(e).front());
    }
    default: return false;
  }
}

CPtr make_add(std::vector<CPtr> terms) {
  std::vector<CPtr> flat;
  for (auto& t : terms) {
    if (t->t == CT::Add) {
      flat.insert(flat.end(), t->args.begin(), t->args.end());
    } else {
      flat.push_back(std::move(t));
    }
  }
  double constant = 0.0;
  std::map<std::string, std::pair<double, CPtr>> collected;
  for (const auto& t : flat) {
    auto [c, rest] = split_coeff(t);
    if (!rest) {
      constant += c;
      continue;
    }
    auto it = collected.find(rest->key);
    if (it == collected.end()) {
      collected.emplace(rest->key, std::make_pair(c, rest));
    } else {
      it->second.first += c;
    }
  }
  std::vector<CPtr> out;
  for (auto& [k, cr] : collected) {
    if (cr.first == 0.0) continue;
    out.push_back(cr.first == 1.0 ? cr.second : make_mul({num(cr.first), cr.second}));
  }
  if (constant != 0.0) out.push_back(num(constant));
  if (out.empty()) return num(0.0);
  if (out.size() == 1) return out[0];
  std::sort(out.begin(), out.end(), [](const CPtr& a, const CPtr& b) { return a->key < b->key; });
  auto n = std::make_shared<CNode>();
  n->t = CT::Add;
  n->key = "A(";
  for (const auto& a : out) n->key += a->key + ",";
  n->key += ")";
  n->args = std::move(out);
  return n;
}

CPtr make_mul(std::vector<CPtr> factors) {
  double coef = 1.0;
  std::vector<CPtr> flat;
  for (auto& f : factors) {
    if (f->t == CT::Num) {
      coef *= f->num;
    } else if (f->t == CT::Mul) {
      coef *= f->num;
      flat.insert(flat.end(), f->args.begin(), f->args.end());
    } else {
      flat.push_back(std::move(f));
    }
  }
  if (coef == 0.0) return num(0.0);
  std::map<std::string, std::pair<CPtr, Rational>> bases;
  std::vector<std::string> order;
  for (const auto& f : flat) {
    auto [b, e] = split_pow(f);
    auto it = bases.find(b->key);
    if (it == bases.end()) {
      bases.emplace(b->key, std::make_pair(b, e));
      order.push_back(b->key);
    } else {
      it->second.second = it->second.second + e;
    }
  }
  std::vector<CPtr> merged;
  bool again = false;
  for (const auto& k : order) {
    const auto& [b, e] = bases.at(k);
    if (e.p == 0) continue;
    CPtr f = make_pow(b, e);
    if (f->t == CT::Num || f->t == CT::Mul) again = true;
    merged.push_back(f);
  }
  if (again) {
    merged.push_back(num(coef));
    return make_mul(std::move(merged));
  }
  if (merged.empty()) return num(coef);
  if (merged.size() == 1 && coef == 1.0) return merged[0];
  if (merged.size() == 1 && merged[0]->t == CT::Add) {
    std::vector<CPtr> terms;
    for (const auto& t : merged[0]->args) terms.push_back(make_mul({num(coef), t}));
    return make_add(std::move(terms));
  }
  std::sort(merged.begin(), merged.end(), [](const CPtr& a, const CPtr& b) { return a->key < b->key; });
  auto n = std::make_shared<CNode>();
  n->t = CT::Mul;
  n->num = coef;
  n->key = "M(" + (coef == 1.0 ? std::string() : num_key(coef) + ";");
  for (const auto& a : merged) n->key += a->key + ",";
  n->key += ")";
  n->args = std::move(merged);
  return n;
}

CPtr raw_pow(CPtr base, Rational e) {
  auto n = std::make_shared<CNode>();
  n->t = CT::Pow;
  n->exp = e;
  n->key = "P(" + base->key + "^" + std::to_string(e.p) + "/" + std::to_string(e.q) + ")";
  n->args = {std::move(base)};
  return n;
}

CPtr make_pow(CPtr base, Rational e) {
  if (e.p == 0) return num(1.0);
  if (e.p == 1 && e.q == 1) return base;
  if (base->t == CT::Num) {
    if (e.is_int()) {
      if (base->num == 0.0 && e.p < 0) return raw_pow(base, e);
      return num(std::pow(base->num, static_cast<double>(e.p)));
    }
    if (base->num > 0) return num(std::pow(base->num, static_cast<double>(e.p) / e.q));
    return raw_pow(base, e);
  }
  if (base->t == CT::Pow && e.is_int()) return make_pow(base->args[0], base->exp * e);
  if (base->t == CT::Mul) {
    if (e.is_int()) {
      std::vector<CPtr> fs{num(std::pow(base->num, static_cast<double>(e.p)))};
      for (const auto& f : base->args) fs.push_back(make_pow(f, e));
      return make_mul(std::move(fs));
    }
    const double c = base->num;
    if (std::abs(c) != 1.0) {
      auto [unused, rest] = split_coeff(base);
      (void)unused;
      CPtr inner = c < 0 ? neg(rest) : rest;
      return make_mul({num(std::pow(std::abs(c), static_cast<double>(e.p) / e.q)), make_pow(inner, e)});
    }
  }
  if (base->t == CT::Func && base->prim == Primitive::Exp && e.is_int()) {
    return make_func(Primitive::Exp, make_mul({num(static_cast<double>(e.p)), base->args[0]}));
  }
  return raw_pow(std::move(base), e);
}

CPtr raw_func(Primitive p, CPtr arg) {
  auto n = std::make_shared<CNode>();
  n->t = CT::Func;
  n->prim = p;
  n->key = "F" + std::string(primitive_name(p)) + "(" + arg->key + ")";
  n->args = {std::move(arg)};
  return n;
}

CPtr make_func(Primitive p, CPtr arg) {
  if (arg->t == CT::Num) {
    try {
      const double v = apply_primitive(p, arg->num);
      if (std::isfinite(v)) return num(v);
    } catch (const DomainError&) {
    }
    return raw_func(p, arg);
  }
  switch (p) {
    case Primitive::Sin:
    case Primitive::Tanh:
      if (could_extract_minus(arg)) return neg(raw_func(p, neg(arg)));
      return raw_func(p, arg);
    case Primitive::Cos:
      if (could_extract_minus(arg)) return raw_func(p, neg(arg));
      return raw_func(p, arg);
    case Primitive::Exp:
      if (arg->t == CT::Add) {
        double c = 0.0;
        std::vector<CPtr> rest;
        for (const auto& t : arg->args) {
          if (t->t == CT::Num) {
            c += t->num;
          } else {
            rest.push_back(t);
          }
        }
        if (c != 0.0) return make_mul({num(std::exp(c)), make_func(p, make_add(std::move(rest)))});
      }
      return raw_func(p, arg);
    default: return raw_func(p, arg);
  }
}

CPtr canon(const Expr& e) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: return num(e.value());
    case K::VarSelf: return sym(false, e.feature());
    case K::VarNeighbor: return sym(true, e.feature());
    case K::Neg: return neg(canon(e.child()));
    case K::Add: return make_add({canon(e.lhs()), canon(e.rhs())});
    case K::Mul: return make_mul({canon(e.lhs()), canon(e.rhs())});
    case K::Pow: return make_pow(canon(e.child()), Rational{e.exponent(), 1});
    case K::Unary: {
      CPtr a = canon(e.child());
      switch (e.primitive()) {
        case Primitive::Sqrt: return make_pow(a, Rational{1, 2});
        case Primitive::Reciprocal: return make_pow(a, Rational{-1, 1});
        case Primitive::Sigmoid:
          return make_pow(make_add({num(1.0), make_func(Primitive::Exp, neg(a))}), Rational{-1, 1});
        default: return make_func(e.primitive(), a);
      }
    }
  }
  return num(0.0);
}

std::size_t count(const CPtr& e);

std::size_t count_mul(const CPtr& e) {
  std::size_t ops = 0;
  double c = e->num;
  if (c < 0) {
    ++ops;
    c = -c;
  }
  std::vector<CPtr> numer{num(c)}, denom;
  for (const auto& f : e->args) {
    if (f->t == CT::Pow && f->exp.p < 0) {
      denom.push_back(make_pow(f->args[0], Rational{-f->exp.p, f->exp.q}));
    } else if (f->t == CT::Func && f->prim == Primitive::Exp && f->args[0]->t == CT::Mul &&
               f->args[0]->num < 0) {
      denom.push_back(raw_func(Primitive::Exp, neg(f->args[0])));
    } else {
      numer.push_back(f);
    }
  }
  if (!denom.empty()) return ops + 1 + count(make_mul(numer)) + count(make_mul(denom));
  const std::size_t nargs = numer.size() - (c == 1.0 ? 1 : 0);
  ops += nargs > 0 ? nargs - 1 : 0;
  for (std::size_t k = 1; k < numer.size(); ++k) ops += count(numer[k]);
  return ops;
}

std::size_t count(const CPtr& e) {
  switch (e->t) {
    case CT::Num:
    case CT::Sym: return 0;
    case CT::Add: {
      std::size_t ops = e->args.size() - 1;
      std::size_t negs = 0;
      for (const auto& t : e->args) {
        if (could_extract_minus(t) && t->t != CT::Add) {
          ++negs;
          ops += count(neg(t));
        } else {
          ops += count(t);
        }
      }
      if (negs == e->args.size()) ++ops;
      return ops;
    }
    case CT::Mul: return count_mul(e);
    case CT::Pow: {
      if (e->exp.p == -1 && e->exp.q == 1) return 1 + count(e->args[0]);
      return 1 + count(e->args[0]) + (e->exp.p < 0 ? 1 : 0) + (e->exp.q != 1 ? 1 : 0);
    }
    case CT::Func: return 1 + count(e->args[0]);
  }
  return 0;
}

}  // namespace

std::size_t complexity(const Expr& e) { return count(canon(e)); }

std::size_t structural_complexity(const Expr& e) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const:
    case K::VarSelf:
    case K::VarNeighbor: return 0;
    case K::Neg: return structural_complexity(e.child());
    case K::Pow:
    case K::Unary: return 1 + structural_complexity(e.child());
    case K::Add:
    case K::Mul: return 1 + structural_complexity(e.lhs()) + structural_complexity(e.rhs());
  }
  return 0;
}

}  // namespace graphdyn
