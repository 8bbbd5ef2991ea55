#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "graphdyn/errors.hpp"
#include "graphdyn/expr.hpp"

namespace graphdyn {

namespace {

enum Prec { kAdd = 1, kMul = 2, kNeg = 3, kPow = 4, kAtom = 5 };

std::string format_number(double v, int precision) {
  char buf[64];
  if (precision == kExactPrecision) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  }
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

int prec_of(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::Add: return kAdd;
    case Expr::Kind::Mul: return kMul;
    case Expr::Kind::Neg: return kNeg;
    case Expr::Kind::Pow: return kPow;
    case Expr::Kind::Const: return e.value() < 0 ? kNeg : kAtom;
    default: return kAtom;
  }
}

void emit(const Expr& e, int precision, std::string& out);

void emit_paren(const Expr& e, bool paren, int precision, std::string& out) {
  if (paren) out += '(';
  emit(e, precision, out);
  if (paren) out += ')';
}

void emit(const Expr& e, int precision, std::string& out) {
  using K = Expr::Kind;
  switch (e.kind()) {
    case K::Const: out += format_number(e.value(), precision); return;
    case K::VarSelf: out += "x_i" + std::to_string(e.feature()); return;
    case K::VarNeighbor: out += "x_j" + std::to_string(e.feature()); return;
    case K::Neg: {
      const Expr& c = e.child();
      std::string inner;
      emit(c, precision, inner);
      // "-2" would read back as a literal, so a negated number keeps its parentheses.
      const bool paren = prec_of(c) < kNeg || std::isdigit(static_cast<unsigned char>(inner[0])) ||
                         inner[0] == '.';
      out += '-';
      out += paren ? "(" + inner + ")" : inner;
      return;
    }
    case K::Add: {
      emit(e.lhs(), precision, out);
      const Expr& r = e.rhs();
      if (r.kind() == K::Neg) {
        out += " - ";
        const Expr& c = r.child();
        emit_paren(c, prec_of(c) <= kAdd, precision, out);
      } else {
        out += " + ";
        emit_paren(r, prec_of(r) <= kAdd, precision, out);
      }
      return;
    }
    case K::Mul:
      emit_paren(e.lhs(), prec_of(e.lhs()) < kMul, precision, out);
      out += '*';
      emit_paren(e.rhs(), prec_of(e.rhs()) <= kMul && prec_of(e.rhs()) != kNeg, precision, out);
      return;
    case K::Pow:
      emit_paren(e.child(), prec_of(e.child()) < kAtom, precision, out);
      out += '^';
      out += std::to_string(e.exponent());
      return;
    case K::Unary:
      out += primitive_name(e.primitive());
      out += '(';
      emit(e.child(), precision, out);
      out += ')';
      return;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  Expr parse() {
    Expr e = parse_sum();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected character '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < s_.size() && s_[pos_] == c;
  }

  void expect(char c) {
    if (!peek(c)) {
      fail(pos_ < s_.size() ? std::string("expected '") + c + "'"
                            : std::string("unexpected end of input, expected '") + c + "'");
    }
    ++pos_;
  }

  Expr parse_sum() {
    Expr acc = parse_product();
    for (;;) {
      if (peek('+')) {
        ++pos_;
        acc = Expr::add(acc, parse_product());
      } else if (peek('-')) {
        ++pos_;
        acc = Expr::add(acc, Expr::neg(parse_product()));
      } else {
        return acc;
      }
    }
  }

  Expr parse_product() {
    Expr acc = parse_signed();
    for (;;) {
      if (peek('*')) {
        ++pos_;
        acc = Expr::mul(acc, parse_signed());
      } else if (peek('/')) {
        ++pos_;
        acc = Expr::mul(acc, Expr::pow(parse_signed(), -1));
      } else {
        return acc;
      }
    }
  }

  bool digit_at(std::size_t p) const {
    return p < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[p])) || s_[p] == '.');
  }

  Expr parse_signed() {
    if (peek('-')) {
      if (digit_at(pos_ + 1)) return parse_power();
      ++pos_;
      return Expr::neg(parse_signed());
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_atom();
    if (!peek('^')) return base;
    ++pos_;
    skip_ws();
    const std::size_t start = pos_;
    bool paren = false;
    if (peek('(')) {
      paren = true;
      ++pos_;
      skip_ws();
    }
    int n = 0;
    const char* first = s_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, s_.data() + s_.size(), n);
    if (ec != std::errc() || ptr == first) fail("expected integer exponent");
    pos_ += static_cast<std::size_t>(ptr - first);
    if (paren) expect(')');
    if (n == 0 || std::abs(n) > Expr::kMaxExponent) {
      throw ParseError("exponent out of range", start);
    }
    return Expr::pow(base, n);
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    std::size_t end = pos_;
    if (end < s_.size() && s_[end] == '-') ++end;
    while (end < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[end])) || s_[end] == '.')) ++end;
    if (end < s_.size() && (s_[end] == 'e' || s_[end] == 'E')) {
      std::size_t k = end + 1;
      if (k < s_.size() && (s_[k] == '+' || s_[k] == '-')) ++k;
      if (k < s_.size() && std::isdigit(static_cast<unsigned char>(s_[k]))) {
        end = k;
        while (end < s_.size() && std::isdigit(static_cast<unsigned char>(s_[end]))) ++end;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + end, v);
    if (ec != std::errc() || ptr != s_.data() + end) fail("malformed number");
    if (!std::isfinite(v)) fail("non-finite number");
    pos_ = end;
    return Expr::constant(v);
  }

  Expr parse_atom() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = parse_sum();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
        ++pos_;
      }
      const std::string_view word = s_.substr(start, pos_ - start);
      if (word.size() >= 3 && word[0] == 'x' && word[1] == '_' &&
          (word[2] == 'i' || word[2] == 'j')) {
        std::size_t feature = 0;
        const std::string_view digits = word.substr(3);
        if (!digits.empty()) {
          auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), feature);
          if (ec != std::errc() || ptr != digits.data() + digits.size()) {
            throw ParseError("bad variable name '" + std::string(word) + "'", start);
          }
        }
        return word[2] == 'i' ? Expr::self(feature) : Expr::neighbor(feature);
      }
      if (auto prim = primitive_from_name(word)) {
        expect('(');
        Expr arg = parse_sum();
        expect(')');
        return Expr::unary(*prim, arg);
      }
      throw ParseError("unknown identifier '" + std::string(word) + "'", start);
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string format_expr(const Expr& e, int precision) {
  if (precision < 0 || precision > 17) throw ParamError("precision must be in [0, 17]");
  std::string out;
  emit(e, precision, out);
  return out;
}

Expr parse_expr(std::string_view text) { return Parser(text).parse(); }

}  // namespace graphdyn
