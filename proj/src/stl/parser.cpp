#include "stlrl/stl/parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>

namespace stlrl::stl {

namespace {

enum class Tok { Number, Ident, LParen, RParen, LBracket, RBracket, Comma, Plus, Minus, Star, Slash, Less, Greater, End };

struct Token {
  Tok kind;
  std::string text;
  double number = 0.0;
  int line = 1;
  int column = 1;
};

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  int line = 1;
  int col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    Token t{Tok::End, {}, 0.0, line, col};
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.')) ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          j = k;
          while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
        }
      }
      t.kind = Tok::Number;
      t.text = std::string(src.substr(i, j - i));
      const auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc{} || res.ptr != t.text.data() + t.text.size()) {
        throw ParseError("malformed number '" + t.text + "'", line, col);
      }
      out.push_back(std::move(t));
      advance(j - i);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      t.kind = Tok::Ident;
      t.text = std::string(src.substr(i, j - i));
      out.push_back(std::move(t));
      advance(j - i);
      continue;
    }
    switch (c) {
      case '(': t.kind = Tok::LParen; break;
      case ')': t.kind = Tok::RParen; break;
      case '[': t.kind = Tok::LBracket; break;
      case ']': t.kind = Tok::RBracket; break;
      case ',': t.kind = Tok::Comma; break;
      case '+': t.kind = Tok::Plus; break;
      case '-': t.kind = Tok::Minus; break;
      case '*': t.kind = Tok::Star; break;
      case '/': t.kind = Tok::Slash; break;
      case '<': t.kind = Tok::Less; break;
      case '>': t.kind = Tok::Greater; break;
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
    t.text = std::string(1, c);
    out.push_back(std::move(t));
    advance(1);
  }
  out.push_back(Token{Tok::End, "end of input", 0.0, line, col});
  return out;
}

constexpr std::array<std::string_view, 11> kKeywords = {"G", "F", "U", "not", "and", "or", "implies",
                                                        "true", "sqrt", "sq", "inf"};

bool is_keyword(const std::string& s) {
  return std::find(kKeywords.begin(), kKeywords.end(), s) != kKeywords.end();
}

class Parser {
  template <class F>
  auto guarded(F&& fn) {
    try {
      return fn();
    } catch (const UnknownDimension&) {
      throw;
    } catch (const ParseError&) {
      if (furthest_) throw *furthest_;
      throw;
    }
  }

 public:
  Parser(std::vector<Token> toks, const std::vector<std::string>& dims) : toks_(std::move(toks)), dims_(dims) {}

  Formula formula_root() {
    Formula f = guarded([&] { return implies(); });
    expect_end();
    return f;
  }

  Expr expr_root() {
    Expr e = guarded([&] { return expr(); });
    expect_end();
    return e;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  bool at_keyword(std::string_view kw) const { return peek().kind == Tok::Ident && peek().text == kw; }

  [[noreturn]] void fail(const std::string& msg) {
    const Token& t = peek();
    ParseError err(msg + ", found '" + t.text + "'", t.line, t.column);
    if (!furthest_ || pos_ >= furthest_pos_) {
      furthest_ = err;
      furthest_pos_ = pos_;
    }
    throw err;
  }

  void expect(Tok k, const char* what) {
    if (peek().kind != k) fail(std::string("expected ") + what);
    ++pos_;
  }

  void expect_end() {
    if (peek().kind != Tok::End) fail("expected end of input");
  }

  Formula implies() {
    Formula lhs = disjunction();
    if (at_keyword("implies")) {
      ++pos_;
      return Formula::implication(std::move(lhs), implies());
    }
    return lhs;
  }

  Formula disjunction() {
    Formula lhs = conjunction();
    while (at_keyword("or")) {
      ++pos_;
      lhs = Formula::disjunction(std::move(lhs), conjunction());
    }
    return lhs;
  }

  Formula conjunction() {
    Formula lhs = until();
    while (at_keyword("and")) {
      ++pos_;
      lhs = Formula::conjunction(std::move(lhs), until());
    }
    return lhs;
  }

  Formula until() {
    Formula lhs = unary();
    if (at_keyword("U")) {
      ++pos_;
      const Interval i = interval();
      return Formula::until(std::move(lhs), unary(), i);
    }
    return lhs;
  }

  Formula unary() {
    if (at_keyword("not")) {
      ++pos_;
      return Formula::negation(unary());
    }
    if (at_keyword("G") || at_keyword("F")) {
      const bool always = peek().text == "G";
      ++pos_;
      const Interval i = interval();
      Formula body = unary();
      return always ? Formula::always(std::move(body), i) : Formula::eventually(std::move(body), i);
    }
    return primary();
  }

  Interval interval() {
    Interval i;
    if (peek().kind != Tok::LBracket) return i;
    ++pos_;
    if (peek().kind != Tok::Number) fail("expected interval lower bound");
    i.lo = peek().number;
    ++pos_;
    expect(Tok::Comma, "','");
    if (at_keyword("inf")) {
      i.hi = std::numeric_limits<double>::infinity();
    } else if (peek().kind == Tok::Number) {
      i.hi = peek().number;
    } else {
      fail("expected interval upper bound");
    }
    ++pos_;
    if (!(i.hi >= i.lo)) fail("interval upper bound below lower bound");
    expect(Tok::RBracket, "']'");
    return i;
  }

  Formula primary() {
    if (at_keyword("true")) {
      ++pos_;
      return Formula::truth();
    }
    if (peek().kind == Tok::LParen) {
      const std::size_t save = pos_;
      try {
        ++pos_;
        Formula inner = implies();
        expect(Tok::RParen, "')'");
        if (!continues_expression()) return inner;
      } catch (const UnknownDimension&) {
        throw;
      } catch (const ParseError&) {
      }
      pos_ = save;
    }
    return predicate();
  }

  bool continues_expression() const {
    switch (peek().kind) {
      case Tok::Less:
      case Tok::Greater:
      case Tok::Plus:
      case Tok::Minus:
      case Tok::Star:
      case Tok::Slash:
        return true;
      default:
        return false;
    }
  }

  Formula predicate() {
    Expr lhs = expr();
    Comparator cmp;
    if (peek().kind == Tok::Less) {
      cmp = Comparator::Less;
    } else if (peek().kind == Tok::Greater) {
      cmp = Comparator::Greater;
    } else {
      fail("expected comparator '<' or '>'");
    }
    ++pos_;
    Expr rhs = expr();
    return Formula::predicate(std::move(lhs), cmp, std::move(rhs));
  }

  Expr expr() {
    Expr lhs = term();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      const bool add = peek().kind == Tok::Plus;
      ++pos_;
      Expr rhs = term();
      lhs = add ? std::move(lhs) + std::move(rhs) : std::move(lhs) - std::move(rhs);
    }
    return lhs;
  }

  Expr term() {
    Expr lhs = factor();
    while (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
      const bool mul = peek().kind == Tok::Star;
      ++pos_;
      Expr rhs = factor();
      lhs = mul ? std::move(lhs) * std::move(rhs) : std::move(lhs) / std::move(rhs);
    }
    return lhs;
  }

  Expr factor() {
    const Token& t = peek();
    if (t.kind == Tok::Minus) {
      ++pos_;
      if (peek().kind == Tok::Number) {
        const double v = -peek().number;
        ++pos_;
        return Expr::constant(v);
      }
      return Expr::unary(Expr::Kind::Neg, factor());
    }
    if (t.kind == Tok::Number) {
      ++pos_;
      return Expr::constant(t.number);
    }
    if (t.kind == Tok::LParen) {
      ++pos_;
      Expr inner = expr();
      expect(Tok::RParen, "')'");
      return inner;
    }
    if (t.kind == Tok::Ident) {
      if (t.text == "sqrt" || t.text == "sq") {
        const auto kind = t.text == "sqrt" ? Expr::Kind::Sqrt : Expr::Kind::Square;
        ++pos_;
        expect(Tok::LParen, "'('");
        Expr inner = expr();
        expect(Tok::RParen, "')'");
        return Expr::unary(kind, std::move(inner));
      }
      if (is_keyword(t.text)) fail("unexpected keyword in expression");
      const Token ident = t;
      ++pos_;
      if (std::find(dims_.begin(), dims_.end(), ident.text) != dims_.end()) return Expr::signal(ident.text);
      if (ident.text.starts_with("p_")) return Expr::param(ident.text);
      throw UnknownDimension(ident.text, ident.line, ident.column);
    }
    fail("expected expression");
  }

  std::vector<Token> toks_;
  const std::vector<std::string>& dims_;
  std::size_t pos_ = 0;
  std::optional<ParseError> furthest_;
  std::size_t furthest_pos_ = 0;
};

}  // namespace

Formula parse_formula(std::string_view text, const std::vector<std::string>& declared_dims) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ParseError("empty formula", 1, 1);
  Parser p(lex(text), declared_dims);
  return p.formula_root();
}

Expr parse_expr(std::string_view text, const std::vector<std::string>& declared_dims) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ParseError("empty expression", 1, 1);
  Parser p(lex(text), declared_dims);
  return p.expr_root();
}

}  // namespace stlrl::stl
