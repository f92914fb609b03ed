#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stlrl/stl/formula.hpp"

namespace stlrl::stl {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, int line, int column)
      : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

class UnknownDimension : public ParseError {
 public:
  UnknownDimension(const std::string& name, int line, int column)
      : ParseError("unknown signal dimension '" + name + "'", line, column), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

/// Parses the textual formula syntax:
///
///   formula   := or ('implies' formula)?
///   or        := and ('or' and)*
///   and       := until ('and' until)*
///   until     := unary ('U' interval? unary)?
///   unary     := 'not' unary | ('G'|'F') interval? unary | primary
///   primary   := 'true' | '(' formula ')' | expr ('<'|'>') expr
///   interval  := '[' number ',' (number | 'inf') ']'
///   expr      := term (('+'|'-') term)*
///   term      := factor (('*'|'/') factor)*
///   factor    := '-' factor | number | ident | ('sqrt'|'sq') '(' expr ')' | '(' expr ')'
///
/// Identifiers naming a declared dimension are signal references. Other
/// identifiers must start with "p_" and become free parameters; anything
/// else is rejected with UnknownDimension.
Formula parse_formula(std::string_view text, const std::vector<std::string>& declared_dims);

Expr parse_expr(std::string_view text, const std::vector<std::string>& declared_dims);

}  // namespace stlrl::stl
