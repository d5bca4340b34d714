#include <cctype>
#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "aegis/core/errors.hpp"
#include "aegis/specdsl/spec.hpp"

namespace aegis::specdsl {

namespace {

enum class Tok {
  number,
  variable,
  abs_kw,
  plus,
  minus,
  star,
  lparen,
  rparen,
  amp,
  bar,
  cmp,
  end,
};

struct Token {
  Tok kind;
  std::size_t line;
  std::size_t column;
  double number = 0.0;
  std::size_t index = 0;
  Comparison cmp = Comparison::eq;
  std::string text;
};

std::vector<Token> tokenize(std::string_view text, std::optional<std::size_t> state_dim) {
  std::vector<Token> out;
  std::size_t line = 1;
  std::size_t col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    i += n;
    col += n;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      ++i;
      ++line;
      col = 1;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '#') {  // comment to end of line
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    Token tok{Tok::end, line, col, 0.0, 0, Comparison::eq, {}};
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      double value = 0.0;
      const char* first = text.data() + i;
      auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), value);
      if (ec != std::errc() || !std::isfinite(value)) throw ParseError(line, col, "malformed number");
      tok.kind = Tok::number;
      tok.number = value;
      tok.text.assign(first, ptr);
      advance(static_cast<std::size_t>(ptr - first));
      out.push_back(std::move(tok));
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
        ++j;
      }
      std::string word(text.substr(i, j - i));
      if (word == "abs") {
        tok.kind = Tok::abs_kw;
      } else {
        bool is_var = word.size() > 1 && word[0] == 'x';
        for (std::size_t k = 1; is_var && k < word.size(); ++k) {
          is_var = std::isdigit(static_cast<unsigned char>(word[k])) != 0;
        }
        if (is_var && word.size() > 2 && word[1] == '0') is_var = false;  // no "x01"
        if (!is_var) throw ParseError(line, col, "unknown variable name '" + word + "'");
        tok.kind = Tok::variable;
        tok.index = std::stoul(word.substr(1));
        if (state_dim && tok.index >= *state_dim) {
          throw ParseError(line, col,
                           "unknown variable name '" + word + "' (state has " +
                               std::to_string(*state_dim) + " dimensions)");
        }
      }
      tok.text = word;
      advance(j - i);
      out.push_back(std::move(tok));
      continue;
    }
    auto two = text.substr(i, 2);
    std::size_t len = 1;
    switch (c) {
      case '+': tok.kind = Tok::plus; break;
      case '-': tok.kind = Tok::minus; break;
      case '*': tok.kind = Tok::star; break;
      case '(': tok.kind = Tok::lparen; break;
      case ')': tok.kind = Tok::rparen; break;
      case '&': tok.kind = Tok::amp; break;
      case '|': tok.kind = Tok::bar; break;
      case '<':
        tok.kind = Tok::cmp;
        if (two == "<=") {
          tok.cmp = Comparison::le;
          len = 2;
        } else {
          tok.cmp = Comparison::lt;
        }
        break;
      case '>':
        tok.kind = Tok::cmp;
        if (two == ">=") {
          tok.cmp = Comparison::ge;
          len = 2;
        } else {
          tok.cmp = Comparison::gt;
        }
        break;
      case '=':
        tok.kind = Tok::cmp;
        tok.cmp = Comparison::eq;
        if (two == "==") len = 2;
        break;
      case '!':
        if (two != "!=") throw ParseError(line, col, "unexpected '!' (negation is not supported)");
        tok.kind = Tok::cmp;
        tok.cmp = Comparison::ne;
        len = 2;
        break;
      default: throw ParseError(line, col, std::string("unexpected character '") + c + "'");
    }
    tok.text = std::string(text.substr(i, len));
    advance(len);
    out.push_back(std::move(tok));
  }
  out.push_back(Token{Tok::end, line, col, 0.0, 0, Comparison::eq, {}});
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  Formula parse() {
    Formula f = disjunction();
    if (peek().kind != Tok::end) fail("unexpected '" + peek().text + "' after end of formula");
    return f;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& take() { return toks_[pos_++]; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(peek().line, peek().column, msg);
  }
  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) {
      fail(std::string("expected ") + what + (peek().kind == Tok::end ? " before end of input"
                                                                       : ", found '" + peek().text + "'"));
    }
    ++pos_;
  }

  Formula disjunction() {
    std::vector<Formula> parts{conjunction()};
    while (peek().kind == Tok::bar) {
      ++pos_;
      parts.push_back(conjunction());
    }
    return parts.size() == 1 ? std::move(parts.front()) : Formula::disjunction(std::move(parts));
  }

  Formula conjunction() {
    std::vector<Formula> parts{primary()};
    while (peek().kind == Tok::amp) {
      ++pos_;
      parts.push_back(primary());
    }
    return parts.size() == 1 ? std::move(parts.front()) : Formula::conjunction(std::move(parts));
  }

  // '(' may open either a parenthesized formula or a parenthesized term that
  // starts a predicate; try the formula reading first and fall back.
  Formula primary() {
    if (peek().kind == Tok::lparen) {
      const std::size_t saved = pos_;
      try {
        ++pos_;
        Formula inner = disjunction();
        expect(Tok::rparen, "')'");
        const Tok next = peek().kind;
        if (next != Tok::cmp && next != Tok::plus && next != Tok::minus && next != Tok::star) {
          return inner;
        }
      } catch (const ParseError& formula_error) {
        const std::size_t formula_pos = pos_;
        pos_ = saved;
        try {
          return Formula::atom(predicate());
        } catch (const ParseError&) {
          if (pos_ >= formula_pos) throw;
          throw formula_error;
        }
      }
      pos_ = saved;
    }
    return Formula::atom(predicate());
  }

  Predicate predicate() {
    Term lhs = expr();
    if (peek().kind != Tok::cmp) fail("expected a comparison operator");
    const Comparison op = take().cmp;
    Term rhs = expr();
    if (peek().kind == Tok::cmp) fail("chained comparisons are not supported; use '&'");
    return Predicate{std::move(lhs), op, std::move(rhs)};
  }

  Term expr() {
    Term t = product();
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      const bool plus = take().kind == Tok::plus;
      Term r = product();
      t = plus ? Term::add(std::move(t), std::move(r)) : Term::sub(std::move(t), std::move(r));
    }
    return t;
  }

  Term product() {
    Term t = unary();
    while (peek().kind == Tok::star) {
      const Token& star = take();
      Term r = unary();
      if (!t.is_constant() && !r.is_constant()) {
        throw ParseError(star.line, star.column,
                         "product of two state-dependent terms is not an affine term");
      }
      t = Term::mul(std::move(t), std::move(r));
    }
    return t;
  }

  Term unary() {
    if (peek().kind == Tok::minus) {
      ++pos_;
      if (peek().kind == Tok::number) return Term::constant(-take().number);
      return Term::neg(unary());
    }
    return atom();
  }

  Term atom() {
    const Token& tok = peek();
    switch (tok.kind) {
      case Tok::number: ++pos_; return Term::constant(tok.number);
      case Tok::variable: ++pos_; return Term::variable(tok.index);
      case Tok::abs_kw: {
        ++pos_;
        expect(Tok::lparen, "'(' after abs");
        Term inner = expr();
        expect(Tok::rparen, "')'");
        return Term::abs(std::move(inner));
      }
      case Tok::lparen: {
        ++pos_;
        Term inner = expr();
        expect(Tok::rparen, "')'");
        return inner;
      }
      case Tok::end: fail("unexpected end of input, expected a term");
      default: fail("expected a term, found '" + tok.text + "'");
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

SafetySpec parse_spec(std::string_view text, double delta, std::optional<std::size_t> state_dim) {
  Parser parser(tokenize(text, state_dim));
  SafetySpec spec(parser.parse(), delta);
  return state_dim ? spec.bind(*state_dim) : spec;
}

}  // namespace aegis::specdsl
