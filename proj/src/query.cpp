#include "nesy/query.hpp"

#include <algorithm>
#include <optional>

namespace nesy {

namespace {

FormulaPtr make_node(FormulaKind kind, SourceSpan span, FormulaPtr lhs = nullptr, FormulaPtr rhs = nullptr) {
  auto f = std::make_shared<Formula>();
  f->kind = kind;
  f->span = span;
  f->lhs = std::move(lhs);
  f->rhs = std::move(rhs);
  return f;
}

FormulaPtr make_quantifier(FormulaKind kind, std::string var, std::string dataset, FormulaPtr body,
                           SourceSpan span, SourceSpan dataset_span = {}) {
  auto f = std::make_shared<Formula>();
  f->kind = kind;
  f->span = span;
  f->name = std::move(var);
  f->dataset = std::move(dataset);
  f->dataset_span = dataset_span;
  f->lhs = std::move(body);
  return f;
}

// ---- lexer -------------------------------------------------------------------

enum class Tok { ident, lparen, rparen, colon, op_not, op_and, op_or, op_implies, op_iff, kw_forall, kw_exists, kw_in, end };

struct Token {
  Tok kind;
  SourceSpan span;
  std::string text;
};

std::string describe(Tok t) {
  switch (t) {
    case Tok::ident: return "identifier";
    case Tok::lparen: return "'('";
    case Tok::rparen: return "')'";
    case Tok::colon: return "':'";
    case Tok::op_not: return "'~'";
    case Tok::op_and: return "'&'";
    case Tok::op_or: return "'|'";
    case Tok::op_implies: return "'->'";
    case Tok::op_iff: return "'<->'";
    case Tok::kw_forall: return "'forall'";
    case Tok::kw_exists: return "'exists'";
    case Tok::kw_in: return "'in'";
    case Tok::end: return "end of input";
  }
  return "?";
}

bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

struct UnicodeAlias {
  std::string_view bytes;
  Tok kind;
};

constexpr UnicodeAlias kAliases[] = {
    {"\xC2\xAC", Tok::op_not},         // ¬
    {"\xE2\x88\xA7", Tok::op_and},     // ∧
    {"\xE2\x88\xA8", Tok::op_or},      // ∨
    {"\xE2\x86\x92", Tok::op_implies}, // →
    {"\xE2\x86\x94", Tok::op_iff},     // ↔
    {"\xE2\x88\x80", Tok::kw_forall},  // ∀
    {"\xE2\x88\x83", Tok::kw_exists},  // ∃
};

std::vector<Token> lex(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto push = [&](Tok k, std::size_t len) {
    out.push_back({k, {i, i + len}, std::string(s.substr(i, len))});
    i += len;
  };
  while (i < s.size()) {
    const char c = s[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < s.size() && ident_char(s[j])) ++j;
      const std::string_view word = s.substr(i, j - i);
      Tok k = Tok::ident;
      if (word == "forall") k = Tok::kw_forall;
      else if (word == "exists") k = Tok::kw_exists;
      else if (word == "in") k = Tok::kw_in;
      push(k, j - i);
      continue;
    }
    switch (c) {
      case '(': push(Tok::lparen, 1); continue;
      case ')': push(Tok::rparen, 1); continue;
      case ':': push(Tok::colon, 1); continue;
      case '~': push(Tok::op_not, 1); continue;
      case '&': push(Tok::op_and, 1); continue;
      case '|': push(Tok::op_or, 1); continue;
      default: break;
    }
    if (s.substr(i, 2) == "->") {
      push(Tok::op_implies, 2);
      continue;
    }
    if (s.substr(i, 3) == "<->") {
      push(Tok::op_iff, 3);
      continue;
    }
    bool matched = false;
    for (const auto& alias : kAliases) {
      if (s.substr(i, alias.bytes.size()) == alias.bytes) {
        push(alias.kind, alias.bytes.size());
        matched = true;
        break;
      }
    }
    if (matched) continue;
    const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(c)), s.size() - i);
    throw ParseError({i, i + len}, "unexpected character '" + std::string(s.substr(i, len)) + "' at byte " +
                                       std::to_string(i),
                     {});
  }
  // The end token points at the last byte so error spans stay inside the input.
  const std::size_t b = s.empty() ? 0 : s.size() - 1;
  out.push_back({Tok::end, {b, s.size()}, ""});
  return out;
}

// ---- parser ------------------------------------------------------------------

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(lex(text)) {}

  FormulaPtr parse_all() {
    FormulaPtr f = formula();
    expect({Tok::end});
    return f;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& advance() { return tokens_[pos_++]; }
  bool at(Tok k) const { return peek().kind == k; }

  const Token& expect(std::initializer_list<Tok> allowed) {
    if (at(*allowed.begin())) return advance();
    fail(allowed);
  }

  [[noreturn]] void fail(std::initializer_list<Tok> allowed) const {
    std::vector<std::string> expected;
    for (Tok t : allowed) expected.push_back(describe(t));
    const Token& t = peek();
    std::string msg = "expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) msg += (i ? (i + 1 == expected.size() ? " or " : ", ") : "") + expected[i];
    msg += ", found " + (t.kind == Tok::end ? describe(Tok::end) : "'" + t.text + "'");
    msg += " at byte " + std::to_string(t.span.begin);
    throw ParseError(t.span, msg, expected);
  }

  FormulaPtr formula() {
    if (at(Tok::kw_forall) || at(Tok::kw_exists)) return quantifier();
    return implication();
  }

  FormulaPtr quantifier() {
    const Token kw = advance();
    const Token v = expect({Tok::ident});
    expect({Tok::kw_in});
    const Token d = expect({Tok::ident});
    expect({Tok::colon});
    scope_.push_back(v.text);
    FormulaPtr body = formula();
    scope_.pop_back();
    const auto kind = kw.kind == Tok::kw_forall ? FormulaKind::forall : FormulaKind::exists;
    return make_quantifier(kind, v.text, d.text, body, {kw.span.begin, body->span.end}, d.span);
  }

  FormulaPtr implication() {
    FormulaPtr lhs = disjunction();
    if (at(Tok::op_implies)) {
      advance();
      FormulaPtr rhs = implication();
      return make_implies(lhs, rhs, {lhs->span.begin, rhs->span.end});
    }
    if (at(Tok::op_iff)) {
      advance();
      FormulaPtr rhs = implication();
      const SourceSpan span{lhs->span.begin, rhs->span.end};
      return make_and(make_implies(lhs, rhs, span), make_implies(rhs, lhs, span), span);
    }
    return lhs;
  }

  FormulaPtr disjunction() {
    FormulaPtr f = conjunction();
    while (at(Tok::op_or)) {
      advance();
      FormulaPtr rhs = conjunction();
      f = make_or(f, rhs, {f->span.begin, rhs->span.end});
    }
    return f;
  }

  FormulaPtr conjunction() {
    FormulaPtr f = unary();
    while (at(Tok::op_and)) {
      advance();
      FormulaPtr rhs = unary();
      f = make_and(f, rhs, {f->span.begin, rhs->span.end});
    }
    return f;
  }

  FormulaPtr unary() {
    if (at(Tok::op_not)) {
      const Token t = advance();
      FormulaPtr f = unary();
      return make_not(f, {t.span.begin, f->span.end});
    }
    return atom();
  }

  FormulaPtr atom() {
    if (at(Tok::lparen)) {
      const Token open = advance();
      FormulaPtr f = formula();
      const Token close = expect({Tok::rparen});
      auto widened = std::make_shared<Formula>(*f);
      widened->span = {open.span.begin, close.span.end};
      return widened;
    }
    if (!at(Tok::ident)) fail({Tok::ident, Tok::lparen, Tok::op_not});
    const Token name = advance();
    expect({Tok::lparen});
    const Token arg = expect({Tok::ident});
    const Token close = expect({Tok::rparen});
    Term term;
    term.name = arg.text;
    term.span = arg.span;
    term.kind = std::find(scope_.begin(), scope_.end(), arg.text) != scope_.end() ? Term::Kind::variable
                                                                                    : Term::Kind::example;
    return make_predicate(name.text, term, {name.span.begin, close.span.end});
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::vector<std::string> scope_;
};

// ---- printer -----------------------------------------------------------------

int precedence(FormulaKind k) {
  switch (k) {
    case FormulaKind::forall:
    case FormulaKind::exists: return 0;
    case FormulaKind::implication: return 1;
    case FormulaKind::disjunction: return 2;
    case FormulaKind::conjunction: return 3;
    case FormulaKind::negation: return 4;
    case FormulaKind::predicate: return 5;
  }
  return 5;
}

void print_into(const Formula& f, int required, std::string& out) {
  const bool parens = precedence(f.kind) < required;
  if (parens) out += '(';
  switch (f.kind) {
    case FormulaKind::predicate:
      out += f.name + "(" + f.term.name + ")";
      break;
    case FormulaKind::negation:
      out += '~';
      print_into(*f.lhs, 4, out);
      break;
    case FormulaKind::conjunction:
      print_into(*f.lhs, 3, out);
      out += " & ";
      print_into(*f.rhs, 4, out);
      break;
    case FormulaKind::disjunction:
      print_into(*f.lhs, 2, out);
      out += " | ";
      print_into(*f.rhs, 3, out);
      break;
    case FormulaKind::implication:
      print_into(*f.lhs, 2, out);
      out += " -> ";
      print_into(*f.rhs, 1, out);
      break;
    case FormulaKind::forall:
    case FormulaKind::exists:
      out += f.kind == FormulaKind::forall ? "forall " : "exists ";
      out += f.name + " in " + f.dataset + ": ";
      print_into(*f.lhs, 0, out);
      break;
  }
  if (parens) out += ')';
}

void diagnose_into(const Formula& f, const Vocabulary& vocab, std::vector<std::string>& scope,
                   std::vector<Diagnostic>& out) {
  switch (f.kind) {
    case FormulaKind::predicate: {
      if (vocab.has_predicate && !vocab.has_predicate(f.name))
        out.push_back({f.span, "unknown predicate " + f.name});
      const bool bound = std::find(scope.begin(), scope.end(), f.term.name) != scope.end();
      if (f.term.kind == Term::Kind::variable) {
        if (!bound) out.push_back({f.term.span, "unbound variable " + f.term.name});
      } else if (!vocab.has_example || !vocab.has_example(f.term.name)) {
        out.push_back({f.term.span, "unbound variable " + f.term.name});
      }
      break;
    }
    case FormulaKind::negation:
      diagnose_into(*f.lhs, vocab, scope, out);
      break;
    case FormulaKind::conjunction:
    case FormulaKind::disjunction:
    case FormulaKind::implication:
      diagnose_into(*f.lhs, vocab, scope, out);
      diagnose_into(*f.rhs, vocab, scope, out);
      break;
    case FormulaKind::forall:
    case FormulaKind::exists:
      if (!vocab.has_dataset || !vocab.has_dataset(f.dataset))
        out.push_back({f.dataset_span.end > f.dataset_span.begin ? f.dataset_span : f.span,
                       "unknown dataset " + f.dataset});
      scope.push_back(f.name);
      diagnose_into(*f.lhs, vocab, scope, out);
      scope.pop_back();
      break;
  }
}

void collect_refs(const Formula& f, std::vector<std::string>& out) {
  if (f.kind == FormulaKind::predicate) {
    if (f.term.kind == Term::Kind::example && std::find(out.begin(), out.end(), f.term.name) == out.end())
      out.push_back(f.term.name);
    return;
  }
  if (f.lhs) collect_refs(*f.lhs, out);
  if (f.rhs) collect_refs(*f.rhs, out);
}

}  // namespace

FormulaPtr make_predicate(std::string name, Term term, SourceSpan span) {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::predicate;
  f->span = span;
  f->name = std::move(name);
  f->term = std::move(term);
  return f;
}

FormulaPtr make_not(FormulaPtr f, SourceSpan span) { return make_node(FormulaKind::negation, span, std::move(f)); }
FormulaPtr make_and(FormulaPtr a, FormulaPtr b, SourceSpan span) {
  return make_node(FormulaKind::conjunction, span, std::move(a), std::move(b));
}
FormulaPtr make_or(FormulaPtr a, FormulaPtr b, SourceSpan span) {
  return make_node(FormulaKind::disjunction, span, std::move(a), std::move(b));
}
FormulaPtr make_implies(FormulaPtr a, FormulaPtr b, SourceSpan span) {
  return make_node(FormulaKind::implication, span, std::move(a), std::move(b));
}
FormulaPtr make_forall(std::string v, std::string dataset, FormulaPtr body, SourceSpan span) {
  return make_quantifier(FormulaKind::forall, std::move(v), std::move(dataset), std::move(body), span);
}
FormulaPtr make_exists(std::string v, std::string dataset, FormulaPtr body, SourceSpan span) {
  return make_quantifier(FormulaKind::exists, std::move(v), std::move(dataset), std::move(body), span);
}

bool same_structure(const Formula& a, const Formula& b) {
  if (a.kind != b.kind || a.name != b.name) return false;
  switch (a.kind) {
    case FormulaKind::predicate:
      return a.term.kind == b.term.kind && a.term.name == b.term.name;
    case FormulaKind::negation:
      return same_structure(*a.lhs, *b.lhs);
    case FormulaKind::forall:
    case FormulaKind::exists:
      return a.dataset == b.dataset && same_structure(*a.lhs, *b.lhs);
    default:
      return same_structure(*a.lhs, *b.lhs) && same_structure(*a.rhs, *b.rhs);
  }
}

FormulaPtr parse_formula(std::string_view text) { return Parser(text).parse_all(); }

std::string print_formula(const Formula& f) {
  std::string out;
  print_into(f, 0, out);
  return out;
}

std::vector<Diagnostic> diagnose(const Formula& f, const Vocabulary& vocab) {
  std::vector<Diagnostic> out;
  std::vector<std::string> scope;
  diagnose_into(f, vocab, scope, out);
  return out;
}

ValidatedFormula validate(FormulaPtr f, const Vocabulary& vocab) {
  auto ds = diagnose(*f, vocab);
  if (!ds.empty()) throw ValidationError(std::move(ds));
  std::string text = print_formula(*f);
  return {std::move(f), std::move(text)};
}

FormulaPtr substitute(const FormulaPtr& f, const std::string& symbol, const std::string& example_id) {
  if (f->kind == FormulaKind::predicate) {
    if (f->term.kind != Term::Kind::example || f->term.name != symbol) return f;
    Term t = f->term;
    t.name = example_id;
    return make_predicate(f->name, t, f->span);
  }
  auto copy = std::make_shared<Formula>(*f);
  if (f->lhs) copy->lhs = substitute(f->lhs, symbol, example_id);
  if (f->rhs) copy->rhs = substitute(f->rhs, symbol, example_id);
  return copy;
}

std::vector<std::string> example_refs(const Formula& f) {
  std::vector<std::string> out;
  collect_refs(f, out);
  return out;
}

int quantifier_depth(const Formula& f) {
  int d = 0;
  if (f.lhs) d = std::max(d, quantifier_depth(*f.lhs));
  if (f.rhs) d = std::max(d, quantifier_depth(*f.rhs));
  return d + (f.is_quantifier() ? 1 : 0);
}

std::vector<KbLine> parse_kb_text(std::string_view text) {
  std::vector<KbLine> out;
  std::vector<std::string> comments;
  std::size_t offset = 0, line_no = 0;
  while (offset < text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', offset);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(offset, nl - offset);
    const std::size_t hash = line.find('#');
    if (hash != std::string_view::npos) {
      std::string_view comment = line.substr(hash + 1);
      if (!comment.empty() && comment.back() == '\r') comment.remove_suffix(1);
      comments.emplace_back(comment);
      line = line.substr(0, hash);
    }
    const std::size_t first = line.find_first_not_of(" \t\r");
    if (first != std::string_view::npos) {
      const std::size_t last = line.find_last_not_of(" \t\r");
      const std::string_view body = line.substr(first, last - first + 1);
      FormulaPtr f;
      try {
        f = parse_formula(body);
      } catch (const ParseError& e) {
        const std::size_t base = offset + first;
        throw ParseError({base + e.span().begin, base + e.span().end},
                         "line " + std::to_string(line_no) + ": " + e.what(), e.expected());
      }
      out.push_back({line_no, std::string(body), std::move(comments), std::move(f)});
      comments.clear();
    }
    offset = nl + 1;
  }
  return out;
}

}  // namespace nesy
