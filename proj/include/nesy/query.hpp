#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nesy/error.hpp"

namespace nesy {

struct Term {
  enum class Kind { variable, example };
  Kind kind = Kind::example;
  std::string name;
  SourceSpan span;
};

enum class FormulaKind { predicate, negation, conjunction, disjunction, implication, forall, exists };

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  FormulaKind kind = FormulaKind::predicate;
  SourceSpan span;
  // Predicate name, or the variable bound by a quantifier.
  std::string name;
  Term term;                 // predicate only
  std::string dataset;       // quantifiers only
  SourceSpan dataset_span;   // quantifiers only
  // Negation operand and quantifier body live in lhs.
  FormulaPtr lhs;
  FormulaPtr rhs;

  bool is_quantifier() const { return kind == FormulaKind::forall || kind == FormulaKind::exists; }
  bool is_binary() const {
    return kind == FormulaKind::conjunction || kind == FormulaKind::disjunction || kind == FormulaKind::implication;
  }
};

FormulaPtr make_predicate(std::string name, Term term, SourceSpan span = {});
FormulaPtr make_not(FormulaPtr f, SourceSpan span = {});
FormulaPtr make_and(FormulaPtr a, FormulaPtr b, SourceSpan span = {});
FormulaPtr make_or(FormulaPtr a, FormulaPtr b, SourceSpan span = {});
FormulaPtr make_implies(FormulaPtr a, FormulaPtr b, SourceSpan span = {});
FormulaPtr make_forall(std::string var, std::string dataset, FormulaPtr body, SourceSpan span = {});
FormulaPtr make_exists(std::string var, std::string dataset, FormulaPtr body, SourceSpan span = {});
inline Term var(std::string name) { return {Term::Kind::variable, std::move(name), {}}; }
inline Term example(std::string id) { return {Term::Kind::example, std::move(id), {}}; }

// Equality of tree shape, names and term kinds; spans are ignored.
bool same_structure(const Formula& a, const Formula& b);

// Accepts ASCII connectives (~ & | -> <-> forall exists) and the Unicode
// aliases. An identifier argument is a variable when an enclosing quantifier
// binds it, otherwise an example reference. `a <-> b` becomes
// (a -> b) & (b -> a).
FormulaPtr parse_formula(std::string_view text);

// Canonical ASCII text with the fewest parentheses that re-parse to the same tree.
std::string print_formula(const Formula& f);

struct Vocabulary {
  std::function<bool(const std::string&)> has_predicate;
  std::function<bool(const std::string&)> has_dataset;
  std::function<bool(const std::string&)> has_example;
};

// One diagnostic per violation; empty means valid.
std::vector<Diagnostic> diagnose(const Formula& f, const Vocabulary& vocab);

struct ValidatedFormula {
  FormulaPtr formula;
  std::string text;  // canonical
};

// Throws ValidationError carrying every diagnostic.
ValidatedFormula validate(FormulaPtr f, const Vocabulary& vocab);

// Replaces example references named `symbol` with `example_id`.
FormulaPtr substitute(const FormulaPtr& f, const std::string& symbol, const std::string& example_id);

// Names used as example references, in first-occurrence order.
std::vector<std::string> example_refs(const Formula& f);

// Maximum number of nested quantifiers along any path.
int quantifier_depth(const Formula& f);

struct KbLine {
  std::size_t line = 0;               // 1-based
  std::string text;                   // formula text with the comment stripped
  std::vector<std::string> comments;  // comment lines since the previous formula, without '#'
  FormulaPtr formula;
};

// One formula per line; '#' starts a comment; blank lines are skipped.
// Parse errors carry byte offsets into the whole text.
std::vector<KbLine> parse_kb_text(std::string_view text);

}  // namespace nesy
