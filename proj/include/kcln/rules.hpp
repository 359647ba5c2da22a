#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "kcln/graph.hpp"

namespace kcln {

// Term of a preference rule: either a variable (`E1`, upper-case initial) or
// an entity-id constant written `e<id>` (lower-case).
struct Term {
  bool is_variable = false;
  std::string var_name;   // when is_variable
  EntityId constant = -1; // when !is_variable

  static Term variable(std::string name) {
    Term t;
    t.is_variable = true;
    t.var_name = std::move(name);
    return t;
  }
  static Term constant_id(EntityId id) {
    Term t;
    t.constant = id;
    return t;
  }
  bool operator==(const Term&) const = default;
};

struct BodyLiteral {
  enum class Kind { attribute, relation };
  Kind kind = Kind::attribute;
  // attribute: entity has `feature_name` above the grounding threshold
  Term entity;
  std::string feature_name;
  // relation: relation_name(src, dst), i.e. a directed edge src -> dst
  std::string relation_name;
  Term src, dst;

  bool operator==(const BodyLiteral&) const = default;
};

enum class Polarity { preferred, non_preferred };

struct LabelPreference {
  Term entity;
  std::string label_name;
  Polarity polarity = Polarity::preferred;
  bool operator==(const LabelPreference&) const = default;
};

struct PreferenceRule {
  std::vector<BodyLiteral> body;   // nonempty
  std::vector<LabelPreference> head;  // nonempty
  int source_line = 0;

  bool operator==(const PreferenceRule& o) const {
    return body == o.body && head == o.head;
  }
};

struct RuleSet {
  std::vector<PreferenceRule> rules;
  bool operator==(const RuleSet&) const = default;
};

struct ParseError : std::runtime_error {
  int line, column;
  ParseError(int line_, int col_, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_) + ", col " +
                           std::to_string(col_) + ": " + what),
        line(line_),
        column(col_) {}
};

// One rule per non-blank, non-comment line:
//   attr(E1,"AI"), cites(E2,E1) => label(E2,"irrelevant")+
// Head variables must occur in the body. Throws ParseError.
RuleSet parse_rules(const std::string& text);

// Canonical text form; parse_rules(format_rules(rs)) == rs.
std::string format_rules(const RuleSet& rs);
std::string format_rule(const PreferenceRule& rule);

// Warnings for feature / relation / label names missing from the graph's
// vocabularies. Unknown names are not errors; they just never match.
std::vector<std::string> validate_against(const RuleSet& rs, const KnowledgeGraph& g);

}  // namespace kcln
