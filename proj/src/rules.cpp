#include "kcln/rules.hpp"

#include <cctype>
#include <set>
#include <sstream>

namespace kcln {

namespace {

struct Token {
  enum class Kind { ident, variable, string, punct, end };
  Kind kind = Kind::end;
  std::string text;
  int column = 0;
};

class Lexer {
 public:
  Lexer(const std::string& line, int lineno) : s_(line), lineno_(lineno) { advance(); }

  const Token& peek() const { return tok_; }

  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

  [[noreturn]] void error(const std::string& what, int col) const {
    throw ParseError(lineno_, col, what);
  }

 private:
  void advance() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    tok_.column = static_cast<int>(pos_) + 1;
    if (pos_ >= s_.size() || s_[pos_] == '#') {
      tok_.kind = Token::Kind::end;
      tok_.text.clear();
      return;
    }
    char c = s_[pos_];
    if (c == '"') {
      size_t end = s_.find('"', pos_ + 1);
      if (end == std::string::npos) error("unterminated string", tok_.column);
      tok_.kind = Token::Kind::string;
      tok_.text = s_.substr(pos_ + 1, end - pos_ - 1);
      pos_ = end + 1;
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      size_t end = pos_;
      while (end < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '_'))
        ++end;
      tok_.kind = std::isupper(static_cast<unsigned char>(c)) ? Token::Kind::variable
                                                              : Token::Kind::ident;
      tok_.text = s_.substr(pos_, end - pos_);
      pos_ = end;
      return;
    }
    if (c == '=' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '>') {
      tok_.kind = Token::Kind::punct;
      tok_.text = "=>";
      pos_ += 2;
      return;
    }
    static const std::string puncts = "(),;+-";
    if (puncts.find(c) != std::string::npos) {
      tok_.kind = Token::Kind::punct;
      tok_.text = std::string(1, c);
      ++pos_;
      return;
    }
    error(std::string("unexpected character '") + c + "'", tok_.column);
  }

  const std::string& s_;
  size_t pos_ = 0;
  int lineno_;
  Token tok_;
};

class RuleParser {
 public:
  RuleParser(const std::string& line, int lineno) : lex_(line, lineno), lineno_(lineno) {}

  PreferenceRule parse() {
    PreferenceRule rule;
    rule.source_line = lineno_;
    rule.body.push_back(parse_literal());
    while (accept_punct(",")) rule.body.push_back(parse_literal());
    expect_punct("=>");
    rule.head.push_back(parse_pref());
    while (accept_punct(";")) rule.head.push_back(parse_pref());
    if (lex_.peek().kind != Token::Kind::end)
      lex_.error("trailing input after rule", lex_.peek().column);
    check_range_restriction(rule);
    return rule;
  }

 private:
  BodyLiteral parse_literal() {
    Token name = expect(Token::Kind::ident, "literal name");
    expect_punct("(");
    Term first = parse_term();
    expect_punct(",");
    BodyLiteral lit;
    if (lex_.peek().kind == Token::Kind::string) {
      Token second = lex_.next();
      lit.kind = BodyLiteral::Kind::attribute;
      lit.entity = first;
      lit.feature_name = second.text;
      if (lit.feature_name.empty()) lex_.error("empty feature name", second.column);
    } else {
      lit.kind = BodyLiteral::Kind::relation;
      lit.relation_name = name.text;
      lit.src = first;
      lit.dst = parse_term();
    }
    expect_punct(")");
    return lit;
  }

  LabelPreference parse_pref() {
    Token name = expect(Token::Kind::ident, "'label'");
    if (name.text != "label")
      lex_.error("head atoms must be label(...), got '" + name.text + "'", name.column);
    expect_punct("(");
    LabelPreference pref;
    pref.entity = parse_term();
    expect_punct(",");
    Token label = expect(Token::Kind::string, "quoted label name");
    if (label.text.empty()) lex_.error("empty label name", label.column);
    pref.label_name = label.text;
    expect_punct(")");
    Token pol = lex_.next();
    if (pol.kind != Token::Kind::punct || (pol.text != "+" && pol.text != "-"))
      lex_.error("expected polarity '+' or '-' after label atom", pol.column);
    pref.polarity = pol.text == "+" ? Polarity::preferred : Polarity::non_preferred;
    return pref;
  }

  Term parse_term() {
    Token t = lex_.next();
    if (t.kind == Token::Kind::variable) return Term::variable(t.text);
    if (t.kind == Token::Kind::ident) {
      // entity constants are spelled e<id>
      if (t.text.size() >= 2 && t.text[0] == 'e' &&
          t.text.find_first_not_of("0123456789", 1) == std::string::npos)
        return Term::constant_id(static_cast<EntityId>(std::stol(t.text.substr(1))));
      lex_.error("entity constants must look like e<number>, got '" + t.text + "'",
                 t.column);
    }
    lex_.error("expected a term (variable or e<number>)", t.column);
  }

  void check_range_restriction(const PreferenceRule& rule) {
    std::set<std::string> body_vars;
    for (const auto& lit : rule.body) {
      if (lit.kind == BodyLiteral::Kind::attribute) {
        if (lit.entity.is_variable) body_vars.insert(lit.entity.var_name);
      } else {
        if (lit.src.is_variable) body_vars.insert(lit.src.var_name);
        if (lit.dst.is_variable) body_vars.insert(lit.dst.var_name);
      }
    }
    for (const auto& pref : rule.head)
      if (pref.entity.is_variable && !body_vars.count(pref.entity.var_name))
        throw ParseError(lineno_, 1,
                         "head variable '" + pref.entity.var_name +
                             "' does not occur in the rule body");
  }

  Token expect(Token::Kind kind, const std::string& what) {
    Token t = lex_.next();
    if (t.kind != kind) lex_.error("expected " + what, t.column);
    return t;
  }

  void expect_punct(const std::string& p) {
    Token t = lex_.next();
    if (t.kind != Token::Kind::punct || t.text != p)
      lex_.error("expected '" + p + "'", t.column);
  }

  bool accept_punct(const std::string& p) {
    if (lex_.peek().kind == Token::Kind::punct && lex_.peek().text == p) {
      lex_.next();
      return true;
    }
    return false;
  }

  Lexer lex_;
  int lineno_;
};

bool blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

void format_term(std::ostream& os, const Term& t) {
  if (t.is_variable)
    os << t.var_name;
  else
    os << 'e' << t.constant;
}

}  // namespace

RuleSet parse_rules(const std::string& text) {
  RuleSet rs;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (blank_or_comment(line)) continue;
    rs.rules.push_back(RuleParser(line, lineno).parse());
  }
  return rs;
}

std::string format_rule(const PreferenceRule& rule) {
  std::ostringstream os;
  for (size_t i = 0; i < rule.body.size(); ++i) {
    if (i) os << ", ";
    const auto& lit = rule.body[i];
    if (lit.kind == BodyLiteral::Kind::attribute) {
      os << "attr(";
      format_term(os, lit.entity);
      os << ",\"" << lit.feature_name << "\")";
    } else {
      os << lit.relation_name << '(';
      format_term(os, lit.src);
      os << ',';
      format_term(os, lit.dst);
      os << ')';
    }
  }
  os << " => ";
  for (size_t i = 0; i < rule.head.size(); ++i) {
    if (i) os << "; ";
    const auto& pref = rule.head[i];
    os << "label(";
    format_term(os, pref.entity);
    os << ",\"" << pref.label_name << "\")"
       << (pref.polarity == Polarity::preferred ? '+' : '-');
  }
  return os.str();
}

std::string format_rules(const RuleSet& rs) {
  std::string out;
  for (const auto& rule : rs.rules) {
    out += format_rule(rule);
    out += '\n';
  }
  return out;
}

std::vector<std::string> validate_against(const RuleSet& rs, const KnowledgeGraph& g) {
  std::vector<std::string> warnings;
  std::set<std::string> reported;
  auto warn = [&](const std::string& msg) {
    if (reported.insert(msg).second) warnings.push_back(msg);
  };
  for (const auto& rule : rs.rules) {
    for (const auto& lit : rule.body) {
      if (lit.kind == BodyLiteral::Kind::attribute) {
        if (g.feature_index(lit.feature_name) < 0)
          warn("unknown feature '" + lit.feature_name + "' (rule at line " +
               std::to_string(rule.source_line) + ")");
      } else if (g.relation_index(lit.relation_name) < 0) {
        warn("unknown relation '" + lit.relation_name + "' (rule at line " +
             std::to_string(rule.source_line) + ")");
      }
    }
    for (const auto& pref : rule.head)
      if (g.label_index(pref.label_name) < 0)
        warn("unknown label '" + pref.label_name + "' (rule at line " +
             std::to_string(rule.source_line) + ")");
  }
  return warnings;
}

}  // namespace kcln
