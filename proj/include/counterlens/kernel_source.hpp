#pragma once
// Lexer and parser for the restricted single-file GPU kernel language: the subset of
// HIP/C++ that the synthetic generator emits and that simple hand-written kernels use
// (declarations, indexed loads/stores, arithmetic, if/for/while, kernel launches).

#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "counterlens/errors.hpp"

namespace counterlens::source {

struct SourcePos {
  std::size_t line = 1;
  std::size_t column = 1;
};

enum class TokenKind { Identifier, Number, String, Char, Punct, Preprocessor, End };

struct Token {
  TokenKind kind = TokenKind::End;
  std::string text;
  SourcePos pos;
  std::size_t offset = 0;  // byte offset into the original text
};

inline bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
inline bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Comments and whitespace are dropped; offsets let callers edit the original text in place.
inline std::vector<Token> tokenize(std::string_view text) {
  static constexpr std::string_view kPuncts[] = {
      "<<<", ">>>", "<<=", ">>=", "...", "->", "::", "++", "--", "<<", ">>", "<=", ">=",
      "==",  "!=",  "&&",  "||",  "+=",  "-=", "*=", "/=", "%=", "&=", "|=", "^="};
  std::vector<Token> out;
  std::size_t i = 0;
  std::size_t line = 1;
  std::size_t line_start = 0;
  bool line_has_token = false;
  auto pos_at = [&](std::size_t at) { return SourcePos{line, at - line_start + 1}; };
  auto fail = [&](std::size_t at, const std::string& msg) {
    throw ParseError(line, at - line_start + 1, msg);
  };
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      ++i;
      ++line;
      line_start = i;
      line_has_token = false;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < text.size() && text[i + 1] == '*') {
      const std::size_t start = i;
      i += 2;
      while (i + 1 < text.size() && !(text[i] == '*' && text[i + 1] == '/')) {
        if (text[i] == '\n') {
          ++line;
          line_start = i + 1;
        }
        ++i;
      }
      if (i + 1 >= text.size()) fail(start, "unterminated comment");
      i += 2;
      continue;
    }
    Token tok;
    tok.pos = pos_at(i);
    tok.offset = i;
    if (c == '#' && !line_has_token) {
      std::size_t j = i;
      while (j < text.size() && text[j] != '\n') {
        if (text[j] == '\\' && j + 1 < text.size() && text[j + 1] == '\n') {
          j += 2;
          ++line;
          line_start = j;
          continue;
        }
        ++j;
      }
      tok.kind = TokenKind::Preprocessor;
      tok.text = std::string(text.substr(i, j - i));
      out.push_back(std::move(tok));
      i = j;
      continue;
    }
    line_has_token = true;
    if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      tok.kind = TokenKind::Identifier;
      tok.text = std::string(text.substr(i, j - i));
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < text.size() &&
                std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      std::size_t j = i;
      const bool hex = c == '0' && j + 1 < text.size() && (text[j + 1] == 'x' || text[j + 1] == 'X');
      while (j < text.size()) {
        const char d = text[j];
        if (is_ident_char(d) || d == '.' || d == '\'') {
          ++j;
        } else if ((d == '+' || d == '-') && !hex && (text[j - 1] == 'e' || text[j - 1] == 'E')) {
          ++j;
        } else {
          break;
        }
      }
      tok.kind = TokenKind::Number;
      tok.text = std::string(text.substr(i, j - i));
      i = j;
    } else if (c == '"' || c == '\'') {
      std::size_t j = i + 1;
      while (j < text.size() && text[j] != c) {
        if (text[j] == '\\') ++j;
        if (j < text.size() && text[j] == '\n') fail(i, "newline in literal");
        ++j;
      }
      if (j >= text.size()) fail(i, "unterminated literal");
      tok.kind = c == '"' ? TokenKind::String : TokenKind::Char;
      tok.text = std::string(text.substr(i, j + 1 - i));
      i = j + 1;
    } else {
      tok.kind = TokenKind::Punct;
      for (auto p : kPuncts) {
        if (text.substr(i, p.size()) == p) {
          tok.text = std::string(p);
          break;
        }
      }
      if (tok.text.empty()) {
        static constexpr std::string_view kSingles = "{}()[];,.<>=+-*/%!~&|^?:";
        if (kSingles.find(c) == std::string_view::npos) {
          fail(i, std::string("unexpected character '") + c + "'");
        }
        tok.text = std::string(1, c);
      }
      i += tok.text.size();
    }
    out.push_back(std::move(tok));
  }
  Token end;
  end.kind = TokenKind::End;
  end.pos = pos_at(i);
  end.offset = text.size();
  out.push_back(std::move(end));
  return out;
}

// ---------------------------------------------------------------------------
// AST

struct TypeSpec {
  std::string base;  // "double", "std::size_t", "thrust::device_vector<double>", "auto"
  bool is_const = false;
  int pointer_depth = 0;
  bool reference = false;

  std::string text() const {
    std::string s = (is_const ? "const " : "") + base;
    if (pointer_depth > 0) s += std::string(static_cast<std::size_t>(pointer_depth), '*');
    if (reference) s += "&";
    return s;
  }
};

struct Expr {
  enum class Kind {
    Name,         // text = possibly qualified identifier
    Number,       // text = literal
    String,       // text = literal(s)
    Char,
    Call,         // children[0] = callee, rest = args
    Index,        // children = {base, index}
    Member,       // children = {base}, text = member, arrow flag in op
    Unary,        // op, children = {operand}
    Postfix,      // op, children = {operand}
    Binary,       // op, children = {lhs, rhs}
    Assign,       // op ("=", "+=", ...), children = {lhs, rhs}
    Conditional,  // children = {cond, a, b}
    Sizeof,       // text = type text
    Cast,         // type, children = {operand}
  };

  Kind kind = Kind::Name;
  std::string text;
  std::string op;
  TypeSpec type;
  std::vector<Expr> children;
  SourcePos pos;
};

enum class InitStyle { None, Equals, Paren, Brace };

struct Declarator {
  std::string name;
  int extra_pointer_depth = 0;
  InitStyle init_style = InitStyle::None;
  std::vector<Expr> init;
  SourcePos pos;
};

struct Stmt {
  enum class Kind { Decl, Expr, Launch, If, For, While, Block, Return, Jump, Empty };

  Kind kind = Kind::Empty;
  SourcePos pos;
  TypeSpec type;                   // Decl
  std::vector<Declarator> decls;   // Decl
  std::vector<Expr> exprs;         // Expr: {e}; If/While: {cond}; For: {cond?, step?}; Return: {e?}
  std::vector<Expr> launch_config; // Launch
  std::string name;                // Launch: kernel name; Jump: keyword
  std::vector<Stmt> body;          // Block: stmts; If: {then, else?}; For: {init, body}; While: {body}
  bool has_cond = false;           // For
  bool has_step = false;           // For
};

struct Param {
  TypeSpec type;
  std::string name;  // may be empty
  SourcePos pos;
};

struct Function {
  bool is_kernel = false;
  TypeSpec return_type;
  std::string name;
  std::vector<Param> params;
  Stmt body;  // Block
  SourcePos pos;
};

struct TranslationUnit {
  std::vector<std::string> directives;
  std::vector<Stmt> globals;
  std::vector<Function> functions;

  std::vector<const Function*> kernels() const {
    std::vector<const Function*> out;
    for (const auto& f : functions) {
      if (f.is_kernel) out.push_back(&f);
    }
    return out;
  }

  const Function* find_function(std::string_view name) const {
    for (const auto& f : functions) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  TranslationUnit parse_unit() {
    TranslationUnit unit;
    while (!at_end()) {
      if (peek().kind == TokenKind::Preprocessor) {
        unit.directives.push_back(next().text);
        continue;
      }
      if (is_word("using") || is_word("typedef")) {
        while (!at_end() && !is_punct(";")) next();
        expect(";");
        continue;
      }
      if (is_punct(";")) {
        next();
        continue;
      }
      parse_top_level(unit);
    }
    return unit;
  }

 private:
  std::vector<Token> toks_;
  std::size_t cur_ = 0;

  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t at = std::min(cur_ + ahead, toks_.size() - 1);
    return toks_[at];
  }
  const Token& next() {
    const Token& t = toks_[cur_];
    if (cur_ + 1 < toks_.size()) ++cur_;
    return t;
  }
  bool at_end() const { return peek().kind == TokenKind::End; }
  bool is_punct(std::string_view p, std::size_t ahead = 0) const {
    return peek(ahead).kind == TokenKind::Punct && peek(ahead).text == p;
  }
  bool is_word(std::string_view w, std::size_t ahead = 0) const {
    return peek(ahead).kind == TokenKind::Identifier && peek(ahead).text == w;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(peek().pos.line, peek().pos.column, msg);
  }
  void expect(std::string_view p) {
    if (!is_punct(p)) {
      fail("expected '" + std::string(p) + "' but found '" +
           (at_end() ? std::string("end of input") : peek().text) + "'");
    }
    next();
  }
  std::string expect_identifier() {
    if (peek().kind != TokenKind::Identifier) fail("expected identifier");
    return next().text;
  }

  static bool is_qualifier(std::string_view w) {
    return w == "const" || w == "volatile" || w == "static" || w == "constexpr" ||
           w == "inline" || w == "extern" || w == "__restrict__" || w == "__shared__" ||
           w == "__device__" || w == "__host__" || w == "__constant__";
  }
  static bool is_builtin_type_word(std::string_view w) {
    return w == "void" || w == "bool" || w == "char" || w == "short" || w == "int" ||
           w == "long" || w == "float" || w == "double" || w == "unsigned" || w == "signed" ||
           w == "auto" || w == "size_t" || w == "half";
  }
  static bool is_statement_keyword(std::string_view w) {
    return w == "if" || w == "else" || w == "for" || w == "while" || w == "return" ||
           w == "break" || w == "continue" || w == "do" || w == "switch" || w == "sizeof" ||
           w == "true" || w == "false" || w == "nullptr" || w == "new" || w == "delete" ||
           w == "static_cast" || w == "reinterpret_cast" || w == "const_cast" ||
           w == "this" || w == "throw";
  }

  // Qualified identifier: [::] a :: b :: c
  std::optional<std::string> try_qualified_name() {
    const std::size_t save = cur_;
    std::string name;
    if (is_punct("::")) {
      next();
      name = "::";
    }
    if (peek().kind != TokenKind::Identifier) {
      cur_ = save;
      return std::nullopt;
    }
    name += next().text;
    while (is_punct("::") && peek(1).kind == TokenKind::Identifier) {
      next();
      name += "::" + next().text;
    }
    return name;
  }

  // Splits a '>>' closing two template lists.
  bool consume_template_close() {
    if (is_punct(">")) {
      next();
      return true;
    }
    if (is_punct(">>")) {
      toks_[cur_].text = ">";
      toks_[cur_].pos.column += 1;
      toks_[cur_].offset += 1;
      return true;
    }
    return false;
  }

  std::optional<std::string> try_template_args() {
    const std::size_t save = cur_;
    if (!is_punct("<")) return std::string{};
    next();
    std::string args = "<";
    bool first = true;
    while (true) {
      if (!first) args += ", ";
      first = false;
      if (peek().kind == TokenKind::Number) {
        args += next().text;
      } else if (auto t = try_type()) {
        args += t->text();
      } else {
        cur_ = save;
        return std::nullopt;
      }
      if (is_punct(",")) {
        next();
        continue;
      }
      if (consume_template_close()) break;
      cur_ = save;
      return std::nullopt;
    }
    return args + ">";
  }

  std::optional<TypeSpec> try_type() {
    const std::size_t save = cur_;
    TypeSpec t;
    while (peek().kind == TokenKind::Identifier && is_qualifier(peek().text)) {
      if (next().text == "const") t.is_const = true;
    }
    std::string base;
    if (peek().kind == TokenKind::Identifier && is_builtin_type_word(peek().text)) {
      while (peek().kind == TokenKind::Identifier && is_builtin_type_word(peek().text)) {
        if (!base.empty()) base += " ";
        base += next().text;
      }
    } else if (peek().kind == TokenKind::Identifier && is_statement_keyword(peek().text)) {
      cur_ = save;
      return std::nullopt;
    } else if (auto name = try_qualified_name()) {
      base = *name;
      auto args = try_template_args();
      if (!args) {
        cur_ = save;
        return std::nullopt;
      }
      base += *args;
    } else {
      cur_ = save;
      return std::nullopt;
    }
    t.base = base;
    while (true) {
      if (is_punct("*")) {
        next();
        ++t.pointer_depth;
      } else if (is_punct("&") || is_punct("&&")) {
        next();
        t.reference = true;
      } else if (peek().kind == TokenKind::Identifier &&
                 (peek().text == "const" || peek().text == "__restrict__" ||
                  peek().text == "volatile")) {
        next();
      } else {
        break;
      }
    }
    return t;
  }

  void parse_top_level(TranslationUnit& unit) {
    const SourcePos pos = peek().pos;
    bool kernel = false;
    while (peek().kind == TokenKind::Identifier &&
           (peek().text == "__global__" || peek().text == "__device__" ||
            peek().text == "__host__" || peek().text == "static" || peek().text == "inline" ||
            peek().text == "extern")) {
      if (next().text == "__global__") kernel = true;
    }
    const std::size_t type_start = cur_;
    auto type = try_type();
    if (!type) fail("expected declaration");
    if (peek().kind == TokenKind::Identifier && is_punct("(", 1)) {
      Function fn;
      fn.is_kernel = kernel;
      fn.return_type = *type;
      fn.pos = pos;
      fn.name = next().text;
      fn.params = parse_params();
      if (is_punct(";")) {
        next();  // prototype
        return;
      }
      fn.body = parse_block();
      unit.functions.push_back(std::move(fn));
      return;
    }
    if (kernel) fail("expected kernel function definition");
    cur_ = type_start;
    unit.globals.push_back(parse_declaration_statement());
  }

  std::vector<Param> parse_params() {
    expect("(");
    std::vector<Param> params;
    if (is_punct(")")) {
      next();
      return params;
    }
    if (is_word("void") && is_punct(")", 1)) {
      next();
      next();
      return params;
    }
    while (true) {
      Param p;
      p.pos = peek().pos;
      auto t = try_type();
      if (!t) fail("expected parameter type");
      p.type = *t;
      if (peek().kind == TokenKind::Identifier) p.name = next().text;
      if (is_punct("[")) {
        next();
        expect("]");
        ++p.type.pointer_depth;
      }
      params.push_back(std::move(p));
      if (is_punct(",")) {
        next();
        continue;
      }
      expect(")");
      return params;
    }
  }

  Stmt parse_block() {
    Stmt block;
    block.kind = Stmt::Kind::Block;
    block.pos = peek().pos;
    expect("{");
    while (!is_punct("}")) {
      if (at_end()) fail("unterminated block");
      block.body.push_back(parse_statement());
    }
    next();
    return block;
  }

  bool looks_like_declaration() {
    const std::size_t save = cur_;
    bool result = false;
    if (auto t = try_type()) {
      if (peek().kind == TokenKind::Identifier && !is_statement_keyword(peek().text)) {
        const auto& after = peek(1);
        result = after.kind == TokenKind::Punct &&
                 (after.text == "=" || after.text == "(" || after.text == "{" ||
                  after.text == ";" || after.text == "," || after.text == "[");
      }
    }
    cur_ = save;
    return result;
  }

  Stmt parse_declaration_statement(bool require_semicolon = true) {
    Stmt s;
    s.kind = Stmt::Kind::Decl;
    s.pos = peek().pos;
    auto t = try_type();
    if (!t) fail("expected type");
    s.type = *t;
    while (true) {
      Declarator d;
      while (is_punct("*")) {
        next();
        ++d.extra_pointer_depth;
      }
      d.pos = peek().pos;
      d.name = expect_identifier();
      while (is_punct("[")) {
        next();
        if (!is_punct("]")) d.init.push_back(parse_expression());
        expect("]");
        ++d.extra_pointer_depth;
      }
      if (is_punct("=")) {
        next();
        d.init_style = InitStyle::Equals;
        d.init.push_back(parse_assignment());
      } else if (is_punct("(")) {
        next();
        d.init_style = InitStyle::Paren;
        d.init = parse_expression_list(")");
      } else if (is_punct("{")) {
        next();
        d.init_style = InitStyle::Brace;
        d.init = parse_expression_list("}");
      }
      s.decls.push_back(std::move(d));
      if (is_punct(",")) {
        next();
        continue;
      }
      break;
    }
    if (require_semicolon) expect(";");
    return s;
  }

  std::vector<Expr> parse_expression_list(std::string_view close) {
    std::vector<Expr> items;
    if (is_punct(close)) {
      next();
      return items;
    }
    while (true) {
      items.push_back(parse_assignment());
      if (is_punct(",")) {
        next();
        continue;
      }
      expect(close);
      return items;
    }
  }

  Stmt parse_statement() {
    Stmt s;
    s.pos = peek().pos;
    if (is_punct("{")) return parse_block();
    if (is_punct(";")) {
      next();
      s.kind = Stmt::Kind::Empty;
      return s;
    }
    if (is_word("if")) {
      next();
      s.kind = Stmt::Kind::If;
      expect("(");
      s.exprs.push_back(parse_expression());
      expect(")");
      s.body.push_back(parse_statement());
      if (is_word("else")) {
        next();
        s.body.push_back(parse_statement());
      }
      return s;
    }
    if (is_word("while")) {
      next();
      s.kind = Stmt::Kind::While;
      expect("(");
      s.exprs.push_back(parse_expression());
      expect(")");
      s.body.push_back(parse_statement());
      return s;
    }
    if (is_word("for")) {
      next();
      s.kind = Stmt::Kind::For;
      expect("(");
      Stmt init;
      init.pos = peek().pos;
      if (is_punct(";")) {
        init.kind = Stmt::Kind::Empty;
      } else if (looks_like_declaration()) {
        init = parse_declaration_statement(false);
      } else {
        init.kind = Stmt::Kind::Expr;
        init.exprs.push_back(parse_expression());
      }
      expect(";");
      if (!is_punct(";")) {
        s.exprs.push_back(parse_expression());
        s.has_cond = true;
      }
      expect(";");
      if (!is_punct(")")) {
        s.exprs.push_back(parse_expression());
        s.has_step = true;
      }
      expect(")");
      s.body.push_back(std::move(init));
      s.body.push_back(parse_statement());
      return s;
    }
    if (is_word("return")) {
      next();
      s.kind = Stmt::Kind::Return;
      if (!is_punct(";")) s.exprs.push_back(parse_expression());
      expect(";");
      return s;
    }
    if (is_word("break") || is_word("continue")) {
      s.kind = Stmt::Kind::Jump;
      s.name = next().text;
      expect(";");
      return s;
    }
    if (peek().kind == TokenKind::Identifier && is_punct("<<<", 1)) {
      s.kind = Stmt::Kind::Launch;
      s.name = next().text;
      next();
      while (true) {
        s.launch_config.push_back(parse_conditional());
        if (is_punct(",")) {
          next();
          continue;
        }
        expect(">>>");
        break;
      }
      expect("(");
      s.exprs = parse_expression_list(")");
      expect(";");
      return s;
    }
    if (looks_like_declaration()) return parse_declaration_statement();
    s.kind = Stmt::Kind::Expr;
    s.exprs.push_back(parse_expression());
    expect(";");
    return s;
  }

  // --- expressions -------------------------------------------------------

  Expr parse_expression() { return parse_assignment(); }

  static bool is_assign_op(std::string_view op) {
    return op == "=" || op == "+=" || op == "-=" || op == "*=" || op == "/=" || op == "%=" ||
           op == "<<=" || op == ">>=" || op == "&=" || op == "|=" || op == "^=";
  }

  Expr parse_assignment() {
    Expr lhs = parse_conditional();
    if (peek().kind == TokenKind::Punct && is_assign_op(peek().text)) {
      Expr e;
      e.kind = Expr::Kind::Assign;
      e.pos = peek().pos;
      e.op = next().text;
      e.children.push_back(std::move(lhs));
      e.children.push_back(parse_assignment());
      return e;
    }
    return lhs;
  }

  Expr parse_conditional() {
    Expr cond = parse_binary(0);
    if (is_punct("?")) {
      Expr e;
      e.kind = Expr::Kind::Conditional;
      e.pos = next().pos;
      e.children.push_back(std::move(cond));
      e.children.push_back(parse_assignment());
      expect(":");
      e.children.push_back(parse_assignment());
      return e;
    }
    return cond;
  }

  static int binary_precedence(std::string_view op) {
    if (op == "||") return 1;
    if (op == "&&") return 2;
    if (op == "|") return 3;
    if (op == "^") return 4;
    if (op == "&") return 5;
    if (op == "==" || op == "!=") return 6;
    if (op == "<" || op == ">" || op == "<=" || op == ">=") return 7;
    if (op == "<<" || op == ">>") return 8;
    if (op == "+" || op == "-") return 9;
    if (op == "*" || op == "/" || op == "%") return 10;
    return -1;
  }

  Expr parse_binary(int min_prec) {
    Expr lhs = parse_unary();
    while (peek().kind == TokenKind::Punct) {
      const int prec = binary_precedence(peek().text);
      if (prec < 0 || prec < min_prec) break;
      Expr e;
      e.kind = Expr::Kind::Binary;
      e.pos = peek().pos;
      e.op = next().text;
      e.children.push_back(std::move(lhs));
      e.children.push_back(parse_binary(prec + 1));
      lhs = std::move(e);
    }
    return lhs;
  }

  Expr parse_unary() {
    if (peek().kind == TokenKind::Punct) {
      const auto& op = peek().text;
      if (op == "-" || op == "+" || op == "!" || op == "~" || op == "*" || op == "&" ||
          op == "++" || op == "--") {
        Expr e;
        e.kind = Expr::Kind::Unary;
        e.pos = peek().pos;
        e.op = next().text;
        e.children.push_back(parse_unary());
        return e;
      }
      if (op == "(") {
        // C-style cast to a builtin type
        const std::size_t save = cur_;
        next();
        if (peek().kind == TokenKind::Identifier && is_builtin_type_word(peek().text) &&
            peek().text != "auto") {
          if (auto t = try_type(); t && is_punct(")")) {
            Expr e;
            e.kind = Expr::Kind::Cast;
            e.pos = toks_[save].pos;
            next();
            e.type = *t;
            e.children.push_back(parse_unary());
            return e;
          }
        }
        cur_ = save;
      }
    }
    if (is_word("sizeof")) {
      Expr e;
      e.kind = Expr::Kind::Sizeof;
      e.pos = next().pos;
      if (is_punct("(")) {
        const std::size_t save = cur_;
        next();
        if (auto t = try_type(); t && is_punct(")")) {
          next();
          e.type = *t;
          e.text = t->text();
          return e;
        }
        cur_ = save;
      }
      e.children.push_back(parse_unary());
      return e;
    }
    return parse_postfix(parse_primary());
  }

  Expr parse_postfix(Expr base) {
    while (true) {
      if (is_punct("[")) {
        Expr e;
        e.kind = Expr::Kind::Index;
        e.pos = next().pos;
        e.children.push_back(std::move(base));
        e.children.push_back(parse_expression());
        expect("]");
        base = std::move(e);
      } else if (is_punct("(")) {
        Expr e;
        e.kind = Expr::Kind::Call;
        e.pos = next().pos;
        e.children.push_back(std::move(base));
        for (auto& a : parse_expression_list(")")) e.children.push_back(std::move(a));
        base = std::move(e);
      } else if (is_punct(".") || is_punct("->")) {
        Expr e;
        e.kind = Expr::Kind::Member;
        e.pos = peek().pos;
        e.op = next().text;
        e.text = expect_identifier();
        e.children.push_back(std::move(base));
        base = std::move(e);
      } else if (is_punct("++") || is_punct("--")) {
        Expr e;
        e.kind = Expr::Kind::Postfix;
        e.pos = peek().pos;
        e.op = next().text;
        e.children.push_back(std::move(base));
        base = std::move(e);
      } else {
        return base;
      }
    }
  }

  Expr parse_primary() {
    Expr e;
    e.pos = peek().pos;
    const Token& t = peek();
    if (t.kind == TokenKind::Number) {
      e.kind = Expr::Kind::Number;
      e.text = next().text;
      return e;
    }
    if (t.kind == TokenKind::String) {
      e.kind = Expr::Kind::String;
      e.text = next().text;
      while (peek().kind == TokenKind::String) e.text += next().text;
      return e;
    }
    if (t.kind == TokenKind::Char) {
      e.kind = Expr::Kind::Char;
      e.text = next().text;
      return e;
    }
    if (is_punct("(")) {
      next();
      Expr inner = parse_expression();
      expect(")");
      return inner;
    }
    if (t.kind == TokenKind::Identifier &&
        (t.text == "static_cast" || t.text == "reinterpret_cast" || t.text == "const_cast")) {
      next();
      expect("<");
      auto type = try_type();
      if (!type) fail("expected cast target type");
      if (!consume_template_close()) fail("expected '>'");
      expect("(");
      e.kind = Expr::Kind::Cast;
      e.type = *type;
      e.children.push_back(parse_expression());
      expect(")");
      return e;
    }
    if (t.kind == TokenKind::Identifier || is_punct("::")) {
      if (t.kind == TokenKind::Identifier && is_statement_keyword(t.text) && t.text != "true" &&
          t.text != "false" && t.text != "nullptr" && t.text != "this") {
        fail("unexpected keyword '" + t.text + "'");
      }
      auto name = try_qualified_name();
      if (!name) fail("expected expression");
      e.kind = Expr::Kind::Name;
      e.text = *name;
      return e;
    }
    fail(at_end() ? "unexpected end of input" : "unexpected token '" + t.text + "'");
  }
};

inline TranslationUnit parse(std::string_view text) {
  Parser p(tokenize(text));
  return p.parse_unit();
}

}  // namespace counterlens::source
