#pragma once
// Static analysis over parsed kernel sources: memory/FLOP counting, dataflow reachability,
// launch-geometry folding, identifier-independent fingerprints and identifier renaming.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "counterlens/kernel_source.hpp"
#include "counterlens/random.hpp"

namespace counterlens::source {

// ---------------------------------------------------------------------------
// Reserved identifiers

inline bool is_cxx_keyword(std::string_view w) {
  static const std::set<std::string_view> kWords = {
      "alignas", "alignof", "and", "asm", "auto", "bool", "break", "case", "catch", "char",
      "char8_t", "char16_t", "char32_t", "class", "concept", "const", "consteval", "constexpr",
      "constinit", "const_cast", "continue", "co_await", "co_return", "co_yield", "decltype",
      "default", "delete", "do", "double", "dynamic_cast", "else", "enum", "explicit", "export",
      "extern", "false", "float", "for", "friend", "goto", "if", "inline", "int", "long",
      "mutable", "namespace", "new", "noexcept", "not", "nullptr", "operator", "or", "private",
      "protected", "public", "register", "reinterpret_cast", "requires", "return", "short",
      "signed", "sizeof", "static", "static_assert", "static_cast", "struct", "switch",
      "template", "this", "thread_local", "throw", "true", "try", "typedef", "typeid",
      "typename", "union", "unsigned", "using", "virtual", "void", "volatile", "wchar_t",
      "while", "xor"};
  return kWords.count(w) > 0;
}

// Keywords, GPU runtime builtins and API names. Never renamed, never produced by renaming.
inline bool is_reserved_identifier(std::string_view w) {
  static const std::set<std::string_view> kBuiltins = {
      "threadIdx", "blockIdx", "blockDim", "gridDim", "warpSize", "dim3", "main", "std",
      "thrust", "size_t", "half", "printf", "malloc", "free", "atomicAdd", "atomicSub",
      "atomicMax", "atomicMin", "atomicExch", "atomicCAS", "atomicAnd", "atomicOr",
      "atomicXor", "sqrt", "sqrtf", "exp", "expf", "log", "logf", "sin", "sinf", "cos", "cosf",
      "fabs", "fabsf", "fma", "fmaf", "pow", "powf", "min", "max"};
  if (is_cxx_keyword(w) || kBuiltins.count(w) > 0) return true;
  return w.rfind("__", 0) == 0 || w.rfind("hip", 0) == 0 || w.rfind("cuda", 0) == 0;
}

// ---------------------------------------------------------------------------
// Value types

enum class Scalar { Unknown, Integer, Bool, Float, Double };

struct ValueType {
  Scalar scalar = Scalar::Unknown;
  int pointer_depth = 0;
  std::size_t element_bytes = 0;  // size of the scalar, also the pointee size for pointers

  bool is_floating() const { return pointer_depth == 0 && (scalar == Scalar::Float || scalar == Scalar::Double); }
};

inline ValueType scalar_type_of(std::string_view base) {
  if (base == "double") return {Scalar::Double, 0, 8};
  if (base == "float") return {Scalar::Float, 0, 4};
  if (base == "half") return {Scalar::Float, 0, 2};
  if (base == "bool") return {Scalar::Bool, 0, 1};
  if (base == "char" || base == "signed char" || base == "unsigned char") return {Scalar::Integer, 0, 1};
  if (base == "short" || base == "unsigned short") return {Scalar::Integer, 0, 2};
  if (base == "int" || base == "unsigned" || base == "unsigned int" || base == "signed" ||
      base == "signed int") {
    return {Scalar::Integer, 0, 4};
  }
  if (base == "long" || base == "long long" || base == "unsigned long" ||
      base == "unsigned long long" || base == "size_t" || base == "std::size_t" ||
      base == "long int" || base == "std::int64_t" || base == "std::uint64_t" ||
      base == "int64_t" || base == "uint64_t") {
    return {Scalar::Integer, 0, 8};
  }
  if (base == "std::int32_t" || base == "std::uint32_t" || base == "int32_t" || base == "uint32_t") {
    return {Scalar::Integer, 0, 4};
  }
  return {};
}

inline ValueType type_of(const TypeSpec& spec, int extra_depth = 0) {
  ValueType t = scalar_type_of(spec.base);
  t.pointer_depth = spec.pointer_depth + extra_depth;
  return t;
}

inline ValueType literal_type(std::string_view lit) {
  const bool hex = lit.size() > 1 && lit[0] == '0' && (lit[1] == 'x' || lit[1] == 'X');
  const bool floating =
      !hex && (lit.find('.') != std::string_view::npos || lit.find('e') != std::string_view::npos ||
               lit.find('E') != std::string_view::npos);
  if (!floating) return {Scalar::Integer, 0, 4};
  const char last = lit.back();
  if (last == 'f' || last == 'F') return {Scalar::Float, 0, 4};
  return {Scalar::Double, 0, 8};
}

inline ValueType promote(const ValueType& a, const ValueType& b) {
  if (a.pointer_depth > 0) return a;
  if (b.pointer_depth > 0) return b;
  auto rank = [](Scalar s) {
    switch (s) {
      case Scalar::Double: return 4;
      case Scalar::Float: return 3;
      case Scalar::Integer: return 2;
      case Scalar::Bool: return 1;
      case Scalar::Unknown: return 0;
    }
    return 0;
  };
  return rank(a.scalar) >= rank(b.scalar) ? a : b;
}

inline bool is_thread_builtin(std::string_view name) {
  return name == "threadIdx" || name == "blockIdx" || name == "blockDim" || name == "gridDim";
}

// ---------------------------------------------------------------------------
// Memory and FLOP counting

struct KernelStats {
  std::string name;
  std::size_t loads = 0;
  std::size_t stores = 0;
  std::size_t flops = 0;
  std::size_t bytes_loaded = 0;
  std::size_t bytes_stored = 0;
  std::size_t statements = 0;
  bool has_loop = false;
  bool has_branch = false;
  Scalar element_type = Scalar::Unknown;  // pointee type of the first floating pointer param
};

// FLOP convention: each floating-point +, -, *, / counts one (so a*b+c counts two);
// compound assignments count their arithmetic. Loads/stores are indexed or dereferenced
// accesses through pointers. Counts are per thread, loop bodies counted once (per iteration).
class KernelCounter {
 public:
  KernelStats run(const Function& fn) {
    stats_ = {};
    stats_.name = fn.name;
    scopes_.assign(1, {});
    for (const auto& p : fn.params) {
      const auto t = type_of(p.type);
      if (!p.name.empty()) declare(p.name, t);
      if (stats_.element_type == Scalar::Unknown && t.pointer_depth == 1 &&
          (t.scalar == Scalar::Float || t.scalar == Scalar::Double)) {
        stats_.element_type = t.scalar;
      }
    }
    statement(fn.body);
    return stats_;
  }

 private:
  KernelStats stats_;
  std::vector<std::map<std::string, ValueType>> scopes_;

  void declare(const std::string& name, ValueType t) { scopes_.back()[name] = t; }

  ValueType lookup(const std::string& name) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      if (auto f = it->find(name); f != it->end()) return f->second;
    }
    return {};
  }

  void statement(const Stmt& s) {
    switch (s.kind) {
      case Stmt::Kind::Block:
        scopes_.emplace_back();
        for (const auto& c : s.body) statement(c);
        scopes_.pop_back();
        return;
      case Stmt::Kind::Decl:
        ++stats_.statements;
        for (const auto& d : s.decls) {
          ValueType init_type;
          for (const auto& e : d.init) init_type = eval(e);
          ValueType t = type_of(s.type, d.extra_pointer_depth);
          if (s.type.base == "auto") {
            t = init_type;
            t.pointer_depth += s.type.pointer_depth;
          }
          declare(d.name, t);
        }
        return;
      case Stmt::Kind::Expr:
      case Stmt::Kind::Return:
        ++stats_.statements;
        for (const auto& e : s.exprs) eval(e);
        return;
      case Stmt::Kind::Launch:
        ++stats_.statements;
        return;
      case Stmt::Kind::If:
        ++stats_.statements;
        stats_.has_branch = true;
        eval(s.exprs[0]);
        for (const auto& c : s.body) statement(c);
        return;
      case Stmt::Kind::While:
        stats_.has_loop = true;
        eval(s.exprs[0]);
        statement(s.body[0]);
        return;
      case Stmt::Kind::For:
        stats_.has_loop = true;
        scopes_.emplace_back();
        statement(s.body[0]);
        for (const auto& e : s.exprs) eval(e);
        statement(s.body[1]);
        scopes_.pop_back();
        return;
      case Stmt::Kind::Jump:
      case Stmt::Kind::Empty:
        return;
    }
  }

  void count_load(const ValueType& pointee) {
    ++stats_.loads;
    stats_.bytes_loaded += pointee.element_bytes;
  }
  void count_store(const ValueType& pointee) {
    ++stats_.stores;
    stats_.bytes_stored += pointee.element_bytes;
  }

  static ValueType pointee(ValueType t) {
    if (t.pointer_depth > 0) --t.pointer_depth;
    return t;
  }

  // Address computation of an lvalue without reading it; returns the accessed element type.
  ValueType access(const Expr& e, bool& through_memory) {
    through_memory = false;
    if (e.kind == Expr::Kind::Index) {
      const auto base = eval(e.children[0]);
      eval(e.children[1]);
      if (base.pointer_depth > 0) through_memory = true;
      return pointee(base);
    }
    if (e.kind == Expr::Kind::Unary && e.op == "*") {
      const auto base = eval(e.children[0]);
      if (base.pointer_depth > 0) through_memory = true;
      return pointee(base);
    }
    if (e.kind == Expr::Kind::Name) return lookup(e.text);
    return eval(e);
  }

  ValueType modify(const Expr& target, bool arithmetic) {
    bool mem = false;
    const auto t = access(target, mem);
    if (mem) {
      count_load(t);
      count_store(t);
    }
    if (arithmetic && t.is_floating()) ++stats_.flops;
    return t;
  }

  static bool is_flop_op(std::string_view op) {
    return op == "+" || op == "-" || op == "*" || op == "/";
  }

  ValueType eval(const Expr& e) {
    switch (e.kind) {
      case Expr::Kind::Name:
        return lookup(e.text);
      case Expr::Kind::Number:
        return literal_type(e.text);
      case Expr::Kind::String:
      case Expr::Kind::Char:
        return {Scalar::Integer, 0, 1};
      case Expr::Kind::Sizeof:
        for (const auto& c : e.children) eval(c);
        return {Scalar::Integer, 0, 8};
      case Expr::Kind::Cast:
        eval(e.children[0]);
        return type_of(e.type);
      case Expr::Kind::Call: {
        ValueType result;
        if (e.children[0].kind != Expr::Kind::Name) eval(e.children[0]);
        for (std::size_t i = 1; i < e.children.size(); ++i) {
          const auto t = eval(e.children[i]);
          if (t.is_floating()) result = promote(result, t);
        }
        return result;
      }
      case Expr::Kind::Index: {
        const auto base = eval(e.children[0]);
        eval(e.children[1]);
        if (base.pointer_depth == 0) return {};
        const auto t = pointee(base);
        count_load(t);
        return t;
      }
      case Expr::Kind::Member:
        if (e.children[0].kind == Expr::Kind::Name && is_thread_builtin(e.children[0].text)) {
          return {Scalar::Integer, 0, 4};
        }
        eval(e.children[0]);
        return {};
      case Expr::Kind::Unary: {
        if (e.op == "&") {
          bool mem = false;
          auto t = access(e.children[0], mem);
          ++t.pointer_depth;
          return t;
        }
        if (e.op == "++" || e.op == "--") return modify(e.children[0], true);
        const auto t = eval(e.children[0]);
        if (e.op == "*") {
          if (t.pointer_depth == 0) return {};
          const auto p = pointee(t);
          count_load(p);
          return p;
        }
        if (e.op == "!") return {Scalar::Bool, 0, 1};
        return t;
      }
      case Expr::Kind::Postfix:
        return modify(e.children[0], true);
      case Expr::Kind::Binary: {
        const auto l = eval(e.children[0]);
        const auto r = eval(e.children[1]);
        if (is_flop_op(e.op)) {
          const auto t = promote(l, r);
          if (t.is_floating()) ++stats_.flops;
          return t;
        }
        if (e.op == "%" || e.op == "<<" || e.op == ">>" || e.op == "&" || e.op == "|" ||
            e.op == "^") {
          return {Scalar::Integer, 0, 4};
        }
        return {Scalar::Bool, 0, 1};
      }
      case Expr::Kind::Assign: {
        const auto r = eval(e.children[1]);
        bool mem = false;
        const auto t = access(e.children[0], mem);
        const bool compound = e.op != "=";
        if (mem) {
          if (compound) count_load(t);
          count_store(t);
        }
        if (compound && is_flop_op(e.op.substr(0, 1)) && promote(t, r).is_floating()) {
          ++stats_.flops;
        }
        return t;
      }
      case Expr::Kind::Conditional: {
        eval(e.children[0]);
        const auto a = eval(e.children[1]);
        const auto b = eval(e.children[2]);
        return promote(a, b);
      }
    }
    return {};
  }

};

inline KernelStats count_kernel(const Function& fn) { return KernelCounter{}.run(fn); }

// ---------------------------------------------------------------------------
// Dataflow: which stores depend on loaded data, which floating values are never stored.

struct DataflowReport {
  std::vector<bool> store_depends_on_load;
  std::vector<std::string> dead_values;

  bool all_stores_depend_on_load() const {
    return std::all_of(store_depends_on_load.begin(), store_depends_on_load.end(),
                       [](bool b) { return b; });
  }
};

class DataflowAnalyzer {
 public:
  DataflowReport run(const Function& fn) {
    for (const auto& p : fn.params) {
      if (!p.name.empty()) types_[p.name] = type_of(p.type);
    }
    statement(fn.body);
    // fixpoint over deps for load dependence
    std::map<std::string, bool> tainted;
    for (const auto& [v, info] : vars_) tainted[v] = info.loads;
    for (bool changed = true; changed;) {
      changed = false;
      for (const auto& [v, info] : vars_) {
        if (tainted[v]) continue;
        for (const auto& d : info.deps) {
          if (tainted.count(d) && tainted[d]) {
            tainted[v] = true;
            changed = true;
            break;
          }
        }
      }
    }
    DataflowReport report;
    std::set<std::string> reached;
    std::vector<std::string> work;
    for (const auto& st : stores_) {
      bool dep = st.loads;
      for (const auto& d : st.deps) {
        if (tainted.count(d) && tainted[d]) dep = true;
        work.push_back(d);
      }
      report.store_depends_on_load.push_back(dep);
    }
    while (!work.empty()) {
      auto v = work.back();
      work.pop_back();
      if (!reached.insert(v).second) continue;
      if (auto it = vars_.find(v); it != vars_.end()) {
        for (const auto& d : it->second.deps) work.push_back(d);
      }
    }
    for (const auto& v : order_) {
      if (types_[v].is_floating() && !reached.count(v)) report.dead_values.push_back(v);
    }
    return report;
  }

 private:
  struct Flow {
    std::set<std::string> deps;
    bool loads = false;
  };
  std::map<std::string, Flow> vars_;
  std::map<std::string, ValueType> types_;
  std::vector<std::string> order_;
  std::vector<Flow> stores_;

  // Value references of an expression; index sub-expressions are addresses, not values.
  void refs(const Expr& e, Flow& out) {
    switch (e.kind) {
      case Expr::Kind::Name:
        if (!is_thread_builtin(e.text)) out.deps.insert(e.text);
        return;
      case Expr::Kind::Index:
        out.loads = true;
        return;
      case Expr::Kind::Unary:
        if (e.op == "*") {
          out.loads = true;
          return;
        }
        break;
      case Expr::Kind::Member:
        return;
      case Expr::Kind::Call:
        for (std::size_t i = 1; i < e.children.size(); ++i) refs(e.children[i], out);
        return;
      default:
        break;
    }
    for (const auto& c : e.children) refs(c, out);
  }

  void assign(const Expr& e) {
    const Expr& lhs = e.children[0];
    Flow f;
    refs(e.children[1], f);
    const bool memory = lhs.kind == Expr::Kind::Index || (lhs.kind == Expr::Kind::Unary && lhs.op == "*");
    if (memory) {
      if (e.op != "=") f.loads = true;
      stores_.push_back(std::move(f));
    } else if (lhs.kind == Expr::Kind::Name) {
      auto& v = vars_[lhs.text];
      v.deps.insert(f.deps.begin(), f.deps.end());
      v.loads = v.loads || f.loads;
    }
  }

  void expression(const Expr& e) {
    if (e.kind == Expr::Kind::Assign) {
      assign(e);
      expression(e.children[1]);
      return;
    }
    for (const auto& c : e.children) expression(c);
  }

  void statement(const Stmt& s) {
    switch (s.kind) {
      case Stmt::Kind::Decl:
        for (const auto& d : s.decls) {
          Flow f;
          for (const auto& e : d.init) refs(e, f);
          ValueType t = type_of(s.type, d.extra_pointer_depth);
          if (s.type.base == "auto") t = infer(d.init);
          types_[d.name] = t;
          vars_[d.name] = std::move(f);
          order_.push_back(d.name);
          for (const auto& e : d.init) expression(e);
        }
        return;
      case Stmt::Kind::Expr:
      case Stmt::Kind::Return:
      case Stmt::Kind::If:
      case Stmt::Kind::While:
      case Stmt::Kind::For:
        for (const auto& e : s.exprs) expression(e);
        for (const auto& c : s.body) statement(c);
        return;
      case Stmt::Kind::Block:
        for (const auto& c : s.body) statement(c);
        return;
      default:
        return;
    }
  }

  ValueType infer(const std::vector<Expr>& init) {
    if (init.empty()) return {};
    // Cheap inference: floating if any referenced value or load is floating.
    ValueType t;
    std::vector<const Expr*> stack{&init.front()};
    while (!stack.empty()) {
      const Expr* e = stack.back();
      stack.pop_back();
      if (e->kind == Expr::Kind::Name) {
        if (auto it = types_.find(e->text); it != types_.end()) {
          auto v = it->second;
          if (v.pointer_depth == 0) t = promote(t, v);
        }
      } else if (e->kind == Expr::Kind::Index) {
        if (e->children[0].kind == Expr::Kind::Name) {
          if (auto it = types_.find(e->children[0].text); it != types_.end()) {
            auto v = it->second;
            if (v.pointer_depth > 0) {
              --v.pointer_depth;
              t = promote(t, v);
            }
          }
        }
        continue;
      } else if (e->kind == Expr::Kind::Number) {
        t = promote(t, literal_type(e->text));
      } else if (e->kind == Expr::Kind::Member) {
        t = promote(t, {Scalar::Integer, 0, 4});
        continue;
      }
      for (const auto& c : e->children) stack.push_back(&c);
    }
    return t;
  }
};

inline DataflowReport analyze_dataflow(const Function& fn) { return DataflowAnalyzer{}.run(fn); }

// ---------------------------------------------------------------------------
// Launch geometry folding

struct LaunchInfo {
  std::string kernel;
  std::string host_function;
  std::optional<long long> grid;
  std::optional<long long> block;
  SourcePos pos;
};

inline std::optional<long long> parse_integer_literal(std::string_view lit) {
  std::string digits;
  for (char c : lit) {
    if (c != '\'') digits += c;
  }
  while (!digits.empty() && (digits.back() == 'u' || digits.back() == 'U' ||
                             digits.back() == 'l' || digits.back() == 'L')) {
    digits.pop_back();
  }
  if (digits.empty()) return std::nullopt;
  int base = 10;
  std::size_t start = 0;
  if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
    base = 16;
    start = 2;
  }
  long long value = 0;
  for (std::size_t i = start; i < digits.size(); ++i) {
    const char c = digits[i];
    int d = -1;
    if (c >= '0' && c <= '9') d = c - '0';
    if (base == 16 && c >= 'a' && c <= 'f') d = c - 'a' + 10;
    if (base == 16 && c >= 'A' && c <= 'F') d = c - 'A' + 10;
    if (d < 0) return std::nullopt;
    value = value * base + d;
  }
  return value;
}

class ConstantFolder {
 public:
  std::map<std::string, long long> values;

  std::optional<long long> eval(const Expr& e) const {
    switch (e.kind) {
      case Expr::Kind::Number:
        if (literal_type(e.text).scalar != Scalar::Integer) return std::nullopt;
        return parse_integer_literal(e.text);
      case Expr::Kind::Name: {
        auto it = values.find(e.text);
        if (it == values.end()) return std::nullopt;
        return it->second;
      }
      case Expr::Kind::Cast:
        return eval(e.children[0]);
      case Expr::Kind::Sizeof: {
        auto t = scalar_type_of(e.type.base);
        if (e.type.pointer_depth > 0) return 8;
        if (t.element_bytes == 0) return std::nullopt;
        return static_cast<long long>(t.element_bytes);
      }
      case Expr::Kind::Unary: {
        auto v = eval(e.children[0]);
        if (!v) return std::nullopt;
        if (e.op == "-") return -*v;
        if (e.op == "+") return *v;
        return std::nullopt;
      }
      case Expr::Kind::Binary: {
        auto l = eval(e.children[0]);
        auto r = eval(e.children[1]);
        if (!l || !r) return std::nullopt;
        if (e.op == "+") return *l + *r;
        if (e.op == "-") return *l - *r;
        if (e.op == "*") return *l * *r;
        if (e.op == "/") return *r == 0 ? std::nullopt : std::optional<long long>(*l / *r);
        if (e.op == "%") return *r == 0 ? std::nullopt : std::optional<long long>(*l % *r);
        if (e.op == "<<") return *l << *r;
        if (e.op == ">>") return *l >> *r;
        return std::nullopt;
      }
      default:
        return std::nullopt;
    }
  }
};

inline void collect_launches(const Stmt& s, ConstantFolder& folder, const std::string& host,
                             std::vector<LaunchInfo>& out) {
  switch (s.kind) {
    case Stmt::Kind::Decl:
      for (const auto& d : s.decls) {
        const auto t = type_of(s.type, d.extra_pointer_depth);
        const bool integral = t.pointer_depth == 0 &&
                              (t.scalar == Scalar::Integer || s.type.base == "auto");
        std::optional<long long> v;
        if (integral && d.init.size() == 1 && d.init_style != InitStyle::None) {
          v = folder.eval(d.init.front());
        }
        if (v) {
          folder.values[d.name] = *v;
        } else {
          folder.values.erase(d.name);
        }
      }
      return;
    case Stmt::Kind::Launch: {
      LaunchInfo info;
      info.kernel = s.name;
      info.host_function = host;
      info.pos = s.pos;
      if (s.launch_config.size() >= 2) {
        info.grid = folder.eval(s.launch_config[0]);
        info.block = folder.eval(s.launch_config[1]);
      }
      out.push_back(std::move(info));
      return;
    }
    case Stmt::Kind::Expr:
      // assignments invalidate folded constants
      for (const auto& e : s.exprs) {
        if (e.kind == Expr::Kind::Assign && e.children[0].kind == Expr::Kind::Name) {
          folder.values.erase(e.children[0].text);
        }
      }
      return;
    default:
      for (const auto& c : s.body) collect_launches(c, folder, host, out);
      return;
  }
}

inline std::vector<LaunchInfo> find_launches(const TranslationUnit& unit) {
  ConstantFolder globals;
  std::vector<LaunchInfo> out;
  for (const auto& g : unit.globals) collect_launches(g, globals, "", out);
  for (const auto& fn : unit.functions) {
    if (fn.is_kernel) continue;
    ConstantFolder folder = globals;
    collect_launches(fn.body, folder, fn.name, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fingerprint: kernel signatures and bodies with declared identifiers replaced by
// positional indices (de Bruijn style), hashed with 64-bit FNV-1a.

class Canonicalizer {
 public:
  std::string run(const TranslationUnit& unit) {
    std::string out;
    for (const auto* k : unit.kernels()) {
      names_.clear();
      out += "K(";
      for (const auto& p : k->params) {
        out += p.type.text() + " " + bind(p.name) + ",";
      }
      out += ")";
      stmt(k->body, out);
      out += ";";
    }
    return out;
  }

 private:
  std::map<std::string, std::string> names_;

  std::string bind(const std::string& name) {
    if (name.empty()) return "_";
    auto id = "%" + std::to_string(names_.size());
    names_[name] = id;
    return id;
  }
  std::string ref(const std::string& name) const {
    auto it = names_.find(name);
    return it == names_.end() ? name : it->second;
  }

  void expr(const Expr& e, std::string& out) {
    switch (e.kind) {
      case Expr::Kind::Name: out += ref(e.text); return;
      case Expr::Kind::Number:
      case Expr::Kind::String:
      case Expr::Kind::Char: out += e.text; return;
      case Expr::Kind::Sizeof:
        out += "sizeof(" + e.text;
        for (const auto& c : e.children) expr(c, out);
        out += ")";
        return;
      case Expr::Kind::Cast:
        out += "cast<" + e.type.text() + ">(";
        expr(e.children[0], out);
        out += ")";
        return;
      case Expr::Kind::Member:
        out += "(";
        expr(e.children[0], out);
        out += e.op + e.text + ")";
        return;
      case Expr::Kind::Unary:
        out += "(" + e.op;
        expr(e.children[0], out);
        out += ")";
        return;
      case Expr::Kind::Postfix:
        out += "(";
        expr(e.children[0], out);
        out += e.op + ")";
        return;
      default: {
        out += "(" + (e.op.empty() ? std::to_string(static_cast<int>(e.kind)) : e.op);
        for (const auto& c : e.children) {
          out += " ";
          expr(c, out);
        }
        out += ")";
        return;
      }
    }
  }

  void stmt(const Stmt& s, std::string& out) {
    out += "{" + std::to_string(static_cast<int>(s.kind));
    if (s.kind == Stmt::Kind::Decl) {
      out += " " + s.type.text();
      for (const auto& d : s.decls) {
        for (const auto& e : d.init) expr(e, out);
        out += " " + std::string(static_cast<std::size_t>(d.extra_pointer_depth), '*') + bind(d.name) +
               std::to_string(static_cast<int>(d.init_style));
      }
    } else {
      if (!s.name.empty()) out += " " + s.name;
      for (const auto& e : s.launch_config) expr(e, out);
      for (const auto& e : s.exprs) {
        out += " ";
        expr(e, out);
      }
      for (const auto& c : s.body) stmt(c, out);
    }
    out += "}";
  }
};

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

inline std::string canonical_form(const TranslationUnit& unit) { return Canonicalizer{}.run(unit); }

inline std::string fingerprint(const TranslationUnit& unit) { return hex64(fnv1a64(canonical_form(unit))); }

// ---------------------------------------------------------------------------
// Renaming

inline void collect_declared(const Stmt& s, std::vector<std::string>& out) {
  if (s.kind == Stmt::Kind::Decl) {
    for (const auto& d : s.decls) out.push_back(d.name);
  }
  for (const auto& c : s.body) collect_declared(c, out);
}

// User-declared variable names (parameters, locals, globals) in first-declaration order.
inline std::vector<std::string> declared_names(const TranslationUnit& unit) {
  std::vector<std::string> all;
  for (const auto& g : unit.globals) collect_declared(g, all);
  for (const auto& fn : unit.functions) {
    for (const auto& p : fn.params) {
      if (!p.name.empty()) all.push_back(p.name);
    }
    collect_declared(fn.body, all);
  }
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& n : all) {
    if (!is_reserved_identifier(n) && seen.insert(n).second) out.push_back(n);
  }
  return out;
}

class RenameMap {
 public:
  RenameMap() = default;

  // Reserved names are skipped; fresh names avoid keywords, reserved names and `avoid`.
  static RenameMap build(const std::vector<std::string>& names, std::uint64_t seed,
                         const std::set<std::string>& avoid) {
    static constexpr std::string_view kLead = "abcdefghijklmnopqrstuvwxyz";
    static constexpr std::string_view kTail = "abcdefghijklmnopqrstuvwxyz0123456789";
    RenameMap map;
    map.seed_ = seed;
    Rng rng(seed);
    std::set<std::string> used(avoid.begin(), avoid.end());
    for (const auto& n : names) {
      if (is_reserved_identifier(n) || map.forward_.count(n)) continue;
      std::string fresh;
      do {
        const std::size_t len = 4 + uniform_below(rng, 6);
        fresh.assign(1, kLead[uniform_below(rng, kLead.size())]);
        for (std::size_t i = 1; i < len; ++i) fresh += kTail[uniform_below(rng, kTail.size())];
      } while (used.count(fresh) || is_reserved_identifier(fresh));
      used.insert(fresh);
      map.forward_[n] = fresh;
      map.order_.push_back(n);
    }
    return map;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return forward_.size(); }

  std::optional<std::string> lookup(const std::string& name) const {
    auto it = forward_.find(name);
    if (it == forward_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::pair<std::string, std::string>> entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& n : order_) out.emplace_back(n, forward_.at(n));
    return out;
  }

 private:
  std::uint64_t seed_ = 0;
  std::map<std::string, std::string> forward_;
  std::vector<std::string> order_;
};

// Rewrites identifier tokens in place, leaving all other bytes untouched. Member names
// (after '.', '->') and qualified parts (around '::') are not variables and are skipped.
inline std::string apply_rename(std::string_view text, const std::vector<Token>& tokens,
                                const RenameMap& map) {
  std::string out;
  std::size_t copied = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.kind != TokenKind::Identifier) continue;
    if (i > 0 && tokens[i - 1].kind == TokenKind::Punct &&
        (tokens[i - 1].text == "." || tokens[i - 1].text == "->" || tokens[i - 1].text == "::")) {
      continue;
    }
    if (i + 1 < tokens.size() && tokens[i + 1].kind == TokenKind::Punct && tokens[i + 1].text == "::") {
      continue;
    }
    auto fresh = map.lookup(t.text);
    if (!fresh) continue;
    out.append(text.substr(copied, t.offset - copied));
    out += *fresh;
    copied = t.offset + t.text.size();
  }
  out.append(text.substr(copied));
  return out;
}

inline std::set<std::string> identifiers_in(const std::vector<Token>& tokens) {
  std::set<std::string> out;
  for (const auto& t : tokens) {
    if (t.kind == TokenKind::Identifier) out.insert(t.text);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Restricted-language validation

struct Diagnostic {
  std::size_t line = 0;
  std::size_t column = 0;
  std::string message;
};

struct ParseReport {
  bool ok = false;
  TranslationUnit unit;
  std::vector<KernelStats> kernels;
  std::vector<LaunchInfo> launches;
  std::vector<Diagnostic> diagnostics;
};

// Diagnostics are data: this never throws on bad input.
inline ParseReport validate_restricted(std::string_view text) {
  ParseReport report;
  try {
    report.unit = parse(text);
  } catch (const ParseError& e) {
    const std::string what = e.what();
    const auto colon = what.find(": ", what.find(':') + 1);
    report.diagnostics.push_back(
        {e.line(), e.column(), colon == std::string::npos ? what : what.substr(colon + 2)});
    return report;
  }
  for (const auto* k : report.unit.kernels()) report.kernels.push_back(count_kernel(*k));
  report.launches = find_launches(report.unit);
  if (report.kernels.empty()) {
    report.diagnostics.push_back({1, 1, "no kernel found"});
    return report;
  }
  report.ok = true;
  return report;
}

}  // namespace counterlens::source
