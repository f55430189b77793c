#include "tplprog/ir.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "tplprog/errors.hpp"

namespace tplprog {
namespace {

enum class TreeRole { Template, Expansion, Program };

// Shared validation for the three tree kinds. Hole slots must appear as
// 0..k-1 in pre-order; shared variables bind a single parameter type.
struct Validator {
  const Grammar& g;
  TreeRole role;
  int holes = 0;
  int free = 0;
  std::array<int, kMaxSharedVars> var_type{-1, -1, -1, -1};

  void node(const Expr& e, int category) {
    if (e.isHole()) {
      if (role != TreeRole::Template) throw TypeError("hole in a hole-free tree");
      if (!g.options().holes) throw TypeError("holes are disabled for this grammar");
      if (e.hole != holes) throw TypeError("hole slots must be numbered 0..k-1 in pre-order");
      if (++holes > kMaxHoles) throw CapError("more than 5 holes");
      if (!e.args.empty() || !e.children.empty()) throw TypeError("hole with arguments");
      return;
    }
    if (e.fn >= g.functionCount()) throw TypeError("unknown function id");
    const auto& sig = g.function(e.fn);
    if (sig.category != category)
      throw TypeError(sig.symbol + " cannot appear where " + g.categories()[static_cast<std::size_t>(category)] +
                      " is expected");
    if (static_cast<int>(e.args.size()) != sig.paramCount()) throw TypeError("wrong parameter count for " + sig.symbol);
    if (e.children.size() != sig.child_categories.size()) throw TypeError("wrong child count for " + sig.symbol);
    for (int i = 0; i < sig.paramCount(); ++i) arg(e.args[static_cast<std::size_t>(i)], sig.param_types[static_cast<std::size_t>(i)]);
    for (std::size_t i = 0; i < e.children.size(); ++i) node(e.children[i], sig.child_categories[i]);
  }

  void arg(const Arg& a, int type) {
    const bool rel = g.relatable(type);
    switch (a.kind) {
      case ArgKind::Value:
        if (a.index < 0 || a.index >= g.paramType(type).size()) throw TypeError("value index out of range");
        if (role != TreeRole::Program && !rel) throw TypeError("pinned value on a non-relatable slot");
        break;
      case ArgKind::Shared: {
        if (role == TreeRole::Program) throw TypeError("shared variable in a concrete program");
        if (!rel) throw TypeError("shared variable on a non-relatable slot");
        if (a.index < 0 || a.index >= kMaxSharedVars) throw CapError("shared variable id out of range");
        auto& vt = var_type[static_cast<std::size_t>(a.index)];
        if (vt >= 0 && vt != type) throw TypeError("shared variable used across parameter types");
        vt = type;
        break;
      }
      case ArgKind::Free:
        if (role == TreeRole::Program) throw TypeError("free slot in a concrete program");
        if (++free > kMaxSentinels) throw CapError("more than 64 free parameter slots");
        break;
    }
  }
};

void validate(const Grammar& g, const Expr& root, TreeRole role) {
  Validator v{g, role};
  v.node(root, g.rootCategory());
}

void linearizeInto(const Grammar& g, const Expr& e, TokenSeq& out, int& sentinel) {
  if (e.isHole()) {
    out.push_back(Token::hole(e.hole));
    return;
  }
  out.push_back(Token::function(e.fn));
  const auto& sig = g.function(e.fn);
  for (int i = 0; i < sig.paramCount(); ++i) {
    const Arg& a = e.args[static_cast<std::size_t>(i)];
    switch (a.kind) {
      case ArgKind::Value: out.push_back(Token::value(sig.param_types[static_cast<std::size_t>(i)], a.index)); break;
      case ArgKind::Shared: out.push_back(Token::shared(a.index)); break;
      case ArgKind::Free: out.push_back(Token::sentinel(sentinel++)); break;
    }
  }
  for (const auto& c : e.children) linearizeInto(g, c, out, sentinel);
}

TokenSeq linearizeRoot(const Grammar& g, const Expr& root, int cap) {
  TokenSeq out{Token::start()};
  int sentinel = 0;
  linearizeInto(g, root, out, sentinel);
  out.push_back(Token::end());
  if (static_cast<int>(out.size()) > cap)
    throw LengthOverflow("linearized sequence has " + std::to_string(out.size()) + " tokens, cap is " +
                         std::to_string(cap));
  return out;
}

void collectPaths(const Expr& e, NodePath& cur, std::vector<NodePath>& out) {
  out.push_back(cur);
  for (std::size_t i = 0; i < e.children.size(); ++i) {
    cur.push_back(static_cast<int>(i));
    collectPaths(e.children[i], cur, out);
    cur.pop_back();
  }
}

void holePaths(const Expr& e, NodePath& cur, std::vector<NodePath>& out) {
  if (e.isHole()) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = 0; i < e.children.size(); ++i) {
    cur.push_back(static_cast<int>(i));
    holePaths(e.children[i], cur, out);
    cur.pop_back();
  }
}

}  // namespace

// ---- Wrappers ---------------------------------------------------------------

Template::Template(const Grammar& g, Expr root) : root_(std::move(root)) {
  validate(g, root_, TreeRole::Template);
  holes_ = countHoles(root_);
}

Expansion::Expansion(const Grammar& g, Expr root, std::vector<NodePath> fill_sites)
    : root_(std::move(root)), fill_sites_(std::move(fill_sites)) {
  validate(g, root_, TreeRole::Expansion);
}

Program::Program(const Grammar& g, Expr root) : root_(std::move(root)) { validate(g, root_, TreeRole::Program); }

// ---- Utilities --------------------------------------------------------------

int countHoles(const Expr& e) {
  if (e.isHole()) return 1;
  int n = 0;
  for (const auto& c : e.children) n += countHoles(c);
  return n;
}

int countFree(const Expr& e) {
  int n = 0;
  for (const auto& a : e.args) n += a.kind == ArgKind::Free;
  for (const auto& c : e.children) n += countFree(c);
  return n;
}

int nodeCount(const Expr& e) {
  int n = 1;
  for (const auto& c : e.children) n += nodeCount(c);
  return n;
}

Expr eraseParams(const Expr& e) {
  Expr out = e;
  for (auto& a : out.args) a = Arg::free();
  for (auto& c : out.children) c = eraseParams(c);
  return out;
}

const Expr& nodeAt(const Expr& root, const NodePath& path) {
  const Expr* e = &root;
  for (int i : path) e = &e->children.at(static_cast<std::size_t>(i));
  return *e;
}

Expr& nodeAt(Expr& root, const NodePath& path) {
  Expr* e = &root;
  for (int i : path) e = &e->children.at(static_cast<std::size_t>(i));
  return *e;
}

std::vector<NodePath> preorderPaths(const Expr& root) {
  std::vector<NodePath> out;
  NodePath cur;
  collectPaths(root, cur, out);
  return out;
}

int categoryAt(const Grammar& g, const Expr& root, const NodePath& path) {
  int cat = g.rootCategory();
  const Expr* e = &root;
  for (int i : path) {
    cat = g.function(e->fn).child_categories.at(static_cast<std::size_t>(i));
    e = &e->children.at(static_cast<std::size_t>(i));
  }
  return cat;
}

// ---- Linearize / parse --------------------------------------------------------

TokenSeq linearize(const Grammar& g, const Template& tp) { return linearizeRoot(g, tp.root(), g.caps().template_len); }
TokenSeq linearize(const Grammar& g, const Expansion& se) { return linearizeRoot(g, se.root(), g.caps().program_len); }
TokenSeq linearize(const Grammar& g, const Program& z) { return linearizeRoot(g, z.root(), g.caps().program_len); }

namespace {

struct TokenParser {
  const Grammar& g;
  std::span<const Token> toks;
  std::size_t pos = 0;
  int holes = 0;
  int sentinels = 0;
  bool any_relation = false;

  const Token& peek(const char* expecting) {
    if (pos >= toks.size()) throw ParseError(std::string("truncated sequence, expected ") + expecting, pos);
    return toks[pos];
  }

  Expr node(int category) {
    const Token& t = peek("a function or hole");
    if (t.kind == TokenKind::Hole) {
      if (t.a != holes) throw ParseError("hole slot out of order", pos);
      if (holes >= kMaxHoles) throw ParseError("more than 5 holes", pos);
      ++holes;
      ++pos;
      return Expr::makeHole(t.a);
    }
    if (t.kind != TokenKind::Function) throw ParseError("expected a function token, got " + g.tokenName(t), pos);
    if (t.a < 0 || t.a >= g.functionCount()) throw ParseError("unknown function symbol", pos);
    const auto& sig = g.function(t.a);
    if (sig.category != category)
      throw ParseError(sig.symbol + " is not a " + g.categories()[static_cast<std::size_t>(category)], pos);
    Expr e;
    e.fn = t.a;
    ++pos;
    for (int i = 0; i < sig.paramCount(); ++i) {
      const int type = sig.param_types[static_cast<std::size_t>(i)];
      if (pos >= toks.size() || toks[pos].kind == TokenKind::End)
        throw ParseError("arity mismatch: " + sig.symbol + " is missing parameter " +
                             sig.param_names[static_cast<std::size_t>(i)],
                         pos);
      const Token& p = toks[pos];
      switch (p.kind) {
        case TokenKind::ParamValue:
          if (p.a != type) throw ParseError("parameter type mismatch for " + sig.symbol, pos);
          if (p.b < 0 || p.b >= g.paramType(type).size()) throw ParseError("value index out of range", pos);
          e.args.push_back(Arg::value(p.b));
          break;
        case TokenKind::Shared:
          if (p.a < 0 || p.a >= kMaxSharedVars) throw ParseError("shared variable out of range", pos);
          e.args.push_back(Arg::shared(p.a));
          any_relation = true;
          break;
        case TokenKind::Sentinel:
          if (p.a != sentinels) throw ParseError("sentinel out of order", pos);
          if (sentinels >= kMaxSentinels) throw ParseError("more than 64 sentinels", pos);
          ++sentinels;
          e.args.push_back(Arg::free());
          any_relation = true;
          break;
        default:
          throw ParseError("arity mismatch: " + sig.symbol + " expects parameter " +
                               sig.param_names[static_cast<std::size_t>(i)] + ", got " + g.tokenName(p),
                           pos);
      }
      ++pos;
    }
    for (int c : sig.child_categories) e.children.push_back(node(c));
    return e;
  }
};

}  // namespace

AnyTree parse(const Grammar& g, std::span<const Token> tokens) {
  if (tokens.empty()) throw ParseError("empty sequence", 0);
  if (tokens.front().kind != TokenKind::Start) throw ParseError("sequence must begin with Start", 0);
  TokenParser p{g, tokens};
  p.pos = 1;
  Expr root = p.node(g.rootCategory());
  if (p.pos >= tokens.size() || tokens[p.pos].kind != TokenKind::End) throw ParseError("expected End", p.pos);
  if (p.pos + 1 != tokens.size()) throw ParseError("trailing tokens after End", p.pos + 1);
  try {
    if (p.holes > 0) return Template(g, std::move(root));
    if (p.any_relation) return Expansion(g, std::move(root));
    return Program(g, std::move(root));
  } catch (const TypeError& e) {
    throw ParseError(e.what(), 0);
  } catch (const CapError& e) {
    throw ParseError(e.what(), 0);
  }
}

// ---- Conformance ------------------------------------------------------------

namespace {

struct Matcher {
  const Grammar& g;
  std::vector<Expr> fills;
  std::array<int, kMaxSharedVars> shared{-1, -1, -1, -1};

  bool match(const Expr& t, const Expr& z) {
    if (t.isHole()) {
      if (static_cast<std::size_t>(t.hole) >= fills.size()) fills.resize(static_cast<std::size_t>(t.hole) + 1);
      fills[static_cast<std::size_t>(t.hole)] = z;
      return true;
    }
    if (z.isHole() || t.fn != z.fn || t.children.size() != z.children.size()) return false;
    for (std::size_t i = 0; i < t.args.size(); ++i) {
      const Arg& ta = t.args[i];
      const Arg& za = z.args[i];
      if (za.kind != ArgKind::Value) return false;
      if (ta.kind == ArgKind::Value && ta.index != za.index) return false;
      if (ta.kind == ArgKind::Shared) {
        int& bound = shared[static_cast<std::size_t>(ta.index)];
        if (bound >= 0 && bound != za.index) return false;
        bound = za.index;
      }
    }
    for (std::size_t i = 0; i < t.children.size(); ++i)
      if (!match(t.children[i], z.children[i])) return false;
    return true;
  }
};

void collectFreeValues(const Expr& se, const Expr& z, std::vector<int>& out) {
  for (std::size_t i = 0; i < se.args.size(); ++i)
    if (se.args[i].kind == ArgKind::Free) out.push_back(z.args[i].index);
  for (std::size_t i = 0; i < se.children.size(); ++i) collectFreeValues(se.children[i], z.children[i], out);
}

}  // namespace

std::optional<Witness> conforms(const Grammar& g, const Program& z, const Template& tp) {
  Matcher m{g, {}};
  if (!m.match(tp.root(), z.root())) return std::nullopt;
  Witness w;
  w.fills = std::move(m.fills);
  w.bindings.shared = m.shared;
  // Free slots of the expansion in sentinel order.
  Expr se = tp.root();
  std::vector<NodePath> holes;
  NodePath cur;
  holePaths(se, cur, holes);
  for (std::size_t k = 0; k < holes.size(); ++k) nodeAt(se, holes[k]) = eraseParams(w.fills[k]);
  collectFreeValues(se, z.root(), w.bindings.free);
  return w;
}

// ---- Expand / erase / instantiate ----------------------------------------------

Expansion expand(const Grammar& g, const Template& tp, const std::vector<Expr>& fills) {
  Expr root = tp.root();
  std::vector<NodePath> sites;
  NodePath cur;
  holePaths(root, cur, sites);
  if (fills.size() != sites.size())
    throw TypeError("fill count mismatch: template has " + std::to_string(sites.size()) + " holes, got " +
                    std::to_string(fills.size()) + " fills");
  int fill_tokens = 2;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    const Expr& f = fills[k];
    if (f.isHole() || countHoles(f) > 0) throw TypeError("hole fill contains a hole");
    const int cat = categoryAt(g, root, sites[k]);
    if (f.fn < 0 || f.fn >= g.functionCount() || g.function(f.fn).category != cat)
      throw TypeError("fill category mismatch for hole " + std::to_string(k));
    fill_tokens += 1 + nodeCount(f);
    nodeAt(root, sites[k]) = eraseParams(f);
  }
  if (fill_tokens > g.caps().expansion_len)
    throw LengthOverflow("hole fills need " + std::to_string(fill_tokens) + " expansion tokens, cap is " +
                         std::to_string(g.caps().expansion_len));
  Expansion se(g, std::move(root), std::move(sites));
  linearize(g, se);  // enforces the program length cap
  return se;
}

Template erase(const Grammar& g, const Expansion& se) {
  Expr root = se.root();
  for (std::size_t k = 0; k < se.fillSites().size(); ++k) nodeAt(root, se.fillSites()[k]) = Expr::makeHole(static_cast<int>(k));
  return Template(g, std::move(root));
}

namespace {

void bind(const Grammar& g, Expr& e, const Bindings& b, std::size_t& next_free) {
  if (e.isHole()) throw TypeError("cannot instantiate a hole");
  const auto& sig = g.function(e.fn);
  for (std::size_t i = 0; i < e.args.size(); ++i) {
    Arg& a = e.args[i];
    const int type = sig.param_types[i];
    int v = -1;
    if (a.kind == ArgKind::Value) continue;
    if (a.kind == ArgKind::Free) {
      if (next_free >= b.free.size()) throw TypeError("missing binding for free slot ?" + std::to_string(next_free));
      v = b.free[next_free++];
    } else {
      v = b.shared[static_cast<std::size_t>(a.index)];
      if (v < 0) throw TypeError("missing binding for shared variable V" + std::to_string(a.index));
    }
    if (v < 0 || v >= g.paramType(type).size()) throw TypeError("bound value out of the value set of " + g.paramType(type).name);
    a = Arg::value(v);
  }
  for (auto& c : e.children) bind(g, c, b, next_free);
}

}  // namespace

Program instantiate(const Grammar& g, const Expansion& se, const Bindings& bindings) {
  Expr root = se.root();
  std::size_t next_free = 0;
  bind(g, root, bindings, next_free);
  if (next_free != bindings.free.size()) throw TypeError("more free bindings than free slots");
  return Program(g, std::move(root));
}

// ---- Description length ---------------------------------------------------------

namespace {

void dl(const Grammar& g, const Expr& e, int& total, std::set<int>& vars) {
  if (e.isHole()) return;
  ++total;
  const auto& sig = g.function(e.fn);
  for (std::size_t i = 0; i < e.args.size(); ++i) {
    if (!g.relatable(sig.param_types[i])) continue;
    if (e.args[i].kind == ArgKind::Value) ++total;
    if (e.args[i].kind == ArgKind::Shared) vars.insert(e.args[i].index);
  }
  for (const auto& c : e.children) dl(g, c, total, vars);
}

void sharedIds(const Expr& e, std::set<int>& vars) {
  for (const auto& a : e.args)
    if (a.kind == ArgKind::Shared) vars.insert(a.index);
  for (const auto& c : e.children) sharedIds(c, vars);
}

}  // namespace

int descriptionLength(const Grammar& g, const Template& tp) {
  int total = 0;
  std::set<int> vars;
  dl(g, tp.root(), total, vars);
  return total + static_cast<int>(vars.size());
}

int descriptionLength(const Grammar& g, const Program& z) {
  int total = 0;
  std::set<int> vars;
  dl(g, z.root(), total, vars);
  return total;
}

int paramPredictionCount(const Expr& se_root) {
  std::set<int> vars;
  sharedIds(se_root, vars);
  return countFree(se_root) + static_cast<int>(vars.size());
}

// ---- Text -------------------------------------------------------------------------

namespace {

void textInto(const Grammar& g, const Expr& e, std::string& out, int& sentinel) {
  if (e.isHole()) {
    out += "(HOLE " + std::to_string(e.hole) + ")";
    return;
  }
  const auto& sig = g.function(e.fn);
  out += "(" + sig.symbol;
  for (std::size_t i = 0; i < e.args.size(); ++i) {
    const auto& pt = g.paramType(sig.param_types[i]);
    out += ' ';
    if (!pt.categorical) out += sig.param_names[i] + "=";
    const Arg& a = e.args[i];
    switch (a.kind) {
      case ArgKind::Value: out += pt.labels.at(static_cast<std::size_t>(a.index)); break;
      case ArgKind::Shared: out += "V" + std::to_string(a.index); break;
      case ArgKind::Free: out += "?" + std::to_string(sentinel++); break;
    }
  }
  for (const auto& c : e.children) {
    out += ' ';
    textInto(g, c, out, sentinel);
  }
  out += ')';
}

struct TextParser {
  const Grammar& g;
  std::string_view s;
  std::size_t pos = 0;
  int holes = 0;
  bool relational = false;

  void skipSpace() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool atEnd() {
    skipSpace();
    return pos >= s.size();
  }
  char peekChar() {
    skipSpace();
    if (pos >= s.size()) throw ParseError("unexpected end of text", pos);
    return s[pos];
  }
  void expect(char c) {
    if (peekChar() != c) throw ParseError(std::string("expected '") + c + "'", pos);
    ++pos;
  }
  std::string word() {
    skipSpace();
    const std::size_t begin = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])) && s[pos] != '(' && s[pos] != ')') ++pos;
    if (pos == begin) throw ParseError("expected a symbol", pos);
    return std::string(s.substr(begin, pos - begin));
  }

  Arg atom(const std::string& text, int type, std::size_t at) {
    if (text.size() >= 2 && text[0] == 'V' && std::isdigit(static_cast<unsigned char>(text[1]))) {
      relational = true;
      return Arg::shared(std::stoi(text.substr(1)));
    }
    // Free slots carry no identity; their numbers are reassigned in pre-order.
    if (!text.empty() && text[0] == '?') {
      relational = true;
      return Arg::free();
    }
    const auto& pt = g.paramType(type);
    for (int i = 0; i < pt.size(); ++i)
      if (pt.labels[static_cast<std::size_t>(i)] == text) return Arg::value(i);
    if (!pt.categorical) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        const int idx = used == text.size() ? g.valueIndex(type, v) : -1;
        if (idx >= 0) return Arg::value(idx);
      } catch (const std::exception&) {
      }
    }
    throw ParseError("'" + text + "' is not in the value set of " + pt.name, at);
  }

  Expr node(int category) {
    expect('(');
    const std::size_t at = pos;
    const std::string sym = word();
    if (sym == "HOLE") {
      const std::size_t slot_at = pos;
      const std::string slot = word();
      if (slot != std::to_string(holes)) throw ParseError("hole slot out of order", slot_at);
      expect(')');
      ++holes;
      return Expr::makeHole(holes - 1);
    }
    int fn = -1;
    for (int f : g.functionsOf(category))
      if (g.function(f).symbol == sym) fn = f;
    if (fn < 0) {
      if (g.functionId(sym) < 0) throw ParseError("unknown symbol '" + sym + "'", at);
      throw ParseError(sym + " is not a " + g.categories()[static_cast<std::size_t>(category)], at);
    }
    const auto& sig = g.function(fn);
    Expr e;
    e.fn = fn;
    e.args.assign(static_cast<std::size_t>(sig.paramCount()), Arg{ArgKind::Free, -2});
    int next_positional = 0;
    while (peekChar() != '(' && peekChar() != ')') {
      const std::size_t arg_at = pos;
      const std::string w = word();
      const auto eq = w.find('=');
      int slot = -1;
      std::string value = w;
      if (eq != std::string::npos) {
        const std::string name = w.substr(0, eq);
        value = w.substr(eq + 1);
        for (int i = 0; i < sig.paramCount(); ++i)
          if (sig.param_names[static_cast<std::size_t>(i)] == name) slot = i;
        if (slot < 0) throw ParseError(sym + " has no parameter '" + name + "'", arg_at);
      } else {
        while (next_positional < sig.paramCount() && e.args[static_cast<std::size_t>(next_positional)].index != -2)
          ++next_positional;
        if (next_positional >= sig.paramCount()) throw ParseError("too many parameters for " + sym, arg_at);
        slot = next_positional;
      }
      if (e.args[static_cast<std::size_t>(slot)].index != -2) throw ParseError("parameter given twice", arg_at);
      e.args[static_cast<std::size_t>(slot)] = atom(value, sig.param_types[static_cast<std::size_t>(slot)], arg_at);
    }
    for (int c : sig.child_categories) {
      if (peekChar() != '(') throw ParseError("arity mismatch: " + sym + " expects " + std::to_string(sig.arity()) + " children", pos);
      e.children.push_back(node(c));
    }
    if (peekChar() != ')') throw ParseError("arity mismatch: too many children for " + sym, pos);
    ++pos;
    return e;
  }

  // Omitted slots: Free in templates/expansions, the type's default in programs.
  void resolveOmitted(Expr& e, bool relational_tree) {
    if (e.isHole()) return;
    const auto& sig = g.function(e.fn);
    for (std::size_t i = 0; i < e.args.size(); ++i) {
      if (e.args[i].index != -2) continue;
      const auto& pt = g.paramType(sig.param_types[i]);
      if (pt.categorical && !relational_tree) throw ParseError("missing categorical parameter " + sig.param_names[i] + " of " + sig.symbol, pos);
      e.args[i] = relational_tree ? Arg::free() : Arg::value(pt.default_index);
    }
    for (auto& c : e.children) resolveOmitted(c, relational_tree);
  }
};

}  // namespace

std::string toText(const Grammar& g, const Expr& e) {
  std::string out;
  int sentinel = 0;
  textInto(g, e, out, sentinel);
  return out;
}
std::string toText(const Grammar& g, const Template& tp) { return toText(g, tp.root()); }
std::string toText(const Grammar& g, const Expansion& se) { return toText(g, se.root()); }
std::string toText(const Grammar& g, const Program& z) { return toText(g, z.root()); }

AnyTree parseText(const Grammar& g, std::string_view text) {
  TextParser p{g, text};
  Expr root = p.node(g.rootCategory());
  if (!p.atEnd()) throw ParseError("trailing text", p.pos);
  const bool relational = p.relational || p.holes > 0;
  p.resolveOmitted(root, relational);
  try {
    if (p.holes > 0) return Template(g, std::move(root));
    if (relational) return Expansion(g, std::move(root));
    return Program(g, std::move(root));
  } catch (const TypeError& e) {
    throw ParseError(e.what(), 0);
  } catch (const CapError& e) {
    throw ParseError(e.what(), 0);
  }
}

Program parseProgramText(const Grammar& g, std::string_view text) {
  AnyTree t = parseText(g, text);
  if (auto* z = std::get_if<Program>(&t)) return *z;
  throw ParseError("expected a concrete program", 0);
}

Template parseTemplateText(const Grammar& g, std::string_view text) {
  AnyTree t = parseText(g, text);
  if (auto* tp = std::get_if<Template>(&t)) return *tp;
  if (auto* se = std::get_if<Expansion>(&t)) return Template(g, se->root());
  // A fully specified tree is only a valid template if every slot is relatable.
  return Template(g, std::get<Program>(t).root());
}

std::string tokensToString(const Grammar& g, const TokenSeq& seq) {
  std::string out;
  for (const auto& t : seq) {
    if (!out.empty()) out += ' ';
    out += g.tokenName(t);
  }
  return out;
}

}  // namespace tplprog
