#include "tplprog/synth.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "tplprog/errors.hpp"

namespace tplprog {

using nlohmann::json;

// ---- Config -----------------------------------------------------------------

json SamplerConfig::toJson() const {
  return json{{"max_depth", max_depth},     {"weights", weights},       {"group_size", group_size},
              {"hole_prob", hole_prob},     {"pin_prob", pin_prob},     {"share_prob", share_prob},
              {"allow_root_hole", allow_root_hole}, {"retries", retries}, {"seed", seed}};
}

SamplerConfig SamplerConfig::fromJson(const json& j) {
  SamplerConfig c;
  if (!j.is_object()) throw DataError("sampler config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "max_depth") c.max_depth = v.get<int>();
      else if (key == "weights") c.weights = v.get<std::map<std::string, double>>();
      else if (key == "group_size") c.group_size = v.get<int>();
      else if (key == "hole_prob") c.hole_prob = v.get<double>();
      else if (key == "pin_prob") c.pin_prob = v.get<double>();
      else if (key == "share_prob") c.share_prob = v.get<double>();
      else if (key == "allow_root_hole") c.allow_root_hole = v.get<bool>();
      else if (key == "retries") c.retries = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw DataError("unknown sampler config key '" + key + "'");
    } catch (const json::exception& e) {
      throw DataError("sampler config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

void SamplerConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (max_depth < 1) throw DataError("max_depth must be at least 1");
  if (group_size < 1) throw DataError("group_size must be at least 1");
  if (!prob(hole_prob) || !prob(pin_prob) || !prob(share_prob)) throw DataError("probabilities must lie in [0, 1]");
  if (pin_prob + share_prob > 1.0 + 1e-12) throw DataError("pin_prob + share_prob must not exceed 1");
  if (retries < 1) throw DataError("retries must be at least 1");
  for (const auto& [k, w] : weights)
    if (!(w >= 0.0)) throw DataError("weight for " + k + " must be nonnegative");
}

std::map<std::string, double> defaultWeights(const Domain& d) {
  if (d.family() == "stroke")
    return {{"ON", 0.5}, {"OFF", 0.1}, {"MOVE", 0.15}, {"END", 0.25}, {"DRAW", 0.6}, {"BOW", 0.2}, {"EMPTY", 0.2}};
  return {{"UNION", 0.25}, {"SymReflect", 0.05}, {"SymRotate", 0.05}, {"SymTranslate", 0.05},
          {"Color", 0.15}, {"Move", 0.15},      {"Scale", 0.1},      {"Prim", 0.2}};
}

SamplerConfig defaultSamplerConfig(const Domain& d) {
  SamplerConfig c;
  c.max_depth = d.family() == "stroke" ? 12 : d.id() == "layout-tiny" ? 2 : 5;
  return c;
}

const char* roleName(Role r) {
  switch (r) {
    case Role::Template: return "template";
    case Role::Expansion: return "expansion";
    case Role::Param: return "param";
  }
  return "?";
}

// ---- Sampling -----------------------------------------------------------------

namespace {

struct Gen {
  const Domain& d;
  const Grammar& g;
  const SamplerConfig& cfg;
  Rng& rng;
  std::vector<double> weight;
  std::vector<int> min_height;
  std::vector<int> counts;

  Gen(const Domain& dom, const SamplerConfig& c, Rng& r) : d(dom), g(dom.grammar()), cfg(c), rng(r) {
    const auto defaults = defaultWeights(d);
    for (const auto& sig : g.functions()) {
      if (auto it = cfg.weights.find(sig.symbol); it != cfg.weights.end()) {
        weight.push_back(it->second);
      } else {
        auto jt = defaults.find(sig.symbol);
        weight.push_back(jt == defaults.end() ? 1.0 : jt->second);
      }
    }
    constexpr int kInf = std::numeric_limits<int>::max() / 4;
    min_height.assign(g.categories().size(), kInf);
    for (bool changed = true; changed;) {
      changed = false;
      for (const auto& sig : g.functions()) {
        int h = 1;
        for (int c : sig.child_categories) h = std::max(h, min_height[static_cast<std::size_t>(c)] >= kInf ? kInf : 1 + min_height[static_cast<std::size_t>(c)]);
        if (h < min_height[static_cast<std::size_t>(sig.category)]) {
          min_height[static_cast<std::size_t>(sig.category)] = h;
          changed = true;
        }
      }
    }
    reset();
  }

  void reset() { counts.assign(static_cast<std::size_t>(g.functionCount()), 0); }

  // Uniform over the values allowed at this point of the pre-order walk.
  int legalValue(const FunctionSig& sig, std::size_t i) {
    const int n = g.paramType(sig.param_types[i]).size();
    const int cf = sig.counts_function[i];
    const int limit = cf >= 0 ? std::min(n, counts[static_cast<std::size_t>(cf)]) : n;
    if (limit <= 0) return -1;
    return rng.uniformInt(limit);
  }

  bool usable(int fn, int depth, int cap) const {
    const auto& sig = g.function(fn);
    if (weight[static_cast<std::size_t>(fn)] <= 0.0) return false;
    for (int c : sig.child_categories)
      if (depth + min_height[static_cast<std::size_t>(c)] > cap) return false;
    for (std::size_t i = 0; i < sig.param_types.size(); ++i)
      if (sig.counts_function[i] >= 0 && counts[static_cast<std::size_t>(sig.counts_function[i])] == 0) return false;
    return true;
  }

  Expr subtree(int category, int depth) {
    const int cap = std::max(cfg.max_depth, depth + min_height[static_cast<std::size_t>(category)] - 1);
    const auto& fns = g.functionsOf(category);
    std::vector<double> w;
    for (int f : fns) w.push_back(usable(f, depth, cap) ? weight[static_cast<std::size_t>(f)] : 0.0);
    const int pick = rng.categorical(w);
    if (pick < 0) throw SamplingError("no usable production for category " + g.categories()[static_cast<std::size_t>(category)]);
    Expr e;
    e.fn = fns[static_cast<std::size_t>(pick)];
    const auto& sig = g.function(e.fn);
    ++counts[static_cast<std::size_t>(e.fn)];
    for (std::size_t i = 0; i < sig.param_types.size(); ++i) e.args.push_back(Arg::value(legalValue(sig, i)));
    for (int c : sig.child_categories) e.children.push_back(subtree(c, depth + 1));
    return e;
  }

  // Copies the template in pre-order, expanding holes and drawing values.
  Expr instantiate(const Expr& t, int category, int depth, std::array<int, kMaxSharedVars>& shared) {
    if (t.isHole()) return subtree(category, depth);
    Expr e;
    e.fn = t.fn;
    const auto& sig = g.function(e.fn);
    ++counts[static_cast<std::size_t>(e.fn)];
    for (std::size_t i = 0; i < t.args.size(); ++i) {
      const Arg& a = t.args[i];
      if (a.kind == ArgKind::Value) {
        e.args.push_back(a);
      } else if (a.kind == ArgKind::Shared) {
        int& v = shared[static_cast<std::size_t>(a.index)];
        if (v < 0) v = legalValue(sig, i);
        e.args.push_back(Arg::value(v));
      } else {
        e.args.push_back(Arg::value(legalValue(sig, i)));
      }
      if (e.args.back().index < 0) throw SamplingError("no legal value for " + sig.param_names[i]);
    }
    for (std::size_t c = 0; c < t.children.size(); ++c)
      e.children.push_back(instantiate(t.children[c], sig.child_categories[c], depth + 1, shared));
    return e;
  }
};

int paramSlots(const Expr& e) {
  int n = static_cast<int>(e.args.size());
  for (const auto& c : e.children) n += paramSlots(c);
  return n;
}

// A member fits when its expansion and parameter targets fit their caps.
void checkMember(const Grammar& g, const Template& tp, const Program& z) {
  auto w = conforms(g, z, tp);
  if (!w) throw SamplingError("instantiation does not conform");
  Expansion se = expand(g, tp, w->fills);
  if (2 + 2 * paramPredictionCount(se.root()) > g.caps().param_len) throw LengthOverflow("parameter target too long");
  linearize(g, z);
}

}  // namespace

bool fitsCaps(const Grammar& g, const Program& z) {
  try {
    if (static_cast<int>(linearize(g, z).size()) > g.caps().template_len) return false;
  } catch (const CapError&) {
    return false;
  }
  return 2 + 2 * paramSlots(z.root()) <= g.caps().param_len;
}

Program sampleProgram(const Domain& d, const SamplerConfig& cfg, Rng& rng) {
  Gen gen(d, cfg, rng);
  std::string last = "no attempt";
  for (int attempt = 0; attempt < cfg.retries; ++attempt) {
    gen.reset();
    try {
      Program z(d.grammar(), gen.subtree(d.grammar().rootCategory(), 1));
      if (!fitsCaps(d.grammar(), z)) {
        last = "length caps";
        continue;
      }
      if (d.execute(z).occupied() == 0) {
        last = "blank canvas";
        continue;
      }
      return z;
    } catch (const Error& e) {
      last = e.what();
    }
  }
  throw SamplingError("sampleProgram: gave up after " + std::to_string(cfg.retries) + " attempts (" + last + ")");
}

Template collapse(const Grammar& g, const Program& z, const SamplerConfig& cfg, Rng& rng) {
  const auto paths = preorderPaths(z.root());
  std::vector<NodePath> chosen;
  if (g.options().holes && cfg.hole_prob > 0.0) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < paths.size(); ++i)
      if (!paths[i].empty() || cfg.allow_root_hole) order.push_back(i);
    rng.shuffle(order);
    int budget = g.caps().expansion_len - 2;
    for (std::size_t i : order) {
      if (static_cast<int>(chosen.size()) >= kMaxHoles) break;
      if (!rng.bernoulli(cfg.hole_prob)) continue;
      const NodePath& p = paths[i];
      bool disjoint = true;
      for (const auto& q : chosen) {
        const std::size_t m = std::min(p.size(), q.size());
        if (std::equal(p.begin(), p.begin() + static_cast<long>(m), q.begin())) disjoint = false;
      }
      const int cost = 1 + nodeCount(nodeAt(z.root(), p));
      if (!disjoint || cost > budget) continue;
      budget -= cost;
      chosen.push_back(p);
    }
  }
  Expr root = z.root();
  for (const auto& p : chosen) nodeAt(root, p) = Expr::makeHole(0);
  // Number holes in pre-order and assign relations outside them.
  int next_hole = 0;
  struct Slot {
    Arg* arg;
    int type;
    int value;
  };
  std::vector<Slot> share_candidates;
  auto walk = [&](auto&& self, Expr& e) -> void {
    if (e.isHole()) {
      e.hole = next_hole++;
      return;
    }
    const auto& sig = g.function(e.fn);
    for (std::size_t i = 0; i < e.args.size(); ++i) {
      Arg& a = e.args[i];
      const int type = sig.param_types[i];
      const int value = a.index;
      a = Arg::free();
      if (!g.relatable(type)) continue;
      const double u = rng.uniform01();
      if (u < cfg.pin_prob) a = Arg::value(value);
      else if (u < cfg.pin_prob + cfg.share_prob) share_candidates.push_back({&a, type, value});
    }
    for (auto& c : e.children) self(self, c);
  };
  walk(walk, root);
  // Equal-valued candidate groups of size >= 2 become shared variables, in
  // order of first occurrence.
  int next_var = 0;
  std::vector<bool> done(share_candidates.size(), false);
  for (std::size_t i = 0; i < share_candidates.size() && next_var < kMaxSharedVars; ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> group{i};
    for (std::size_t j = i + 1; j < share_candidates.size(); ++j)
      if (!done[j] && share_candidates[j].type == share_candidates[i].type && share_candidates[j].value == share_candidates[i].value)
        group.push_back(j);
    for (std::size_t k : group) done[k] = true;
    if (group.size() < 2) continue;
    for (std::size_t k : group) *share_candidates[k].arg = Arg::shared(next_var);
    ++next_var;
  }
  return Template(g, std::move(root));
}

Program sampleInstantiation(const Domain& d, const Template& tp, const SamplerConfig& cfg, Rng& rng) {
  const Grammar& g = d.grammar();
  Gen gen(d, cfg, rng);
  std::string last = "no attempt";
  for (int attempt = 0; attempt < cfg.retries; ++attempt) {
    gen.reset();
    try {
      std::array<int, kMaxSharedVars> shared{-1, -1, -1, -1};
      Program z(g, gen.instantiate(tp.root(), g.rootCategory(), 1, shared));
      checkMember(g, tp, z);
      if (d.execute(z).occupied() == 0) {
        last = "blank canvas";
        continue;
      }
      return z;
    } catch (const Error& e) {
      last = e.what();
    }
  }
  throw SamplingError("sampleInstantiation: gave up after " + std::to_string(cfg.retries) + " attempts (" + last + ")");
}

GroupTriplet sampleGroup(const Domain& d, const Template& tp, const SamplerConfig& cfg, Rng& rng) {
  GroupTriplet t;
  t.tp = tp;
  for (int m = 0; m < cfg.group_size; ++m) {
    Program z = sampleInstantiation(d, tp, cfg, rng);
    t.visuals.push_back(d.execute(z));
    t.programs.push_back(std::move(z));
  }
  return t;
}

GroupTriplet sampleTriplet(const Domain& d, const SamplerConfig& cfg, Rng& rng) {
  std::string last;
  for (int attempt = 0; attempt < cfg.retries; ++attempt) {
    try {
      Program z = sampleProgram(d, cfg, rng);
      Template tp = collapse(d.grammar(), z, cfg, rng);
      return sampleGroup(d, tp, cfg, rng);
    } catch (const SamplingError& e) {
      last = e.what();
    }
  }
  throw SamplingError("sampleTriplet: gave up (" + last + ")");
}

// ---- Targets --------------------------------------------------------------------

namespace {

void functionTokens(const Expr& e, TokenSeq& out) {
  out.push_back(Token::function(e.fn));
  for (const auto& c : e.children) functionTokens(c, out);
}

struct SlotRef {
  int type;
  ArgKind kind;
  int index;
};

void slots(const Grammar& g, const Expr& e, std::vector<SlotRef>& out) {
  if (e.isHole()) return;
  const auto& sig = g.function(e.fn);
  for (std::size_t i = 0; i < e.args.size(); ++i) out.push_back({sig.param_types[i], e.args[i].kind, e.args[i].index});
  for (const auto& c : e.children) slots(g, c, out);
}

std::vector<int> holeCategories(const Grammar& g, const Template& tp) {
  std::vector<int> cats(static_cast<std::size_t>(tp.holeCount()), -1);
  for (const auto& p : preorderPaths(tp.root())) {
    const Expr& e = nodeAt(tp.root(), p);
    if (e.isHole()) cats[static_cast<std::size_t>(e.hole)] = categoryAt(g, tp.root(), p);
  }
  return cats;
}

}  // namespace

TokenSeq expansionTarget(const Grammar& g, const Template& tp, const Witness& w) {
  (void)g;
  TokenSeq out{Token::start()};
  for (int k = 0; k < tp.holeCount(); ++k) {
    out.push_back(Token::hole(k));
    functionTokens(w.fills.at(static_cast<std::size_t>(k)), out);
  }
  out.push_back(Token::end());
  return out;
}

TokenSeq paramTarget(const Grammar& g, const Expansion& se, const Bindings& b) {
  std::vector<SlotRef> ss;
  slots(g, se.root(), ss);
  TokenSeq out{Token::start()};
  int sentinel = 0;
  std::array<bool, kMaxSharedVars> seen{};
  for (const auto& s : ss) {
    if (s.kind == ArgKind::Free) {
      out.push_back(Token::sentinel(sentinel));
      out.push_back(Token::value(s.type, b.free.at(static_cast<std::size_t>(sentinel))));
      ++sentinel;
    } else if (s.kind == ArgKind::Shared && !seen[static_cast<std::size_t>(s.index)]) {
      seen[static_cast<std::size_t>(s.index)] = true;
      out.push_back(Token::shared(s.index));
      out.push_back(Token::value(s.type, b.shared[static_cast<std::size_t>(s.index)]));
    }
  }
  out.push_back(Token::end());
  return out;
}

Expr skeletonFromTokens(const Grammar& g, int category, const TokenSeq& toks, std::size_t& pos) {
  if (pos >= toks.size() || toks[pos].kind != TokenKind::Function) throw DecodeError("expected a function token in a hole fill");
  const int fn = toks[pos].a;
  if (fn < 0 || fn >= g.functionCount() || g.function(fn).category != category) throw DecodeError("hole fill has the wrong category");
  ++pos;
  Expr e;
  e.fn = fn;
  e.args.assign(static_cast<std::size_t>(g.function(fn).paramCount()), Arg::free());
  for (int c : g.function(fn).child_categories) e.children.push_back(skeletonFromTokens(g, c, toks, pos));
  return e;
}

std::vector<Expr> fillsFromTarget(const Grammar& g, const Template& tp, const TokenSeq& target) {
  const auto cats = holeCategories(g, tp);
  std::size_t pos = 0;
  if (target.empty() || target[pos++].kind != TokenKind::Start) throw DecodeError("expansion target must start with Start");
  std::vector<Expr> fills;
  for (int k = 0; k < tp.holeCount(); ++k) {
    if (pos >= target.size() || target[pos].kind != TokenKind::Hole || target[pos].a != k)
      throw DecodeError("expansion target: expected prompt HOLE" + std::to_string(k));
    ++pos;
    fills.push_back(skeletonFromTokens(g, cats[static_cast<std::size_t>(k)], target, pos));
  }
  if (pos + 1 != target.size() || target[pos].kind != TokenKind::End) throw DecodeError("expansion target: expected End");
  return fills;
}

Bindings bindingsFromTarget(const Grammar& g, const Expansion& se, const TokenSeq& target) {
  std::vector<SlotRef> ss;
  slots(g, se.root(), ss);
  std::vector<int> free_types;
  std::array<int, kMaxSharedVars> var_type{-1, -1, -1, -1};
  for (const auto& s : ss) {
    if (s.kind == ArgKind::Free) free_types.push_back(s.type);
    if (s.kind == ArgKind::Shared) var_type[static_cast<std::size_t>(s.index)] = s.type;
  }
  Bindings b;
  b.free.assign(free_types.size(), -1);
  if (target.empty() || target.front().kind != TokenKind::Start || target.back().kind != TokenKind::End)
    throw DecodeError("parameter target must be framed by Start/End");
  for (std::size_t i = 1; i + 1 < target.size(); i += 2) {
    const Token& prompt = target[i];
    if (i + 1 >= target.size() - 1 || target[i + 1].kind != TokenKind::ParamValue) throw DecodeError("parameter target: prompt without value");
    const Token& v = target[i + 1];
    if (prompt.kind == TokenKind::Sentinel) {
      if (prompt.a < 0 || static_cast<std::size_t>(prompt.a) >= free_types.size() || free_types[static_cast<std::size_t>(prompt.a)] != v.a)
        throw DecodeError("parameter target: bad sentinel value");
      b.free[static_cast<std::size_t>(prompt.a)] = v.b;
    } else if (prompt.kind == TokenKind::Shared) {
      if (prompt.a < 0 || prompt.a >= kMaxSharedVars || var_type[static_cast<std::size_t>(prompt.a)] != v.a)
        throw DecodeError("parameter target: bad shared value");
      b.shared[static_cast<std::size_t>(prompt.a)] = v.b;
    } else {
      throw DecodeError("parameter target: unexpected token");
    }
  }
  for (int v : b.free)
    if (v < 0) throw DecodeError("parameter target: missing free value");
  return b;
}

std::vector<TrainingExample> formatTargets(const Domain& d, const GroupTriplet& t, Rng& rng, const std::string& source) {
  const Grammar& g = d.grammar();
  if (t.programs.size() != t.visuals.size()) throw TypeError("triplet has mismatched programs and visuals");
  std::vector<std::vector<double>> feats;
  for (const auto& c : t.visuals) feats.push_back(d.features(c));
  std::vector<TrainingExample> out;
  TrainingExample te;
  te.role = Role::Template;
  te.visuals = feats;
  rng.shuffle(te.visuals);
  te.target = linearize(g, t.tp);
  te.source = source;
  out.push_back(std::move(te));
  const TokenSeq tp_tokens = linearize(g, t.tp);
  for (std::size_t m = 0; m < t.programs.size(); ++m) {
    auto w = conforms(g, t.programs[m], t.tp);
    if (!w) throw TypeError("triplet member " + std::to_string(m) + " does not conform to its template");
    Expansion se = expand(g, t.tp, w->fills);
    TrainingExample ex;
    ex.role = Role::Expansion;
    ex.visuals = {feats[m]};
    ex.program = tp_tokens;
    ex.target = expansionTarget(g, t.tp, *w);
    ex.source = source;
    TrainingExample px;
    px.role = Role::Param;
    px.visuals = {feats[m]};
    px.program = linearize(g, se);
    px.target = paramTarget(g, se, w->bindings);
    px.source = source;
    if (static_cast<int>(px.target.size()) > g.caps().param_len) throw LengthOverflow("parameter target exceeds cap");
    out.push_back(std::move(ex));
    out.push_back(std::move(px));
  }
  return out;
}

// ---- Serialisation ------------------------------------------------------------------

json tripletToJson(const Domain& d, const GroupTriplet& t) {
  json j;
  j["domain"] = d.id();
  j["template"] = toText(d.grammar(), t.tp);
  j["programs"] = json::array();
  for (const auto& z : t.programs) j["programs"].push_back(toText(d.grammar(), z));
  j["canvases"] = json::array();
  for (const auto& c : t.visuals) j["canvases"].push_back(base64Encode(d.dump(c)));
  return j;
}

GroupTriplet tripletFromJson(const Domain& d, const json& j) {
  try {
    if (j.contains("domain") && j["domain"].get<std::string>() != d.id())
      throw DataError("triplet belongs to domain '" + j["domain"].get<std::string>() + "', expected '" + d.id() + "'");
    GroupTriplet t;
    t.tp = parseTemplateText(d.grammar(), j.at("template").get<std::string>());
    for (const auto& p : j.at("programs")) t.programs.push_back(parseProgramText(d.grammar(), p.get<std::string>()));
    for (const auto& c : j.at("canvases")) t.visuals.push_back(d.undump(base64Decode(c.get<std::string>())));
    if (t.programs.size() != t.visuals.size()) throw DataError("triplet has mismatched programs and canvases");
    for (const auto& z : t.programs)
      if (!conforms(d.grammar(), z, t.tp)) throw DataError("triplet program does not conform to its template");
    return t;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed triplet: ") + e.what());
  } catch (const ParseError& e) {
    throw DataError(std::string("malformed triplet: ") + e.what());
  }
}

std::string tripletsToJsonl(const Domain& d, const std::vector<GroupTriplet>& ts) {
  std::string out;
  for (const auto& t : ts) out += tripletToJson(d, t).dump() + "\n";
  return out;
}

std::vector<GroupTriplet> tripletsFromJsonl(const Domain& d, const std::string& text) {
  std::vector<GroupTriplet> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(tripletFromJson(d, json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tplprog
