#include "tplprog/decode.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

#include "tplprog/errors.hpp"

namespace tplprog {
namespace {

constexpr int kUnbounded = 1 << 30;

// Exclusive bound for parameter `i` of `sig`, given counts of preceding calls.
int limitFor(const FunctionSig& sig, std::size_t i, const std::vector<int>& counts, bool unknown_before) {
  const int cf = sig.counts_function[i];
  if (cf < 0 || unknown_before) return kUnbounded;
  return counts[static_cast<std::size_t>(cf)];
}

bool hasCountedParam(const FunctionSig& sig) {
  return std::any_of(sig.counts_function.begin(), sig.counts_function.end(), [](int c) { return c >= 0; });
}

}  // namespace

// ---- Template cursor --------------------------------------------------------------

Cursor Cursor::forTemplate(const Grammar& g) {
  Cursor c(g, Role::Template);
  c.t_.stack.push_back({true, g.rootCategory(), -1, kUnbounded});
  c.t_.counts.assign(static_cast<std::size_t>(g.functionCount()), 0);
  c.refresh();
  return c;
}

bool Cursor::tFeasible(const TState& s) const {
  const auto& caps = g_->caps();
  int tokens = s.len + 1, params = 0, prog = s.len - s.holes + s.deferred_prog + 1;
  for (const auto& p : s.stack) {
    if (p.node) {
      const auto& mc = g_->minCompletion(p.category);
      tokens += mc.tokens;
      prog += mc.tokens;
      params += mc.params;
    } else {
      tokens += 1;
      prog += 1;
      params += 1;
    }
  }
  const int preds = s.sentinels + s.vars + s.deferred_params + params;
  return tokens <= caps.template_len && prog <= caps.program_len && 2 + 2 * preds <= caps.param_len &&
         2 + s.deferred_exp <= caps.expansion_len;
}

bool Cursor::tApply(TState& s, const Token& t) const {
  if (s.stack.empty()) return t.kind == TokenKind::End;
  const Pending p = s.stack.back();
  if (p.node) {
    if (t.kind == TokenKind::Hole) {
      if (!g_->options().holes || t.a != s.holes || s.holes >= kMaxHoles) return false;
      const auto& mc = g_->minCompletion(p.category);
      s.stack.pop_back();
      ++s.holes;
      ++s.len;
      s.deferred_exp += 1 + mc.functions;
      s.deferred_prog += mc.tokens;
      s.deferred_params += mc.params;
      return tFeasible(s);
    }
    if (t.kind != TokenKind::Function || t.a < 0 || t.a >= g_->functionCount()) return false;
    const auto& sig = g_->function(t.a);
    if (sig.category != p.category) return false;
    // A counted reference needs at least one earlier call unless a hole
    // (which may hide calls) precedes.
    const bool unknown = s.holes > 0;
    if (hasCountedParam(sig) && !unknown)
      for (std::size_t i = 0; i < sig.counts_function.size(); ++i)
        if (sig.counts_function[i] >= 0 && s.counts[static_cast<std::size_t>(sig.counts_function[i])] == 0) return false;
    s.stack.pop_back();
    for (int i = sig.arity() - 1; i >= 0; --i) s.stack.push_back({true, sig.child_categories[static_cast<std::size_t>(i)], -1, kUnbounded});
    for (int i = sig.paramCount() - 1; i >= 0; --i)
      s.stack.push_back({false, -1, sig.param_types[static_cast<std::size_t>(i)], limitFor(sig, static_cast<std::size_t>(i), s.counts, unknown)});
    ++s.counts[static_cast<std::size_t>(t.a)];
    ++s.len;
    return tFeasible(s);
  }
  const bool rel = g_->relatable(p.type);
  switch (t.kind) {
    case TokenKind::ParamValue:
      if (!rel || t.a != p.type || t.b < 0 || t.b >= g_->paramType(p.type).size() || t.b >= p.limit) return false;
      break;
    case TokenKind::Sentinel:
      if (t.a != s.sentinels || s.sentinels >= kMaxSentinels) return false;
      ++s.sentinels;
      break;
    case TokenKind::Shared:
      if (!rel || t.a < 0 || t.a > s.vars || t.a >= kMaxSharedVars) return false;
      if (t.a == s.vars) {
        // New variables take the lowest unused id.
        s.var_type[static_cast<std::size_t>(t.a)] = p.type;
        ++s.vars;
      } else if (s.var_type[static_cast<std::size_t>(t.a)] != p.type) {
        return false;
      }
      break;
    default:
      return false;
  }
  s.stack.pop_back();
  ++s.len;
  return tFeasible(s);
}

// ---- Expansion cursor -------------------------------------------------------------

Cursor Cursor::forExpansion(const Grammar& g, const Template& tp) {
  Cursor c(g, Role::Expansion);
  const int nf = g.functionCount();
  const int k = tp.holeCount();
  c.hole_cat_.assign(static_cast<std::size_t>(k), -1);
  c.counts_before_.assign(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(nf), 0));
  c.need_after_.assign(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(nf), 0));
  std::vector<int> counts(static_cast<std::size_t>(nf), 0);
  int holes_seen = 0;
  for (const auto& path : preorderPaths(tp.root())) {
    const Expr& e = nodeAt(tp.root(), path);
    if (e.isHole()) {
      c.hole_cat_[static_cast<std::size_t>(e.hole)] = categoryAt(g, tp.root(), path);
      c.counts_before_[static_cast<std::size_t>(e.hole)] = counts;
      ++holes_seen;
      continue;
    }
    const auto& sig = g.function(e.fn);
    for (std::size_t i = 0; i < sig.counts_function.size(); ++i) {
      const int cf = sig.counts_function[i];
      if (cf < 0 || holes_seen == 0) continue;
      const int req = e.args[i].kind == ArgKind::Value ? e.args[i].index + 1 : 1;
      int& need = c.need_after_[static_cast<std::size_t>(holes_seen - 1)][static_cast<std::size_t>(cf)];
      need = std::max(need, req - counts[static_cast<std::size_t>(cf)]);
    }
    ++counts[static_cast<std::size_t>(e.fn)];
  }
  const TokenSeq tl = linearize(g, tp);
  c.tp_len_ = static_cast<int>(tl.size());
  c.tp_preds_ = 0;
  std::array<bool, kMaxSharedVars> seen{};
  for (const auto& t : tl) {
    if (t.kind == TokenKind::Sentinel) ++c.tp_preds_;
    if (t.kind == TokenKind::Shared && !seen[static_cast<std::size_t>(t.a)]) seen[static_cast<std::size_t>(t.a)] = true, ++c.tp_preds_;
  }
  c.x_.counts.assign(static_cast<std::size_t>(nf), 0);
  c.refresh();
  return c;
}

bool Cursor::xFeasible(const XState& s) const {
  const auto& caps = g_->caps();
  int exp = s.len + 1, params = s.fill_params, prog = tp_len_ - static_cast<int>(hole_cat_.size()) + s.fill_tokens;
  for (int cat : s.stack) {
    const auto& mc = g_->minCompletion(cat);
    exp += mc.functions;
    params += mc.params;
    prog += mc.tokens;
  }
  const int first_future = s.in_fill ? s.hole + 1 : s.hole;
  for (std::size_t k = static_cast<std::size_t>(first_future); k < hole_cat_.size(); ++k) {
    const auto& mc = g_->minCompletion(hole_cat_[k]);
    exp += 1 + mc.functions;
    params += mc.params;
    prog += mc.tokens;
  }
  return exp <= caps.expansion_len && prog <= caps.program_len && 2 + 2 * (tp_preds_ + params) <= caps.param_len;
}

bool Cursor::xApply(XState& s, const Token& t) const {
  const int nholes = static_cast<int>(hole_cat_.size());
  if (!s.in_fill) {
    if (s.hole >= nholes) return t.kind == TokenKind::End;
    if (t.kind != TokenKind::Hole || t.a != s.hole) return false;
    s.in_fill = true;
    s.stack = {hole_cat_[static_cast<std::size_t>(s.hole)]};
    ++s.len;
    return xFeasible(s);
  }
  if (t.kind != TokenKind::Function || t.a < 0 || t.a >= g_->functionCount()) return false;
  const auto& sig = g_->function(t.a);
  if (sig.category != s.stack.back()) return false;
  const auto& before = counts_before_[static_cast<std::size_t>(s.hole)];
  for (std::size_t i = 0; i < sig.counts_function.size(); ++i) {
    const int cf = sig.counts_function[i];
    if (cf >= 0 && before[static_cast<std::size_t>(cf)] + s.counts[static_cast<std::size_t>(cf)] == 0) return false;
  }
  s.stack.pop_back();
  for (int i = sig.arity() - 1; i >= 0; --i) s.stack.push_back(sig.child_categories[static_cast<std::size_t>(i)]);
  ++s.counts[static_cast<std::size_t>(t.a)];
  ++s.len;
  s.fill_params += sig.paramCount();
  s.fill_tokens += 1 + sig.paramCount();
  if (s.stack.empty()) {
    const auto& need = need_after_[static_cast<std::size_t>(s.hole)];
    for (std::size_t f = 0; f < need.size(); ++f)
      if (s.counts[f] < need[f]) return false;
    s.in_fill = false;
    ++s.hole;
  }
  return xFeasible(s);
}

// ---- Parameter cursor -------------------------------------------------------------

Cursor Cursor::forParams(const Grammar& g, const Expansion& se) {
  Cursor c(g, Role::Param);
  struct Slot {
    int type;
    ArgKind kind;
    int index;
    int limit;
  };
  std::vector<Slot> slots;
  std::vector<int> counts(static_cast<std::size_t>(g.functionCount()), 0);
  for (const auto& path : preorderPaths(se.root())) {
    const Expr& e = nodeAt(se.root(), path);
    if (e.isHole()) throw DecodeError("parameter decoding needs a structural expansion without holes");
    const auto& sig = g.function(e.fn);
    for (std::size_t i = 0; i < e.args.size(); ++i)
      slots.push_back({sig.param_types[i], e.args[i].kind, e.args[i].index, limitFor(sig, i, counts, false)});
    ++counts[static_cast<std::size_t>(e.fn)];
  }
  std::array<int, kMaxSharedVars> var_limit;
  var_limit.fill(kUnbounded);
  for (const auto& s : slots)
    if (s.kind == ArgKind::Shared) var_limit[static_cast<std::size_t>(s.index)] = std::min(var_limit[static_cast<std::size_t>(s.index)], s.limit);
  std::array<bool, kMaxSharedVars> seen{};
  int sentinel = 0;
  for (const auto& s : slots) {
    if (s.kind == ArgKind::Free) {
      c.steps_.push_back({true, Token::sentinel(sentinel++), -1, 0});
      c.steps_.push_back({false, Token{}, s.type, s.limit});
    } else if (s.kind == ArgKind::Shared && !seen[static_cast<std::size_t>(s.index)]) {
      seen[static_cast<std::size_t>(s.index)] = true;
      c.steps_.push_back({true, Token::shared(s.index), -1, 0});
      c.steps_.push_back({false, Token{}, s.type, var_limit[static_cast<std::size_t>(s.index)]});
    }
  }
  c.steps_.push_back({true, Token::end(), -1, 0});
  c.refresh();
  return c;
}

// ---- Shared ------------------------------------------------------------------------

SlotInfo Cursor::slot() const {
  if (done_) return {};
  switch (role_) {
    case Role::Template:
      if (t_.stack.empty()) return {SlotKind::End};
      if (t_.stack.back().node) return {SlotKind::Node, t_.stack.back().category, -1};
      return {SlotKind::Param, -1, t_.stack.back().type};
    case Role::Expansion:
      if (x_.in_fill) return {SlotKind::Node, x_.stack.back(), -1};
      return {x_.hole >= static_cast<int>(hole_cat_.size()) ? SlotKind::End : SlotKind::Marker};
    case Role::Param: {
      const PStep& st = steps_[step_];
      if (!st.forced) return {SlotKind::Param, -1, st.type};
      return {st.token.kind == TokenKind::End ? SlotKind::End : SlotKind::Marker};
    }
  }
  return {};
}

bool Cursor::isLegal(const Token& t) const { return std::binary_search(legal_.begin(), legal_.end(), t); }

void Cursor::push(const Token& t) {
  if (done_ || !isLegal(t)) throw DecodeError("illegal token " + g_->tokenName(t) + " at position " + std::to_string(tokens_.size()));
  switch (role_) {
    case Role::Template: tApply(t_, t); break;
    case Role::Expansion: xApply(x_, t); break;
    case Role::Param: ++step_; break;
  }
  tokens_.push_back(t);
  if (t.kind == TokenKind::End) done_ = true;
  refresh();
}

void Cursor::refresh() {
  legal_.clear();
  if (done_) return;
  std::vector<Token> cand;
  const SlotInfo s = slot();
  switch (role_) {
    case Role::Template:
      if (s.kind == SlotKind::End) {
        cand.push_back(Token::end());
      } else if (s.kind == SlotKind::Node) {
        for (int f : g_->functionsOf(s.category)) cand.push_back(Token::function(f));
        cand.push_back(Token::hole(t_.holes));
      } else {
        const int n = g_->paramType(s.type).size();
        for (int v = 0; v < n; ++v) cand.push_back(Token::value(s.type, v));
        cand.push_back(Token::sentinel(t_.sentinels));
        for (int v = 0; v <= std::min(t_.vars, kMaxSharedVars - 1); ++v) cand.push_back(Token::shared(v));
      }
      for (const auto& t : cand) {
        TState copy = t_;
        if (tApply(copy, t)) legal_.push_back(t);
      }
      break;
    case Role::Expansion:
      if (s.kind == SlotKind::End) {
        cand.push_back(Token::end());
      } else if (s.kind == SlotKind::Marker) {
        cand.push_back(Token::hole(x_.hole));
      } else {
        for (int f : g_->functionsOf(s.category)) cand.push_back(Token::function(f));
      }
      for (const auto& t : cand) {
        XState copy = x_;
        if (xApply(copy, t)) legal_.push_back(t);
      }
      break;
    case Role::Param: {
      const PStep& st = steps_[step_];
      if (st.forced) {
        legal_.push_back(st.token);
      } else {
        const int n = std::min(g_->paramType(st.type).size(), st.limit);
        for (int v = 0; v < n; ++v) legal_.push_back(Token::value(st.type, v));
      }
      break;
    }
  }
  std::sort(legal_.begin(), legal_.end());
}

// ---- Grammar prior ----------------------------------------------------------------

const char* visualModeName(VisualMode m) {
  switch (m) {
    case VisualMode::Inference: return "inference";
    case VisualMode::Generative: return "generative";
    case VisualMode::FewShot: return "few-shot";
  }
  return "?";
}

namespace {

class PriorSession final : public ProposalSession {
 public:
  explicit PriorSession(const GrammarPrior& p) : p_(&p) {}
  void scores(const Cursor& cursor, std::vector<double>& out) override { p_->scores(cursor, out); }
  void advance(const Token&) override {}
  std::unique_ptr<ProposalSession> clone() const override { return std::make_unique<PriorSession>(*this); }

 private:
  const GrammarPrior* p_;
};

}  // namespace

GrammarPrior::GrammarPrior(const Grammar& g, Config cfg) : g_(&g), cfg_(std::move(cfg)) {
  for (int f = 0; f < g.functionCount(); ++f) {
    const auto it = cfg_.weights.find(g.function(f).symbol);
    if (it == cfg_.weights.end()) throw DataError("grammar prior: no weight for production " + g.function(f).symbol);
    if (!(it->second >= 0.0)) throw DataError("grammar prior: negative weight for " + g.function(f).symbol);
    log_w_.push_back(std::log(it->second));
  }
  for (double p : {cfg_.hole_prob, cfg_.pin_prob, cfg_.share_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("grammar prior: probabilities must lie in [0, 1]");
  if (cfg_.pin_prob + cfg_.share_prob > 1.0) throw DataError("grammar prior: pin + share probability exceeds 1");
}

GrammarPrior GrammarPrior::fromSampler(const Domain& d, const SamplerConfig& sc) {
  Config c;
  c.weights = defaultWeights(d);
  for (const auto& [k, v] : sc.weights) c.weights[k] = v;
  c.hole_prob = sc.hole_prob;
  c.pin_prob = sc.pin_prob;
  c.share_prob = sc.share_prob;
  return GrammarPrior(d.grammar(), c);
}

std::unique_ptr<ProposalSession> GrammarPrior::start(const Conditioning&) const { return std::make_unique<PriorSession>(*this); }

void GrammarPrior::scores(const Cursor& cursor, std::vector<double>& out) const {
  const Grammar& g = *g_;
  out.assign(static_cast<std::size_t>(g.vocabSize()), 0.0);
  const SlotInfo s = cursor.slot();
  const auto logOr = [](double p) { return p > 0 ? std::log(p) : -std::numeric_limits<double>::infinity(); };
  if (s.kind == SlotKind::Node) {
    for (int f = 0; f < g.functionCount(); ++f) out[static_cast<std::size_t>(g.tokenId(Token::function(f)))] = log_w_[static_cast<std::size_t>(f)];
    if (cursor.role() == Role::Template) {
      double total = 0;
      for (int f : g.functionsOf(s.category)) total += std::exp(log_w_[static_cast<std::size_t>(f)]);
      const double hole_w = cfg_.hole_prob >= 1.0 ? 1e300 : total * cfg_.hole_prob / (1.0 - cfg_.hole_prob);
      for (int k = 0; k < kMaxHoles; ++k) out[static_cast<std::size_t>(g.tokenId(Token::hole(k)))] = logOr(hole_w);
    }
    return;
  }
  if (s.kind != SlotKind::Param || cursor.role() != Role::Template) return;  // uniform
  int values = 0, shared = 0;
  for (const auto& t : cursor.legal()) {
    values += t.kind == TokenKind::ParamValue;
    shared += t.kind == TokenKind::Shared;
  }
  const double free_p = 1.0 - cfg_.pin_prob - cfg_.share_prob;
  for (const auto& t : cursor.legal()) {
    double p = 0;
    if (t.kind == TokenKind::ParamValue) p = cfg_.pin_prob / values;
    if (t.kind == TokenKind::Sentinel) p = free_p;
    if (t.kind == TokenKind::Shared) p = cfg_.share_prob / shared;
    out[static_cast<std::size_t>(g.tokenId(t))] = logOr(p);
  }
}

// ---- Decoding ---------------------------------------------------------------------

std::vector<double> maskedLogProbs(const Cursor& cursor, const std::vector<double>& scores, double temperature) {
  const Grammar& g = cursor.grammar();
  const auto& legal = cursor.legal();
  std::vector<double> lp(legal.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < legal.size(); ++i) {
    lp[i] = scores[static_cast<std::size_t>(g.tokenId(legal[i]))] / temperature;
    mx = std::max(mx, lp[i]);
  }
  if (!std::isfinite(mx)) {
    // Every legal token scored -inf: fall back to uniform.
    std::fill(lp.begin(), lp.end(), -std::log(static_cast<double>(legal.size())));
    return lp;
  }
  double z = 0;
  for (double v : lp) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  for (double& v : lp) v -= lz;
  return lp;
}

Decoded decodeOne(const ProposalModel& m, const Conditioning& c, Cursor cursor, Rng* rng, double temperature) {
  auto session = m.start(c);
  Decoded out;
  std::vector<double> sc;
  while (!cursor.done()) {
    if (cursor.legal().empty()) throw DecodeError("no legal continuation after " + tokensToString(cursor.grammar(), cursor.tokens()));
    session->scores(cursor, sc);
    const auto lp = maskedLogProbs(cursor, sc, rng ? temperature : 1.0);
    std::size_t pick = 0;
    if (rng) {
      std::vector<double> w(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) w[i] = std::exp(lp[i]);
      pick = static_cast<std::size_t>(rng->categorical(w));
    } else {
      pick = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    }
    const Token t = cursor.legal()[pick];
    if (rng && temperature != 1.0) {
      out.logp += maskedLogProbs(cursor, sc, 1.0)[pick];
    } else {
      out.logp += lp[pick];
    }
    cursor.push(t);
    session->advance(t);
  }
  out.tokens = cursor.tokens();
  return out;
}

double sequenceLogProb(const ProposalModel& m, const Conditioning& c, Cursor cursor, const TokenSeq& tokens) {
  if (tokens.empty() || tokens.front().kind != TokenKind::Start) throw DecodeError("sequence must begin with Start");
  auto session = m.start(c);
  double total = 0;
  std::vector<double> sc;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto& legal = cursor.legal();
    const auto it = std::lower_bound(legal.begin(), legal.end(), tokens[i]);
    if (it == legal.end() || !(*it == tokens[i])) throw DecodeError("illegal token " + cursor.grammar().tokenName(tokens[i]));
    session->scores(cursor, sc);
    total += maskedLogProbs(cursor, sc)[static_cast<std::size_t>(it - legal.begin())];
    cursor.push(tokens[i]);
    session->advance(tokens[i]);
  }
  if (!cursor.done()) throw DecodeError("sequence ends before End");
  return total;
}

namespace {

// Prefix trie shared by the beams of different widths: each node is scored once.
class BeamTrie {
 public:
  struct Node {
    Node(Cursor c, std::unique_ptr<ProposalSession> s, double lp) : cursor(std::move(c)), session(std::move(s)), logp(lp) {}
    Cursor cursor;
    std::unique_ptr<ProposalSession> session;
    double logp = 0;
    bool expanded = false;
    std::vector<double> next_lp;  // aligned with cursor.legal()
    std::map<std::size_t, int> children;
  };

  BeamTrie(const ProposalModel& m, const Conditioning& c, const Cursor& root) {
    nodes_.emplace_back(root, m.start(c), 0.0);
  }

  Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }

  void expand(int i) {
    Node& n = node(i);
    if (n.expanded) return;
    n.expanded = true;
    if (n.cursor.done()) return;
    n.session->scores(n.cursor, scratch_);
    n.next_lp = maskedLogProbs(n.cursor, scratch_);
  }

  int child(int i, std::size_t k) {
    {
      Node& n = node(i);
      const auto it = n.children.find(k);
      if (it != n.children.end()) return it->second;
    }
    Node& n = node(i);
    Node c(n.cursor, n.session->clone(), n.logp + n.next_lp[k]);
    const Token t = n.cursor.legal()[k];
    c.cursor.push(t);
    c.session->advance(t);
    const int id = static_cast<int>(nodes_.size());
    nodes_[static_cast<std::size_t>(i)].children[k] = id;
    nodes_.push_back(std::move(c));
    return id;
  }

 private:
  std::deque<Node> nodes_;
  std::vector<double> scratch_;
};

}  // namespace

std::vector<Decoded> beamSearch(const ProposalModel& m, const Conditioning& c, const Cursor& cursor, int width) {
  if (width < 1) throw DecodeError("beam width must be positive");
  BeamTrie trie(m, c, cursor);
  // Hypothesis ordering: higher log-probability first, then token order.
  const auto better = [&](int a, int b) {
    const auto& na = trie.node(a);
    const auto& nb = trie.node(b);
    if (na.logp != nb.logp) return na.logp > nb.logp;
    return na.cursor.tokens() < nb.cursor.tokens();
  };
  std::vector<int> finals;
  for (int w = 1; w <= width; ++w) {
    std::vector<int> beam{0};
    for (;;) {
      bool open = false;
      for (int id : beam) open = open || !trie.node(id).cursor.done();
      if (!open) break;
      std::vector<int> cand;
      for (int id : beam) {
        if (trie.node(id).cursor.done()) {
          cand.push_back(id);
          continue;
        }
        trie.expand(id);
        const std::size_t nk = trie.node(id).cursor.legal().size();
        // Only the best `w` children of a node can survive the cut.
        std::vector<std::size_t> order(nk);
        for (std::size_t k = 0; k < nk; ++k) order[k] = k;
        const auto& lp = trie.node(id).next_lp;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lp[a] > lp[b]; });
        for (std::size_t k = 0; k < std::min<std::size_t>(nk, static_cast<std::size_t>(w)); ++k) cand.push_back(trie.child(id, order[k]));
      }
      std::sort(cand.begin(), cand.end(), better);
      if (static_cast<int>(cand.size()) > w) cand.resize(static_cast<std::size_t>(w));
      beam = std::move(cand);
    }
    for (int id : beam)
      if (std::find(finals.begin(), finals.end(), id) == finals.end()) finals.push_back(id);
  }
  std::sort(finals.begin(), finals.end(), better);
  std::vector<Decoded> out;
  for (int id : finals) out.push_back({trie.node(id).cursor.tokens(), trie.node(id).logp});
  return out;
}

}  // namespace tplprog
