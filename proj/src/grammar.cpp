#include "tplprog/grammar.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "tplprog/errors.hpp"

namespace tplprog {

Grammar::Grammar(std::string domain_id, std::vector<std::string> categories, int root_category,
                 std::vector<ParamType> param_types, std::vector<FunctionSig> functions, SequenceCaps caps,
                 GrammarOptions options)
    : domain_id_(std::move(domain_id)),
      categories_(std::move(categories)),
      root_category_(root_category),
      param_types_(std::move(param_types)),
      functions_(std::move(functions)),
      caps_(caps),
      options_(options) {
  const int ncat = static_cast<int>(categories_.size());
  if (root_category_ < 0 || root_category_ >= ncat) throw TypeError("grammar: bad root category");
  by_category_.assign(static_cast<std::size_t>(ncat), {});
  for (int f = 0; f < functionCount(); ++f) {
    auto& sig = functions_[static_cast<std::size_t>(f)];
    if (sig.category < 0 || sig.category >= ncat) throw TypeError("grammar: bad category for " + sig.symbol);
    if (sig.param_names.size() != sig.param_types.size()) throw TypeError("grammar: param names for " + sig.symbol);
    if (sig.counts_function.empty()) sig.counts_function.assign(sig.param_types.size(), -1);
    for (int t : sig.param_types)
      if (t < 0 || t >= paramTypeCount()) throw TypeError("grammar: bad param type for " + sig.symbol);
    for (int c : sig.child_categories)
      if (c < 0 || c >= ncat) throw TypeError("grammar: bad child category for " + sig.symbol);
    by_category_[static_cast<std::size_t>(sig.category)].push_back(f);
  }

  // Cheapest completion per category, by fixed-point relaxation.
  constexpr int kInf = std::numeric_limits<int>::max() / 4;
  min_completion_.assign(static_cast<std::size_t>(ncat), Completion{kInf, kInf, kInf});
  for (bool changed = true; changed;) {
    changed = false;
    for (int f = 0; f < functionCount(); ++f) {
      const auto& sig = functions_[static_cast<std::size_t>(f)];
      Completion c{1 + sig.paramCount(), 1, sig.paramCount()};
      bool ok = true;
      for (int child : sig.child_categories) {
        const auto& cc = min_completion_[static_cast<std::size_t>(child)];
        if (cc.tokens >= kInf) {
          ok = false;
          break;
        }
        c.tokens += cc.tokens;
        c.functions += cc.functions;
        c.params += cc.params;
      }
      if (!ok) continue;
      auto& cur = min_completion_[static_cast<std::size_t>(sig.category)];
      if (c.tokens < cur.tokens || (c.tokens == cur.tokens && c.params < cur.params)) {
        cur = c;
        changed = true;
      }
    }
  }
  for (int c = 0; c < ncat; ++c)
    if (min_completion_[static_cast<std::size_t>(c)].tokens >= kInf)
      throw TypeError("grammar: category " + categories_[static_cast<std::size_t>(c)] + " has no finite derivation");

  int id = fn_offset_ + functionCount();
  value_offset_.resize(param_types_.size());
  for (std::size_t t = 0; t < param_types_.size(); ++t) {
    value_offset_[t] = id;
    id += param_types_[t].size();
  }
  hole_offset_ = id;
  sentinel_offset_ = hole_offset_ + kMaxHoles;
  shared_offset_ = sentinel_offset_ + kMaxSentinels;
  vocab_size_ = shared_offset_ + kMaxSharedVars;
}

int Grammar::functionId(std::string_view symbol) const {
  for (int f = 0; f < functionCount(); ++f)
    if (functions_[static_cast<std::size_t>(f)].symbol == symbol) return f;
  return -1;
}

int Grammar::paramTypeId(std::string_view name) const {
  for (int t = 0; t < paramTypeCount(); ++t)
    if (param_types_[static_cast<std::size_t>(t)].name == name) return t;
  return -1;
}

int Grammar::categoryId(std::string_view name) const {
  for (std::size_t c = 0; c < categories_.size(); ++c)
    if (categories_[c] == name) return static_cast<int>(c);
  return -1;
}

bool Grammar::relatable(int type) const {
  if (!options_.relations) return false;
  const auto& pt = paramType(type);
  return pt.relatable || (pt.fine && options_.float_relations);
}

int Grammar::tokenId(const Token& t) const {
  switch (t.kind) {
    case TokenKind::Start: return 0;
    case TokenKind::End: return 1;
    case TokenKind::Function: return fn_offset_ + t.a;
    case TokenKind::ParamValue: return value_offset_.at(static_cast<std::size_t>(t.a)) + t.b;
    case TokenKind::Hole: return hole_offset_ + t.a;
    case TokenKind::Sentinel: return sentinel_offset_ + t.a;
    case TokenKind::Shared: return shared_offset_ + t.a;
  }
  return -1;
}

Token Grammar::token(int id) const {
  if (id < 0 || id >= vocab_size_) throw ParseError("token id out of range", static_cast<std::size_t>(id));
  if (id == 0) return Token::start();
  if (id == 1) return Token::end();
  if (id < fn_offset_ + functionCount()) return Token::function(id - fn_offset_);
  if (id < hole_offset_) {
    for (int t = paramTypeCount() - 1; t >= 0; --t)
      if (id >= value_offset_[static_cast<std::size_t>(t)]) return Token::value(t, id - value_offset_[static_cast<std::size_t>(t)]);
  }
  if (id < sentinel_offset_) return Token::hole(id - hole_offset_);
  if (id < shared_offset_) return Token::sentinel(id - sentinel_offset_);
  return Token::shared(id - shared_offset_);
}

std::vector<int> Grammar::encode(const TokenSeq& seq) const {
  std::vector<int> ids;
  ids.reserve(seq.size());
  for (const auto& t : seq) ids.push_back(tokenId(t));
  return ids;
}

TokenSeq Grammar::decode(const std::vector<int>& ids) const {
  TokenSeq seq;
  seq.reserve(ids.size());
  for (int id : ids) seq.push_back(token(id));
  return seq;
}

std::string Grammar::tokenName(const Token& t) const {
  switch (t.kind) {
    case TokenKind::Start: return "<s>";
    case TokenKind::End: return "</s>";
    case TokenKind::Function: return function(t.a).symbol;
    case TokenKind::ParamValue: {
      const auto& pt = paramType(t.a);
      return pt.name + "=" + pt.labels.at(static_cast<std::size_t>(t.b));
    }
    case TokenKind::Hole: return "HOLE" + std::to_string(t.a);
    case TokenKind::Sentinel: return "?" + std::to_string(t.a);
    case TokenKind::Shared: return "V" + std::to_string(t.a);
  }
  return "?";
}

int Grammar::valueIndex(int type, double v) const {
  const auto& pt = paramType(type);
  for (int i = 0; i < pt.size(); ++i)
    if (std::abs(pt.values[static_cast<std::size_t>(i)] - v) < 1e-6) return i;
  return -1;
}

std::string formatValue(double v) {
  if (std::abs(v) < 1e-12) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ParamType numericType(std::string name, int lo, int hi, double scale, double shift, bool fine, double preferred) {
  ParamType pt;
  pt.name = std::move(name);
  pt.fine = fine;
  pt.relatable = !fine;
  double best = std::numeric_limits<double>::infinity();
  for (int i = lo; i <= hi; ++i) {
    const double v = scale * i + shift;
    pt.values.push_back(v);
    pt.labels.push_back(formatValue(v));
    const double d = std::abs(v - preferred);
    if (d < best - 1e-12) {
      best = d;
      pt.default_index = i - lo;
    }
  }
  return pt;
}

ParamType categoricalType(std::string name, std::vector<std::string> labels) {
  ParamType pt;
  pt.name = std::move(name);
  pt.categorical = true;
  for (std::size_t i = 0; i < labels.size(); ++i) pt.values.push_back(static_cast<double>(i));
  pt.labels = std::move(labels);
  return pt;
}

}  // namespace tplprog
