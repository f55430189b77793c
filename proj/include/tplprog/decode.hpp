#pragma once

#include <array>
#include <memory>
#include <vector>

#include "tplprog/grammar.hpp"
#include "tplprog/ir.hpp"
#include "tplprog/synth.hpp"

namespace tplprog {

/// What the next token of a partially decoded sequence stands for.
enum class SlotKind : std::uint8_t { Node, Param, Marker, End, Done };

struct SlotInfo {
  SlotKind kind = SlotKind::Done;
  int category = -1;  // Node
  int type = -1;      // Param
};

/// Grammar state of one decoder target (template, hole fills or parameter
/// values). Every token in legal() keeps the sequence completable within all
/// sequence caps, so masked decoding cannot run past them.
class Cursor {
 public:
  static Cursor forTemplate(const Grammar& g);
  static Cursor forExpansion(const Grammar& g, const Template& tp);
  static Cursor forParams(const Grammar& g, const Expansion& se);

  Role role() const { return role_; }
  const Grammar& grammar() const { return *g_; }
  /// Emitted tokens, beginning with Start.
  const TokenSeq& tokens() const { return tokens_; }
  bool done() const { return done_; }
  SlotInfo slot() const;
  /// Legal next tokens in ascending token order; empty once done (or at a
  /// dead end, which only a counted-reference constraint can produce).
  const std::vector<Token>& legal() const { return legal_; }
  bool isLegal(const Token& t) const;
  /// Throws DecodeError on an illegal token.
  void push(const Token& t);

 private:
  struct Pending {
    bool node = true;
    int category = -1;
    int type = -1;
    int limit = 1 << 30;  // exclusive bound on the value index
  };
  // Template state.
  struct TState {
    std::vector<Pending> stack;
    int len = 1;
    int holes = 0, sentinels = 0, vars = 0;
    std::array<int, kMaxSharedVars> var_type{-1, -1, -1, -1};
    int deferred_exp = 0, deferred_prog = 0, deferred_params = 0;
    std::vector<int> counts;
  };
  // Expansion state.
  struct XState {
    int hole = 0;           // current hole slot
    bool in_fill = false;   // hole marker emitted, fill not finished
    std::vector<int> stack; // pending categories of the current fill
    int len = 1;
    int fill_params = 0, fill_tokens = 0;
    std::vector<int> counts;  // counted functions emitted in fills so far
  };
  // Parameter steps.
  struct PStep {
    bool forced = false;
    Token token;
    int type = -1;
    int limit = 0;
  };

  Cursor(const Grammar& g, Role r) : g_(&g), role_(r), tokens_{Token::start()} {}
  bool tApply(TState& s, const Token& t) const;
  bool tFeasible(const TState& s) const;
  bool xApply(XState& s, const Token& t) const;
  bool xFeasible(const XState& s) const;
  void refresh();

  const Grammar* g_;
  Role role_;
  TokenSeq tokens_;
  bool done_ = false;
  std::vector<Token> legal_;

  TState t_;

  XState x_;
  std::vector<int> hole_cat_;
  std::vector<std::vector<int>> counts_before_;  // per hole, per function
  std::vector<std::vector<int>> need_after_;     // per hole, fill counts needed once it closes
  int tp_len_ = 0, tp_preds_ = 0;

  std::vector<PStep> steps_;
  std::size_t step_ = 0;
};

// ---- Proposal models ------------------------------------------------------------

/// How visual conditioning enters a model: per-canvas tokens, masked out
/// (generative), or mean-pooled across the group (few-shot).
enum class VisualMode : std::uint8_t { Inference, Generative, FewShot };
const char* visualModeName(VisualMode m);

struct Conditioning {
  Role role = Role::Template;
  /// Feature vectors, one per canvas (Domain::features).
  std::vector<std::vector<double>> visuals;
  /// Conditioning program tokens (empty for templates).
  TokenSeq program;
};

/// Next-token scorer for one conditioning; advanced in lockstep with a Cursor.
class ProposalSession {
 public:
  virtual ~ProposalSession() = default;
  /// Unnormalised log-scores over the whole vocabulary (by token id) for the
  /// token after cursor.tokens(). Illegal entries are ignored by the decoder.
  virtual void scores(const Cursor& cursor, std::vector<double>& out) = 0;
  virtual void advance(const Token& t) = 0;
  virtual std::unique_ptr<ProposalSession> clone() const = 0;
};

class ProposalModel {
 public:
  virtual ~ProposalModel() = default;
  virtual std::string kind() const = 0;
  /// Session positioned just after Start.
  virtual std::unique_ptr<ProposalSession> start(const Conditioning& c) const = 0;
};

/// Visually blind proposal following weighted productions under the grammar
/// mask. Relation choices in templates follow hole/pin/share probabilities.
class GrammarPrior final : public ProposalModel {
 public:
  struct Config {
    std::map<std::string, double> weights;  // every function symbol
    double hole_prob = 0.25;
    double pin_prob = 0.35;
    double share_prob = 0.2;
  };
  /// Throws DataError when a production has no weight.
  GrammarPrior(const Grammar& g, Config cfg);
  static GrammarPrior fromSampler(const Domain& d, const SamplerConfig& cfg);

  std::string kind() const override { return "grammar-prior"; }
  std::unique_ptr<ProposalSession> start(const Conditioning& c) const override;
  void scores(const Cursor& cursor, std::vector<double>& out) const;

 private:
  const Grammar* g_;
  Config cfg_;
  std::vector<double> log_w_;
};

// ---- Decoding ----------------------------------------------------------------------

struct Decoded {
  TokenSeq tokens;
  double logp = 0.0;  // masked log-probability
};

/// Log-softmax of `scores` restricted to the cursor's legal tokens, in the
/// order of cursor.legal().
std::vector<double> maskedLogProbs(const Cursor& cursor, const std::vector<double>& scores, double temperature = 1.0);

/// Greedy (rng == nullptr) or temperature sampling. Throws DecodeError at a
/// dead end.
Decoded decodeOne(const ProposalModel& m, const Conditioning& c, Cursor cursor, Rng* rng = nullptr, double temperature = 1.0);

/// Union of the finished hypotheses of beams of width 1..width, so widening
/// never loses a candidate. Sorted by log-probability (descending), ties by
/// token order; at most `width * (width + 1) / 2` results.
std::vector<Decoded> beamSearch(const ProposalModel& m, const Conditioning& c, const Cursor& cursor, int width);

/// Masked log-probability of a complete sequence (Start..End). Throws
/// DecodeError when a token is illegal.
double sequenceLogProb(const ProposalModel& m, const Conditioning& c, Cursor cursor, const TokenSeq& tokens);

}  // namespace tplprog
