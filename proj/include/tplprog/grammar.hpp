#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tplprog {

inline constexpr int kMaxHoles = 5;
inline constexpr int kMaxSentinels = 64;
inline constexpr int kMaxSharedVars = 4;

enum class TokenKind : std::uint8_t { Start, End, Function, ParamValue, Hole, Sentinel, Shared };

/// One atom of a linearized program. `a` carries the function id, param-type
/// id, hole slot, sentinel slot or shared-variable id; `b` carries the value
/// index of a ParamValue.
struct Token {
  TokenKind kind = TokenKind::Start;
  std::int16_t a = 0;
  std::int16_t b = 0;

  static Token start() { return {TokenKind::Start, 0, 0}; }
  static Token end() { return {TokenKind::End, 0, 0}; }
  static Token function(int fn) { return {TokenKind::Function, static_cast<std::int16_t>(fn), 0}; }
  static Token value(int type, int index) {
    return {TokenKind::ParamValue, static_cast<std::int16_t>(type), static_cast<std::int16_t>(index)};
  }
  static Token hole(int slot) { return {TokenKind::Hole, static_cast<std::int16_t>(slot), 0}; }
  static Token sentinel(int slot) { return {TokenKind::Sentinel, static_cast<std::int16_t>(slot), 0}; }
  static Token shared(int var) { return {TokenKind::Shared, static_cast<std::int16_t>(var), 0}; }

  friend auto operator<=>(const Token&, const Token&) = default;
};

using TokenSeq = std::vector<Token>;

/// Length caps for the three decoder target sequences plus the longest
/// conditioning program (a structural expansion or a concrete program).
struct SequenceCaps {
  int template_len = 64;
  int expansion_len = 16;
  int param_len = 72;
  int program_len = 160;
};

/// A finite value set. Categorical types print their labels bare; numeric
/// types print as `name=value`.
struct ParamType {
  std::string name;
  std::vector<double> values;
  std::vector<std::string> labels;
  bool categorical = false;
  /// Coarse or categorical; fine deltas are never relatable unless the grammar
  /// is built with float relations enabled.
  bool relatable = true;
  bool fine = false;
  /// Value used when a numeric parameter is omitted from program text.
  int default_index = 0;

  int size() const { return static_cast<int>(values.size()); }
};

struct FunctionSig {
  std::string symbol;
  int category = 0;
  std::vector<int> param_types;
  std::vector<std::string> param_names;
  std::vector<int> child_categories;
  /// Per parameter: if >= 0, the value index must be smaller than the number
  /// of nodes calling that function that precede this node in pre-order
  /// (used for MOVE's stroke index).
  std::vector<int> counts_function;

  int arity() const { return static_cast<int>(child_categories.size()); }
  int paramCount() const { return static_cast<int>(param_types.size()); }
};

/// Ablation switches over what Template Programs may express.
struct GrammarOptions {
  bool holes = true;
  bool relations = true;
  bool float_relations = false;
};

/// A fixed typed grammar for one domain plus its token codec.
class Grammar {
 public:
  Grammar(std::string domain_id, std::vector<std::string> categories, int root_category,
          std::vector<ParamType> param_types, std::vector<FunctionSig> functions, SequenceCaps caps,
          GrammarOptions options = {});

  const std::string& domainId() const { return domain_id_; }
  const std::vector<std::string>& categories() const { return categories_; }
  int rootCategory() const { return root_category_; }
  const SequenceCaps& caps() const { return caps_; }
  const GrammarOptions& options() const { return options_; }

  int functionCount() const { return static_cast<int>(functions_.size()); }
  const FunctionSig& function(int fn) const { return functions_.at(static_cast<std::size_t>(fn)); }
  const std::vector<FunctionSig>& functions() const { return functions_; }
  int paramTypeCount() const { return static_cast<int>(param_types_.size()); }
  const ParamType& paramType(int type) const { return param_types_.at(static_cast<std::size_t>(type)); }

  /// -1 when absent.
  int functionId(std::string_view symbol) const;
  int paramTypeId(std::string_view name) const;
  int categoryId(std::string_view name) const;

  const std::vector<int>& functionsOf(int category) const { return by_category_.at(static_cast<std::size_t>(category)); }
  bool isLeaf(int fn) const { return function(fn).child_categories.empty(); }
  bool relatable(int type) const;

  /// Cheapest completion of a subtree of `category`: a fixed achievable choice
  /// (not independent minima) so that budget checks never dead-end.
  struct Completion {
    int tokens = 0;     // full linearization: functions + one token per param
    int functions = 0;  // function tokens only
    int params = 0;     // parameter slots
  };
  const Completion& minCompletion(int category) const { return min_completion_.at(static_cast<std::size_t>(category)); }

  // Token codec: dense ids used by the neural decoders.
  int vocabSize() const { return vocab_size_; }
  int tokenId(const Token& t) const;
  Token token(int id) const;
  std::vector<int> encode(const TokenSeq& seq) const;
  TokenSeq decode(const std::vector<int>& ids) const;
  std::string tokenName(const Token& t) const;

  /// Index of the value closest to `v` within 1e-6, or -1.
  int valueIndex(int type, double v) const;

 private:
  std::string domain_id_;
  std::vector<std::string> categories_;
  int root_category_;
  std::vector<ParamType> param_types_;
  std::vector<FunctionSig> functions_;
  SequenceCaps caps_;
  GrammarOptions options_;
  std::vector<std::vector<int>> by_category_;
  std::vector<Completion> min_completion_;
  std::vector<int> value_offset_;
  int fn_offset_ = 2;
  int hole_offset_ = 0;
  int sentinel_offset_ = 0;
  int shared_offset_ = 0;
  int vocab_size_ = 0;
};

/// Builds a numeric value set `scale * i + shift` for i in [lo, hi].
ParamType numericType(std::string name, int lo, int hi, double scale, double shift, bool fine, double preferred);
ParamType categoricalType(std::string name, std::vector<std::string> labels);

/// Formats a value compactly ("0.5", "-0.025", "45").
std::string formatValue(double v);

}  // namespace tplprog
