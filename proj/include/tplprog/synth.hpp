#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tplprog/canvas.hpp"
#include "tplprog/domain.hpp"
#include "tplprog/ir.hpp"
#include "tplprog/util.hpp"

namespace tplprog {

struct SamplerConfig {
  int max_depth = 6;
  /// Production weights by function symbol; symbols not listed use the
  /// domain default table.
  std::map<std::string, double> weights;
  int group_size = 5;
  double hole_prob = 0.25;
  double pin_prob = 0.35;
  double share_prob = 0.2;
  bool allow_root_hole = false;
  int retries = 32;
  std::uint64_t seed = 0;

  nlohmann::json toJson() const;
  /// Unknown keys are rejected.
  static SamplerConfig fromJson(const nlohmann::json& j);
  void validate() const;
};

/// Default production weights for a domain.
std::map<std::string, double> defaultWeights(const Domain& d);
/// Domain-flavoured defaults (depth, weights).
SamplerConfig defaultSamplerConfig(const Domain& d);

/// A visual group with its template and per-member programs.
struct GroupTriplet {
  Template tp;
  std::vector<Program> programs;
  std::vector<Canvas> visuals;
};

Program sampleProgram(const Domain& d, const SamplerConfig& cfg, Rng& rng);
Template collapse(const Grammar& g, const Program& z, const SamplerConfig& cfg, Rng& rng);
/// Instantiates `tp` cfg.group_size times.
GroupTriplet sampleGroup(const Domain& d, const Template& tp, const SamplerConfig& cfg, Rng& rng);
/// Draws one instantiation of `tp` (hole expansion by the grammar prior, one
/// draw per shared variable, independent free draws).
Program sampleInstantiation(const Domain& d, const Template& tp, const SamplerConfig& cfg, Rng& rng);
/// Convenience: sampleProgram -> collapse -> sampleGroup.
GroupTriplet sampleTriplet(const Domain& d, const SamplerConfig& cfg, Rng& rng);

/// True when the program fits every decoder cap once collapsed.
bool fitsCaps(const Grammar& g, const Program& z);

// ---- Teacher-forced targets ---------------------------------------------------

enum class Role : std::uint8_t { Template = 0, Expansion = 1, Param = 2 };
const char* roleName(Role r);

struct TrainingExample {
  Role role = Role::Template;
  /// One feature vector per conditioning canvas (G for templates, 1 otherwise).
  std::vector<std::vector<double>> visuals;
  /// Conditioning program: the template for expansion examples, the
  /// structural expansion for parameter examples.
  TokenSeq program;
  TokenSeq target;
  /// Provenance tag, e.g. "synthetic" or "st:r1:c7".
  std::string source;
};

/// (a) template example with member order shuffled, (b) per-member expansion
/// examples, (c) per-member parameter examples. Throws TypeError if a member
/// does not conform.
std::vector<TrainingExample> formatTargets(const Domain& d, const GroupTriplet& t, Rng& rng, const std::string& source = "synthetic");

TokenSeq expansionTarget(const Grammar& g, const Template& tp, const Witness& w);
TokenSeq paramTarget(const Grammar& g, const Expansion& se, const Bindings& b);
/// Inverses of the two target builders.
std::vector<Expr> fillsFromTarget(const Grammar& g, const Template& tp, const TokenSeq& target);
Bindings bindingsFromTarget(const Grammar& g, const Expansion& se, const TokenSeq& target);

/// Builds the function skeleton of a category from function-only tokens
/// (every parameter Free). Advances `pos`.
Expr skeletonFromTokens(const Grammar& g, int category, const TokenSeq& toks, std::size_t& pos);

// ---- Serialisation --------------------------------------------------------------

nlohmann::json tripletToJson(const Domain& d, const GroupTriplet& t);
GroupTriplet tripletFromJson(const Domain& d, const nlohmann::json& j);
std::string tripletsToJsonl(const Domain& d, const std::vector<GroupTriplet>& ts);
std::vector<GroupTriplet> tripletsFromJsonl(const Domain& d, const std::string& text);

}  // namespace tplprog
