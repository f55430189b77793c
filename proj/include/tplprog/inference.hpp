#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tplprog/decode.hpp"
#include "tplprog/domain.hpp"
#include "tplprog/synth.hpp"

namespace tplprog {

struct ObjectiveWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.001;
  /// true: Σ_z (|z| - |TP|). false: Σ_z |z| - |TP| (TP counted once).
  bool tp_per_member = true;

  nlohmann::json toJson() const;
  static ObjectiveWeights fromJson(const nlohmann::json& j);
};

/// Decomposed group objective. value() is +inf when a member failed to run.
struct ObjectiveTerms {
  double reconstruction = 0.0;  // Σ M(x, E(z)), M = Domain::distance
  int dl = 0;                   // description-length difference term
  double lambda1 = 1.0, lambda2 = 0.001;
  bool failed = false;
  std::string error;

  double reconstructionTerm() const { return lambda1 * reconstruction; }
  double dlTerm() const { return lambda2 * dl; }
  double value() const;
  nlohmann::json toJson() const;
};

/// Scores the programs of `t` against its visuals (the group being explained).
ObjectiveTerms objectiveTerms(const Domain& d, const GroupTriplet& t, const ObjectiveWeights& w);
double objective(const Domain& d, const GroupTriplet& t, const ObjectiveWeights& w);

struct BeamConfig {
  int bm_tp = 5;
  int bm_z = 5;
  void validate() const;
};

struct GroupDiagnostics {
  int tp_candidates = 0;
  int tp_valid = 0;
  int se_candidates = 0;
  int z_candidates = 0;
  int exec_failures = 0;
  /// Objective of every template candidate in beam order (null = invalid).
  std::vector<std::optional<double>> tp_objectives;
  nlohmann::json toJson() const;
};

struct InferenceResult {
  GroupTriplet triplet;
  ObjectiveTerms objective;
  GroupDiagnostics diagnostics;
};

/// Two-stage search. Stage 1 beam-decodes templates from the whole group;
/// stage 2 keeps, per member, the (expansion, parameters) candidate with the
/// lowest member contribution to the objective. The template with the lowest
/// group objective wins; ties go to the lexicographically smaller token
/// sequence at both stages. Throws InferenceFailure when no template yields a
/// complete, executable triplet.
InferenceResult inferGroup(const Domain& d, const std::vector<Canvas>& group, const ProposalModel& model, const BeamConfig& beams,
                           const ObjectiveWeights& w);

/// Samples a template, then programs conforming to one, decoding each step
/// under the grammar mask. `visuals` is the conditioning for every step (use
/// zero vectors for a generative model). Throws DecodeError at a dead end.
Template sampleTemplate(const Domain& d, const ProposalModel& m, const std::vector<std::vector<double>>& visuals, Rng& rng,
                        double temperature = 1.0);
Program sampleFromTemplate(const Domain& d, const ProposalModel& m, const Template& tp, const std::vector<std::vector<double>>& visuals,
                           Rng& rng, double temperature = 1.0);

/// A set of exemplars of one visual concept.
struct Concept {
  std::string id;
  std::vector<Canvas> members;
};

struct ConceptResult {
  std::string id;
  std::vector<int> chosen;  // member indices fed to inference
  std::optional<InferenceResult> result;
  std::string error;  // set when inference failed
};

/// One search per concept over a random subset of `group_size` members
/// (all members when group_size <= 0 or the concept is small). Per-concept
/// streams are split from `seed` up front, so `jobs` does not change results.
/// Throws DataError on an empty dataset.
std::vector<ConceptResult> inferConcepts(const Domain& d, const std::vector<Concept>& dataset, const ProposalModel& model,
                                         const BeamConfig& beams, const ObjectiveWeights& w, int group_size, std::uint64_t seed,
                                         int jobs = 1);

/// Mean objective over concepts; a failed concept counts as the worst possible
/// reconstruction of its group (lambda1 per member).
double meanObjective(const std::vector<ConceptResult>& results, const ObjectiveWeights& w, int group_size);

/// Successful results as triplets, in dataset order.
std::vector<GroupTriplet> inferredTriplets(const std::vector<ConceptResult>& results);

/// One JSON record per concept: id, members, objective decomposition, beam
/// statistics, and the inferred triplet.
std::string resultsToJsonl(const Domain& d, const std::vector<ConceptResult>& results);

/// Concepts JSONL: {"id": ..., "members": [base64 dump, ...]}.
std::string conceptsToJsonl(const Domain& d, const std::vector<Concept>& cs);
std::vector<Concept> conceptsFromJsonl(const Domain& d, const std::string& text);
/// Concept "c<i>" made from the visuals of triplet i.
std::vector<Concept> conceptsFromTriplets(const std::vector<GroupTriplet>& ts);

}  // namespace tplprog
