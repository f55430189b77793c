#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tplprog/inference.hpp"
#include "tplprog/transformer.hpp"

namespace tplprog {

struct FinetuneConfig {
  int outer_rounds = 3;
  int max_epochs = 50;
  int validate_every = 5;
  int patience = 10;  // epochs without a new best validation objective
  int ws_samples = 500;
  int ws_retries = 8;
  int batch_size = 16;
  /// Training steps per epoch; 0 means one pass over the pooled examples.
  int steps_per_epoch = 0;
  /// p_gen epochs (passes over the round's inferred data) before dreaming.
  int gen_epochs = 5;
  int group_size = 5;
  BeamConfig beams{5, 5};
  ObjectiveWeights weights;
  /// Mixing weights over the "st", "lest" and "ws" datasets.
  std::map<std::string, double> mix{{"st", 1.0}, {"lest", 1.0}, {"ws", 1.0}};
  /// Use the grammar prior instead of p_inf for the first round's inference.
  bool bootstrap_with_prior = false;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  int jobs = 1;

  nlohmann::json toJson() const;
  /// Unknown keys are rejected.
  static FinetuneConfig fromJson(const nlohmann::json& j);
  void validate() const;
};

// ---- Pretraining ----------------------------------------------------------------------

struct PretrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  int log_every = 100;

  nlohmann::json toJson() const;
  static PretrainConfig fromJson(const nlohmann::json& j);
  void validate() const;
};

/// Trains on freshly sampled synthetic triplets: each step draws triplets
/// until the batch is full. Returns the per-step losses.
std::vector<double> pretrain(TransformerModel& m, const SamplerConfig& sampler, const PretrainConfig& cfg,
                             const std::function<void(const std::string&)>& log = {});

// ---- Dataset builders ---------------------------------------------------------------

/// Self-training: formatTargets on the triplets as inferred. Sources are
/// "<tag>:<id>".
std::vector<TrainingExample> buildSelfTrainData(const Domain& d, const std::vector<GroupTriplet>& ts, const std::vector<std::string>& ids,
                                                Rng& rng, const std::string& tag = "st");

/// Like self-training, but each visual is replaced by the execution of its
/// program. Members that fail to execute are dropped (and counted).
std::vector<TrainingExample> buildLestData(const Domain& d, const std::vector<GroupTriplet>& ts, const std::vector<std::string>& ids,
                                           Rng& rng, const std::string& tag = "lest", int* dropped = nullptr);

/// Canonical identities used to reject repeated dreams.
struct DreamHistory {
  std::set<TokenSeq> templates;
  std::set<std::string> groups;  // sorted canvas digests, joined
};
std::string groupDigest(const Domain& d, const std::vector<Canvas>& xs);

struct DreamStats {
  int requested = 0;
  int attempts = 0;
  int rejected = 0;            // resampled because the TP or X^G was seen
  int accepted_duplicates = 0; // retries exhausted, kept with a flag
  int failures = 0;            // decode dead ends or execution errors
  double rejectionRate() const { return attempts ? static_cast<double>(rejected) / attempts : 0.0; }
  nlohmann::json toJson() const;
};

struct Dream {
  GroupTriplet triplet;
  bool duplicate = false;
};

/// Samples `count` dream triplets from a generative proposal: a template,
/// then `group_size` instantiations through its expansion and parameter
/// heads, executed to obtain the visuals. Throws DecodeError when a dream
/// cannot be completed within the retry budget.
std::vector<Dream> sampleDreams(const Domain& d, const ProposalModel& p_gen, int count, int group_size, DreamHistory& history,
                                Rng& rng, int retries, DreamStats& stats);

std::vector<TrainingExample> buildWakeSleepData(const Domain& d, const std::vector<Dream>& dreams, Rng& rng, const std::string& tag = "ws");

// ---- Orchestration ----------------------------------------------------------------------

struct HistoryRow {
  int round = 0;
  int epoch = 0;
  double mean_objective = 0.0;
  double loss = 0.0;  // mean training loss since the previous row (NaN if none)
};

struct RoundSummary {
  int round = 0;
  int inferred = 0;
  int inference_failures = 0;
  std::size_t st = 0, lest = 0, ws = 0;
  int lest_dropped = 0;
  DreamStats dreams;
  double best_objective = 0.0;
  bool aborted = false;  // non-finite loss
  nlohmann::json toJson() const;
};

struct FinetuneHistory {
  double initial_objective = 0.0;
  double best_objective = 0.0;
  std::vector<HistoryRow> rows;
  std::vector<RoundSummary> rounds;
  std::string csv() const;
  nlohmann::json toJson() const;
  static FinetuneHistory fromJson(const nlohmann::json& j);
};

struct FinetuneOptions {
  /// When set: history.csv plus round_<r>/ (inferred.jsonl, dreams.jsonl,
  /// model.ckpt, state.json) are written there after every round.
  std::string run_dir;
  /// Continue after the last completed round found in run_dir.
  bool resume = false;
  /// Called after each training epoch (tests use it to inject regressions).
  std::function<void(TransformerModel&, int round, int epoch)> after_epoch;
  /// Progress lines.
  std::function<void(const std::string&)> log;
};

/// Bootstrapped fine-tuning. On return `p_inf` holds the snapshot with the
/// lowest mean validation objective seen (including the starting model).
FinetuneHistory finetune(TransformerModel& p_inf, const std::vector<Concept>& train, const std::vector<Concept>& validation,
                         const FinetuneConfig& cfg, const FinetuneOptions& opts = {});

/// Mean validation objective of a proposal model (fixed exemplars, cfg seed).
double validationObjective(const Domain& d, const ProposalModel& m, const std::vector<Concept>& validation, const FinetuneConfig& cfg);

}  // namespace tplprog
