#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tplprog/decode.hpp"
#include "tplprog/domain.hpp"
#include "tplprog/synth.hpp"

namespace tplprog {

struct ModelConfig {
  int layers = 2;
  int heads = 4;
  int width = 64;
  int ff = 128;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 1.0;  // global gradient-norm clip; <= 0 disables
  std::uint64_t seed = 0;

  /// "tiny" (1 layer, width 32), "desk" (2/4/64, the default) or "full"
  /// (8 layers, 16 heads, width 256).
  static ModelConfig named(std::string_view name);
  nlohmann::json toJson() const;
  static ModelConfig fromJson(const nlohmann::json& j);
  void validate() const;
};

/// Three small pre-LN attention decoders, one per role. Conditioning is a
/// prefix that attends to itself bidirectionally; targets attend to the whole
/// prefix and causally to earlier targets.
///
/// Prefix embeddings: visual token (m, p) is `f W_vis + b_vis + pos_vis[p] +
/// member[m] + seg[0]`, program token j is `tok[id] + pos_prog[j] + seg[1]`;
/// target input i is `tok[id] + pos_tgt[i] + seg[2]`. Generative mode zeroes
/// the features; few-shot mode averages `f W_vis + b_vis` over the group and
/// drops the member term.
class TransformerModel final : public ProposalModel {
 public:
  TransformerModel(const Domain& d, ModelConfig cfg, VisualMode mode = VisualMode::Inference);
  TransformerModel(const TransformerModel&);
  TransformerModel& operator=(const TransformerModel&);
  ~TransformerModel() override;

  std::string kind() const override { return "transformer"; }
  std::unique_ptr<ProposalSession> start(const Conditioning& c) const override;

  const Domain& domain() const { return *domain_; }
  const ModelConfig& config() const { return cfg_; }
  VisualMode mode() const { return mode_; }
  void setMode(VisualMode m) { mode_ = m; }
  void setLearningRate(double lr) { cfg_.lr = lr; }
  int steps() const { return steps_; }

  /// Mean cross-entropy (nats per target token) before the update, then one
  /// Adam step. A batch without target tokens returns 0 and changes nothing.
  /// Throws LengthOverflow for sequences over the caps.
  double trainStep(const std::vector<TrainingExample>& batch);
  /// Mean cross-entropy without updating.
  double loss(const std::vector<TrainingExample>& batch) const;
  /// Summed cross-entropy and its gradient with respect to params() (the
  /// gradient is accumulated into `grad`, which is resized as needed).
  double lossAndGrad(const std::vector<TrainingExample>& batch, std::vector<double>& grad, int* tokens = nullptr) const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::uint64_t paramHash() const;
  std::size_t paramCount() const { return params_.size(); }

  /// Deep copy with visual inputs masked out (generative mode) and fresh
  /// optimizer state.
  TransformerModel generativeCopy() const;

  /// Single-file checkpoint: magic, version, domain id, config JSON, tensor
  /// table, parameters and optimizer moments (little-endian float64).
  void save(const std::string& path) const;
  static TransformerModel load(const Domain& d, const std::string& path);

  struct Impl;

 private:
  const Domain* domain_;
  ModelConfig cfg_;
  VisualMode mode_;
  int steps_ = 0;
  std::vector<double> params_, m_, v_;
  std::unique_ptr<Impl> impl_;
};

/// Conditioning for a training example (its role, visuals and program).
Conditioning conditioningOf(const TrainingExample& ex);

}  // namespace tplprog
