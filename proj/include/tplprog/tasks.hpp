#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tplprog/inference.hpp"

namespace tplprog {

// ---- Few-shot generation ----------------------------------------------------------------

struct Generated {
  Program program;
  Canvas canvas;
};

struct FewShotResult {
  InferenceResult inference;
  std::vector<Generated> samples;
};

/// `k` programs sampled from `tp` by `sampler`, conditioned on the features of
/// `group` (a few-shot model pools them; the grammar prior ignores them). A
/// sample that dead-ends or fails to run is redrawn up to `retries` times.
std::vector<Generated> generateFromTemplate(const Domain& d, const Template& tp, const std::vector<Canvas>& group,
                                           const ProposalModel& sampler, int k, Rng& rng, double temperature = 1.0, int retries = 8);

/// Function symbols and coarse (non-fine) parameter values of `z` in pre-order,
/// space separated.
std::string coarseTokens(const Grammar& g, const Program& z);

/// Infers a template for `group` with `p_inf`, then samples `k` new members
/// from it. Inference failures propagate.
FewShotResult fewShotGenerate(const Domain& d, const std::vector<Canvas>& group, const ProposalModel& p_inf, const ProposalModel& sampler,
                              const BeamConfig& beams, const ObjectiveWeights& w, int k, Rng& rng, double temperature = 1.0);

// ---- Co-segmentation ----------------------------------------------------------------------

/// Per-cell labels (-1 = none). Layout segmentations cover every cell, stroke
/// segmentations cover the on-cells of `canvas`.
struct SegmentedCanvas {
  Canvas canvas;
  std::vector<int> parts;
  std::vector<int> labels;
  std::map<int, int> part_to_label;
};

/// Part id of every pre-order node of `z`: nodes inside a hole fill take the
/// hole's template index, other nodes their matching template node's index.
/// So parts line up across members of one template. Throws DataError when `z`
/// does not follow the template's skeleton.
std::vector<int> nodeParts(const Program& z, const Template& tp);

/// Part map of `x` explained by `z` (labels left empty).
SegmentedCanvas segmentParts(const Domain& d, const Canvas& x, const Program& z, const Template& tp);

/// Labels each part by majority overlap with `reference` on member `labeled`
/// (ties to the smaller label; parts with no overlap take the most common
/// reference label), then applies the map to every member.
void transferLabels(std::vector<SegmentedCanvas>& segs, int labeled, const std::vector<int>& reference);

/// Co-segmentation with given programs (no inference).
std::vector<SegmentedCanvas> cosegmentTriplet(const Domain& d, const GroupTriplet& t, int labeled, const std::vector<int>& reference);

struct CosegResult {
  InferenceResult inference;
  std::vector<SegmentedCanvas> segments;
};

CosegResult cosegment(const Domain& d, const std::vector<Canvas>& group, int labeled, const std::vector<int>& reference,
                      const ProposalModel& model, const BeamConfig& beams, const ObjectiveWeights& w);

/// A co-segmentation problem: a group, one labelled member and its reference
/// labels, plus (for synthetic data) per-member ground truth and the
/// generating triplet.
struct CosegFixture {
  Concept group;
  int labeled = 0;
  std::vector<int> reference;
  std::vector<std::vector<int>> truth;       // empty when unknown
  std::optional<GroupTriplet> generating;    // empty when unknown
};

/// Synthetic fixture: ground truth is the generating program's parts,
/// numbered 0.. in part order. The labelled member is the first one whose
/// part map contains every part found in the group; returns nullopt when no
/// member does, since a part missing there cannot be labelled.
std::optional<CosegFixture> cosegFixture(const Domain& d, const GroupTriplet& t, const std::string& id);

/// One JSON object per line: domain, id, members (base64 dumps), labeled,
/// reference; optionally truth, template and programs.
std::string cosegFixturesToJsonl(const Domain& d, const std::vector<CosegFixture>& fs);
std::vector<CosegFixture> cosegFixturesFromJsonl(const Domain& d, const std::string& text);

/// Mean over the labels present in `gt` of the IoU of their cell sets.
double mIoU(const std::vector<int>& pred, const std::vector<int>& gt);
double mIoU(const SegmentedCanvas& pred, const SegmentedCanvas& gt);

/// Palette image of a label map (unlabelled cells black).
std::string renderLabels(const SegmentedCanvas& s);

// ---- Unconditional generation ---------------------------------------------------------------

struct Neighbor {
  int index = -1;
  double distance = 0.0;
};

struct UncondSample {
  Template tp;
  std::vector<Program> programs;
  std::vector<Canvas> canvases;
  std::vector<Neighbor> nearest;  // per canvas, into the reference set (empty when none given)
};

/// `n` templates decoded without visual input, `per_concept` instantiations
/// each, and the nearest reference canvas of every output.
std::vector<UncondSample> unconditionalGenerate(const Domain& d, const ProposalModel& p_gen, int n, int per_concept,
                                                const std::vector<Canvas>& reference, Rng& rng, double temperature = 1.0, int retries = 8);

// ---- Generation metrics ---------------------------------------------------------------------

using CanvasDistance = std::function<double(const Canvas&, const Canvas&)>;

struct GenerationMetrics {
  double mmd = 0.0;       // mean over reference of the distance to the closest generated canvas
  double coverage = 0.0;  // share of reference canvases that are some generated canvas's nearest
  nlohmann::json toJson() const;
};

/// Throws DataError when either list is empty.
GenerationMetrics generationMetrics(const std::vector<Canvas>& generated, const std::vector<Canvas>& reference, const CanvasDistance& dist);
GenerationMetrics generationMetrics(const Domain& d, const std::vector<Canvas>& generated, const std::vector<Canvas>& reference);

}  // namespace tplprog
