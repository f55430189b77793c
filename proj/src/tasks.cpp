#include "tplprog/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "tplprog/errors.hpp"
#include "tplprog/util.hpp"

namespace tplprog {

using nlohmann::json;

namespace {

bool retryable(const Error& e) {
  return dynamic_cast<const DecodeError*>(&e) || dynamic_cast<const ExecError*>(&e) || dynamic_cast<const CapError*>(&e);
}

std::vector<std::vector<double>> featuresOf(const Domain& d, const std::vector<Canvas>& xs) {
  std::vector<std::vector<double>> out;
  for (const auto& x : xs) out.push_back(d.features(x));
  return out;
}

std::vector<double> zeroFeatures() { return std::vector<double>(static_cast<std::size_t>(kVisualTokens * kPatchFeatures), 0.0); }

void walkParts(const Expr& z, const Expr& tp, int& z_idx, int& tp_idx, std::vector<int>& out) {
  const int here = tp_idx++;
  if (tp.isHole()) {
    // The whole fill is one part.
    const int n = nodeCount(z);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(z_idx++)] = here;
    return;
  }
  if (z.fn != tp.fn || z.children.size() != tp.children.size()) throw DataError("program does not follow the template skeleton");
  out[static_cast<std::size_t>(z_idx++)] = here;
  for (std::size_t i = 0; i < z.children.size(); ++i) walkParts(z.children[i], tp.children[i], z_idx, tp_idx, out);
}

void appendCoarse(const Grammar& g, const Expr& e, std::string& out) {
  const FunctionSig& f = g.function(e.fn);
  if (!out.empty()) out += ' ';
  out += f.symbol;
  for (int i = 0; i < f.paramCount(); ++i) {
    const ParamType& t = g.paramType(f.param_types[static_cast<std::size_t>(i)]);
    if (t.fine) continue;
    const int v = e.args[static_cast<std::size_t>(i)].index;
    out += ' ';
    out += t.categorical ? t.labels[static_cast<std::size_t>(v)] : f.param_names[static_cast<std::size_t>(i)] + "=" + formatValue(t.values[static_cast<std::size_t>(v)]);
  }
  for (const auto& c : e.children) appendCoarse(g, c, out);
}

}  // namespace

// ---- Few-shot generation ----------------------------------------------------------------

std::vector<Generated> generateFromTemplate(const Domain& d, const Template& tp, const std::vector<Canvas>& group,
                                           const ProposalModel& sampler, int k, Rng& rng, double temperature, int retries) {
  const auto visuals = featuresOf(d, group);
  std::vector<Generated> out;
  for (int i = 0; i < k; ++i) {
    for (int attempt = 0;; ++attempt) {
      try {
        Program z = sampleFromTemplate(d, sampler, tp, visuals, rng, temperature);
        Canvas c = d.execute(z);
        out.push_back({std::move(z), std::move(c)});
        break;
      } catch (const Error& e) {
        if (!retryable(e) || attempt >= retries) throw;
      }
    }
  }
  return out;
}

std::string coarseTokens(const Grammar& g, const Program& z) {
  std::string out;
  appendCoarse(g, z.root(), out);
  return out;
}

FewShotResult fewShotGenerate(const Domain& d, const std::vector<Canvas>& group, const ProposalModel& p_inf, const ProposalModel& sampler,
                              const BeamConfig& beams, const ObjectiveWeights& w, int k, Rng& rng, double temperature) {
  FewShotResult r{inferGroup(d, group, p_inf, beams, w), {}};
  r.samples = generateFromTemplate(d, r.inference.triplet.tp, group, sampler, k, rng, temperature);
  return r;
}

// ---- Co-segmentation ----------------------------------------------------------------------

std::vector<int> nodeParts(const Program& z, const Template& tp) {
  std::vector<int> out(static_cast<std::size_t>(nodeCount(z.root())), -1);
  int zi = 0, ti = 0;
  walkParts(z.root(), tp.root(), zi, ti, out);
  return out;
}

SegmentedCanvas segmentParts(const Domain& d, const Canvas& x, const Program& z, const Template& tp) {
  if (x.width != d.canvasWidth() || x.height != d.canvasHeight()) throw DataError("canvas size does not match the domain");
  SegmentedCanvas s;
  s.canvas = x;
  s.parts = d.propagate(z, nodeParts(z, tp));
  s.labels.assign(s.parts.size(), -1);
  if (d.family() != "stroke") return s;
  // Propagation labels the reconstruction's on-cells; move that onto the
  // member's own on-cells, taking the nearest labelled cell where they differ.
  std::vector<int> labelled;
  for (int i = 0; i < x.size(); ++i)
    if (s.parts[static_cast<std::size_t>(i)] >= 0) labelled.push_back(i);
  std::vector<int> parts(s.parts.size(), -1);
  for (int i = 0; i < x.size(); ++i) {
    if (!x.cells[static_cast<std::size_t>(i)]) continue;
    if (s.parts[static_cast<std::size_t>(i)] >= 0) {
      parts[static_cast<std::size_t>(i)] = s.parts[static_cast<std::size_t>(i)];
      continue;
    }
    int best = std::numeric_limits<int>::max();
    for (int j : labelled) {
      const int dr = i / x.width - j / x.width, dc = i % x.width - j % x.width;
      if (dr * dr + dc * dc < best) {
        best = dr * dr + dc * dc;
        parts[static_cast<std::size_t>(i)] = s.parts[static_cast<std::size_t>(j)];
      }
    }
  }
  s.parts = std::move(parts);
  return s;
}

void transferLabels(std::vector<SegmentedCanvas>& segs, int labeled, const std::vector<int>& reference) {
  if (labeled < 0 || labeled >= static_cast<int>(segs.size())) throw DataError("labelled member index out of range");
  const SegmentedCanvas& src = segs[static_cast<std::size_t>(labeled)];
  if (reference.size() != src.parts.size()) throw DataError("reference segmentation size does not match the canvas");
  std::map<int, int> totals;
  std::map<int, std::map<int, int>> overlap;  // part -> label -> cells
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i] < 0) continue;
    ++totals[reference[i]];
    if (src.parts[i] >= 0) ++overlap[src.parts[i]][reference[i]];
  }
  if (totals.empty()) throw DataError("reference segmentation covers no cells");
  const auto argmax = [](const std::map<int, int>& counts) {
    int best = -1, n = -1;
    for (const auto& [label, c] : counts)
      if (c > n) best = label, n = c;
    return best;
  };
  const int fallback = argmax(totals);
  std::map<int, int> part_to_label;
  for (const auto& s : segs)
    for (int p : s.parts)
      if (p >= 0 && !part_to_label.count(p)) {
        const auto it = overlap.find(p);
        part_to_label[p] = it == overlap.end() ? fallback : argmax(it->second);
      }
  for (auto& s : segs) {
    s.part_to_label = part_to_label;
    s.labels.assign(s.parts.size(), -1);
    for (std::size_t i = 0; i < s.parts.size(); ++i)
      if (s.parts[i] >= 0) s.labels[i] = part_to_label.at(s.parts[i]);
  }
}

std::vector<SegmentedCanvas> cosegmentTriplet(const Domain& d, const GroupTriplet& t, int labeled, const std::vector<int>& reference) {
  if (t.programs.size() != t.visuals.size()) throw DataError("triplet has mismatched programs and visuals");
  std::vector<SegmentedCanvas> segs;
  for (std::size_t m = 0; m < t.programs.size(); ++m) segs.push_back(segmentParts(d, t.visuals[m], t.programs[m], t.tp));
  transferLabels(segs, labeled, reference);
  return segs;
}

CosegResult cosegment(const Domain& d, const std::vector<Canvas>& group, int labeled, const std::vector<int>& reference,
                      const ProposalModel& model, const BeamConfig& beams, const ObjectiveWeights& w) {
  if (labeled < 0 || labeled >= static_cast<int>(group.size())) throw DataError("labelled member index out of range");
  CosegResult r{inferGroup(d, group, model, beams, w), {}};
  // Segment the given canvases, not the reconstructions.
  GroupTriplet t = r.inference.triplet;
  t.visuals = group;
  r.segments = cosegmentTriplet(d, t, labeled, reference);
  return r;
}

std::optional<CosegFixture> cosegFixture(const Domain& d, const GroupTriplet& t, const std::string& id) {
  std::vector<std::vector<int>> parts;
  std::vector<std::set<int>> visible;
  std::set<int> all;
  for (std::size_t m = 0; m < t.programs.size(); ++m) {
    parts.push_back(d.propagate(t.programs[m], nodeParts(t.programs[m], t.tp)));
    visible.emplace_back();
    for (std::size_t k = 0; k < parts.back().size(); ++k)
      if (parts.back()[k] >= 0) visible.back().insert(parts.back()[k]);
    all.insert(visible.back().begin(), visible.back().end());
  }
  const auto it = std::find(visible.begin(), visible.end(), all);
  if (all.empty() || it == visible.end()) return std::nullopt;
  std::map<int, int> number;
  for (int p : all) number.emplace(p, static_cast<int>(number.size()));
  CosegFixture f;
  f.group = {id, t.visuals};
  f.labeled = static_cast<int>(it - visible.begin());
  for (auto& ps : parts) {
    for (int& p : ps)
      if (p >= 0) p = number.at(p);
    f.truth.push_back(ps);
  }
  f.reference = f.truth[static_cast<std::size_t>(f.labeled)];
  f.generating = t;
  return f;
}

std::string cosegFixturesToJsonl(const Domain& d, const std::vector<CosegFixture>& fs) {
  std::string out;
  for (const auto& f : fs) {
    json j{{"domain", d.id()}, {"id", f.group.id}, {"members", json::array()}, {"labeled", f.labeled}, {"reference", f.reference}};
    for (const auto& m : f.group.members) j["members"].push_back(base64Encode(d.dump(m)));
    if (!f.truth.empty()) j["truth"] = f.truth;
    if (f.generating) {
      j["template"] = toText(d.grammar(), f.generating->tp);
      j["programs"] = json::array();
      for (const auto& z : f.generating->programs) j["programs"].push_back(toText(d.grammar(), z));
    }
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<CosegFixture> cosegFixturesFromJsonl(const Domain& d, const std::string& text) {
  const std::vector<Concept> groups = conceptsFromJsonl(d, text);
  std::vector<CosegFixture> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::size_t i = out.size();
    try {
      const json j = json::parse(line);
      CosegFixture f;
      f.group = groups.at(i);
      f.labeled = j.at("labeled").get<int>();
      f.reference = j.at("reference").get<std::vector<int>>();
      if (j.contains("truth")) f.truth = j["truth"].get<std::vector<std::vector<int>>>();
      if (!f.truth.empty() && f.truth.size() != f.group.members.size()) throw DataError("truth does not cover every member");
      if (j.contains("template")) {
        GroupTriplet t;
        t.tp = parseTemplateText(d.grammar(), j["template"].get<std::string>());
        for (const auto& p : j.at("programs")) t.programs.push_back(parseProgramText(d.grammar(), p.get<std::string>()));
        t.visuals = f.group.members;
        if (t.programs.size() != t.visuals.size()) throw DataError("fixture has mismatched programs and members");
        f.generating = std::move(t);
      }
      out.push_back(std::move(f));
    } catch (const json::exception& e) {
      throw DataError("fixture " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

double mIoU(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw DataError("segmentations have different sizes");
  std::map<int, std::pair<int, int>> iu;  // label -> (intersection, union)
  for (int l : gt)
    if (l >= 0) iu[l];
  if (iu.empty()) throw DataError("ground-truth segmentation has no labels");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool g_in = iu.count(gt[i]) > 0, p_in = iu.count(pred[i]) > 0;
    if (g_in && pred[i] == gt[i]) {
      ++iu[gt[i]].first;
      ++iu[gt[i]].second;
      continue;
    }
    if (g_in) ++iu[gt[i]].second;
    if (p_in) ++iu[pred[i]].second;
  }
  double sum = 0;
  for (const auto& [l, c] : iu) sum += static_cast<double>(c.first) / c.second;
  return sum / static_cast<double>(iu.size());
}

double mIoU(const SegmentedCanvas& pred, const SegmentedCanvas& gt) {
  if (pred.canvas.width != gt.canvas.width || pred.canvas.height != gt.canvas.height) throw DataError("segmentations have different sizes");
  return mIoU(pred.labels, gt.labels);
}

std::string renderLabels(const SegmentedCanvas& s) {
  static constexpr std::uint8_t kPalette[8][3] = {{0xE6, 0x19, 0x4B}, {0x3C, 0xB4, 0x4B}, {0xFF, 0xE1, 0x19}, {0x43, 0x63, 0xD8},
                                                  {0xF5, 0x82, 0x31}, {0x91, 0x1E, 0xB4}, {0x46, 0xF0, 0xF0}, {0xF0, 0x32, 0xE6}};
  std::string out = "P6\n" + std::to_string(s.canvas.width) + " " + std::to_string(s.canvas.height) + "\n255\n";
  for (int l : s.labels) {
    if (l < 0) {
      out.append(3, '\0');
      continue;
    }
    const auto& rgb = kPalette[l % 8];
    out.append(reinterpret_cast<const char*>(rgb), 3);
  }
  return out;
}

// ---- Unconditional generation ---------------------------------------------------------------

std::vector<UncondSample> unconditionalGenerate(const Domain& d, const ProposalModel& p_gen, int n, int per_concept,
                                                const std::vector<Canvas>& reference, Rng& rng, double temperature, int retries) {
  if (n < 0 || per_concept < 1) throw DataError("unconditional generation needs n >= 0 and at least one instance per concept");
  std::vector<UncondSample> out;
  const std::vector<std::vector<double>> blank_group(static_cast<std::size_t>(per_concept), zeroFeatures());
  const std::vector<std::vector<double>> blank{zeroFeatures()};
  for (int i = 0; i < n; ++i) {
    UncondSample s;
    for (int attempt = 0;; ++attempt) {
      try {
        s = {};
        s.tp = sampleTemplate(d, p_gen, blank_group, rng, temperature);
        for (int m = 0; m < per_concept; ++m) {
          s.programs.push_back(sampleFromTemplate(d, p_gen, s.tp, blank, rng, temperature));
          s.canvases.push_back(d.execute(s.programs.back()));
        }
        break;
      } catch (const Error& e) {
        if (!retryable(e) || attempt >= retries) throw;
      }
    }
    for (const auto& c : s.canvases) {
      Neighbor nb;
      for (std::size_t r = 0; r < reference.size(); ++r) {
        const double dist = d.distance(c, reference[r]);
        if (nb.index < 0 || dist < nb.distance) nb = {static_cast<int>(r), dist};
      }
      if (nb.index >= 0) s.nearest.push_back(nb);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- Generation metrics ---------------------------------------------------------------------

json GenerationMetrics::toJson() const {
  return {{"mmd", mmd}, {"coverage", coverage}, {"space", "domain metric (not comparable to learned-latent scores)"}};
}

GenerationMetrics generationMetrics(const std::vector<Canvas>& generated, const std::vector<Canvas>& reference, const CanvasDistance& dist) {
  if (generated.empty() || reference.empty()) throw DataError("generation metrics need nonempty generated and reference sets");
  std::vector<std::vector<double>> dm(generated.size(), std::vector<double>(reference.size()));
  for (std::size_t g = 0; g < generated.size(); ++g)
    for (std::size_t r = 0; r < reference.size(); ++r) dm[g][r] = dist(generated[g], reference[r]);
  GenerationMetrics m;
  for (std::size_t r = 0; r < reference.size(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < generated.size(); ++g) best = std::min(best, dm[g][r]);
    m.mmd += best;
  }
  m.mmd /= static_cast<double>(reference.size());
  std::vector<bool> covered(reference.size(), false);
  for (std::size_t g = 0; g < generated.size(); ++g)
    covered[static_cast<std::size_t>(std::min_element(dm[g].begin(), dm[g].end()) - dm[g].begin())] = true;
  m.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), true)) / static_cast<double>(reference.size());
  return m;
}

GenerationMetrics generationMetrics(const Domain& d, const std::vector<Canvas>& generated, const std::vector<Canvas>& reference) {
  return generationMetrics(generated, reference, [&d](const Canvas& a, const Canvas& b) { return d.distance(a, b); });
}

}  // namespace tplprog
