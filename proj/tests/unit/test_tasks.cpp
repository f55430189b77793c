#include <cmath>
#include <set>

#include "../common/oracles.hpp"
#include "doctest.h"
#include "tplprog/errors.hpp"
#include "tplprog/tasks.hpp"

using namespace tplprog;

namespace {

// Ground truth for a synthetic member: its own program's parts, relabelled
// through an arbitrary injective map so transfer has to find the labels.
std::vector<int> truthLabels(const Domain& d, const GroupTriplet& t, std::size_t m) {
  auto labels = d.propagate(t.programs[m], nodeParts(t.programs[m], t.tp));
  for (int& l : labels)
    if (l >= 0) l = 3 * l + 7;
  return labels;
}

GrammarPrior tinyPrior(const Domain& d) {
  GrammarPrior::Config cfg;
  cfg.weights = {{"Color", 1.0}, {"Prim", 1.0}};
  return GrammarPrior(d.grammar(), cfg);
}

// Index of a member showing every part that appears anywhere in the group,
// or -1. Without one, some part has no reference label to transfer.
int fullyVisibleMember(const Domain& d, const GroupTriplet& t) {
  std::vector<std::set<int>> seen;
  std::set<int> all;
  for (std::size_t m = 0; m < t.programs.size(); ++m) {
    const auto parts = d.propagate(t.programs[m], nodeParts(t.programs[m], t.tp));
    seen.emplace_back();
    for (std::size_t k = 0; k < parts.size(); ++k)
      if (parts[k] >= 0 && (d.family() == "layout" ? t.visuals[m].cells[k] != 0 : true)) seen.back().insert(parts[k]);
    all.insert(seen.back().begin(), seen.back().end());
  }
  for (std::size_t m = 0; m < seen.size(); ++m)
    if (seen[m] == all) return static_cast<int>(m);
  return -1;
}

SamplerConfig pinnedConfig(const Domain& d) {
  SamplerConfig cfg = defaultSamplerConfig(d);
  cfg.hole_prob = 0.0;
  cfg.pin_prob = 1.0;
  cfg.share_prob = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("mIoU") {
  std::vector<int> gt(16, -1);
  for (int i = 0; i < 8; ++i) gt[static_cast<std::size_t>(i)] = 0;
  for (int i = 8; i < 12; ++i) gt[static_cast<std::size_t>(i)] = 1;
  CHECK(mIoU(gt, gt) == 1.0);
  SUBCASE("hand count: B misses two cells") {
    auto pred = gt;
    pred[10] = pred[11] = -1;
    CHECK(mIoU(pred, gt) == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("swapped labels score zero") {
    std::vector<int> a{0, 0, 1, 1}, b{1, 1, 0, 0};
    CHECK(mIoU(b, a) == 0.0);
  }
  SUBCASE("extra predicted cells shrink the label's IoU") {
    auto pred = gt;
    pred[12] = 1;
    pred[13] = 1;
    CHECK(mIoU(pred, gt) == doctest::Approx((1.0 + 4.0 / 6.0) / 2));
  }
  CHECK_THROWS_AS(mIoU(std::vector<int>(3, 0), gt), DataError);
  CHECK_THROWS_AS(mIoU(gt, std::vector<int>(16, -1)), DataError);
}

TEST_CASE("generation metrics") {
  // Canvases on a line: distance is the gap between their occupied counts.
  const auto mk = [](int n) {
    Canvas c(4, 4);
    for (int i = 0; i < n; ++i) c.cells[static_cast<std::size_t>(i)] = 1;
    return c;
  };
  const CanvasDistance line = [](const Canvas& a, const Canvas& b) { return std::abs(a.occupied() - b.occupied()) / 16.0; };
  const std::vector<Canvas> ref{mk(0), mk(4), mk(10)};
  SUBCASE("identical sets") {
    const auto m = generationMetrics(ref, ref, line);
    CHECK(m.mmd == 0.0);
    CHECK(m.coverage == 1.0);
  }
  SUBCASE("a single generated canvas covers one reference") {
    const auto m = generationMetrics({mk(3)}, ref, line);
    CHECK(m.coverage == doctest::Approx(1.0 / 3));
    CHECK(m.mmd == doctest::Approx((3.0 + 1.0 + 7.0) / 16 / 3));
  }
  SUBCASE("mmd is directional") {
    const std::vector<Canvas> gen{mk(4)};
    CHECK(generationMetrics(gen, ref, line).mmd != generationMetrics(ref, gen, line).mmd);
  }
  CHECK_THROWS_AS(generationMetrics({}, ref, line), DataError);
  CHECK_THROWS_AS(generationMetrics(ref, {}, line), DataError);
}

TEST_CASE("part ids follow the template") {
  const DomainPtr d = makeDomain("layout");
  const Grammar& g = d->grammar();
  const Program z = parseProgramText(g, "(UNION (Color red (Prim square)) (Color blue (Move xt=0.25 xf=0.025 yt=0 yf=0.025 (Prim circle))))");
  const Template tp = parseTemplateText(g, "(UNION (Color ? (Prim ?)) (HOLE 0))");
  // Pre-order: UNION Color Prim | Color Move Prim under the hole (template index 4).
  CHECK(nodeParts(z, tp) == std::vector<int>{0, 1, 2, 3, 3, 3});
  CHECK_THROWS_AS(nodeParts(z, parseTemplateText(g, "(Color ? (HOLE 0))")), DataError);
}

TEST_CASE("layout propagation follows painter order on occupied cells") {
  const DomainPtr d = makeDomain("layout");
  const auto fx = oracle::layoutFixtures();
  const auto it = std::find_if(fx.begin(), fx.end(), [](const auto& f) { return f.name == "overlap painter order"; });
  REQUIRE(it != fx.end());
  const Program z = parseProgramText(d->grammar(), it->program);
  std::vector<int> ident(static_cast<std::size_t>(nodeCount(z.root())));
  for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = static_cast<int>(i);
  const auto labels = d->propagate(z, ident);
  int checked = 0;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      const double x = -1.0 + (2.0 * c + 1.0) / 64.0, y = 1.0 - (2.0 * r + 1.0) / 64.0;
      const bool sq = oracle::inside(it->shapes[0], x, y), ci = oracle::inside(it->shapes[1], x, y);
      if (!sq && !ci) {
        CHECK(labels[static_cast<std::size_t>(r * 64 + c)] >= 0);
        continue;
      }
      CHECK(labels[static_cast<std::size_t>(r * 64 + c)] == (ci ? 6 : 3));
      ++checked;
    }
  CHECK(checked > 100);
}

TEST_CASE("co-segmentation with generating programs") {
  for (const std::string id : {"layout-toy", "stroke"}) {
    CAPTURE(id);
    const DomainPtr d = makeDomain(id);
    const SamplerConfig cfg = defaultSamplerConfig(*d);
    Rng rng(21);
    for (int fixtures = 0; fixtures < 5;) {
      const GroupTriplet t = sampleTriplet(*d, cfg, rng);
      const int labeled = fullyVisibleMember(*d, t);
      if (labeled < 0) continue;
      ++fixtures;
      const auto segs = cosegmentTriplet(*d, t, labeled, truthLabels(*d, t, static_cast<std::size_t>(labeled)));
      REQUIRE(segs.size() == t.programs.size());
      for (std::size_t m = 0; m < segs.size(); ++m) {
        const auto gt = truthLabels(*d, t, m);
        // Support: every cell for layouts, the on-cells for strokes.
        for (std::size_t k = 0; k < gt.size(); ++k)
          CHECK((segs[m].labels[k] >= 0) == (d->family() == "layout" || t.visuals[m].cells[k] != 0));
        if (std::any_of(gt.begin(), gt.end(), [](int l) { return l >= 0; })) CHECK(mIoU(segs[m].labels, gt) == 1.0);
      }
    }
  }
}

TEST_CASE("co-segmentation through inference") {
  const DomainPtr d = makeDomain("layout-tiny");
  const GrammarPrior prior = tinyPrior(*d);
  const Canvas rs = d->execute(parseProgramText(d->grammar(), "(Color red (Prim square))"));
  std::vector<int> ref(rs.cells.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = rs.cells[i] ? 5 : 9;
  SUBCASE("identical members get identical segmentations") {
    const auto r = cosegment(*d, {rs, rs, rs}, 1, ref, prior, {32, 8}, {});
    REQUIRE(r.segments.size() == 3);
    CHECK(r.segments[0].labels == r.segments[2].labels);
    // One part: the whole canvas takes the majority reference label.
    CHECK(mIoU(r.segments[0].labels, std::vector<int>(ref.size(), 9)) == 1.0);
  }
  CHECK_THROWS_AS(cosegment(*d, {rs}, 0, std::vector<int>(ref.size(), -1), prior, {8, 4}, {}), DataError);
  CHECK_THROWS_AS(cosegment(*d, {rs}, 1, ref, prior, {8, 4}, {}), DataError);
  CHECK_THROWS_AS(cosegment(*d, {rs}, 0, std::vector<int>(5, 0), prior, {8, 4}, {}), DataError);
}

TEST_CASE("few-shot generation") {
  const DomainPtr d = makeDomain("layout-toy");
  const Grammar& g = d->grammar();
  const GrammarPrior prior = GrammarPrior::fromSampler(*d, defaultSamplerConfig(*d));
  Rng rng(8);
  SUBCASE("outputs conform to the inferred template") {
    const GroupTriplet t = sampleTriplet(*d, defaultSamplerConfig(*d), rng);
    const auto r = fewShotGenerate(*d, t.visuals, prior, prior, {3, 3}, {}, 6, rng);
    CHECK(r.samples.size() == 6);
    for (const auto& s : r.samples) {
      CHECK(conforms(g, s.program, r.inference.triplet.tp));
      CHECK(d->execute(s.program) == s.canvas);
    }
    CHECK(fewShotGenerate(*d, t.visuals, prior, prior, {3, 3}, {}, 0, rng).samples.empty());
  }
  SUBCASE("pinned templates only vary fine values") {
    const SamplerConfig cfg = pinnedConfig(*d);
    for (int i = 0; i < 5; ++i) {
      const Program z = sampleProgram(*d, cfg, rng);
      const Template tp = collapse(g, z, cfg, rng);
      const auto out = generateFromTemplate(*d, tp, {d->execute(z)}, prior, 5, rng);
      for (const auto& s : out) CHECK(coarseTokens(g, s.program) == coarseTokens(g, z));
    }
  }
}

TEST_CASE("coarse tokens drop fine deltas") {
  const DomainPtr d = makeDomain("layout");
  const Grammar& g = d->grammar();
  CHECK(coarseTokens(g, parseProgramText(g, "(Color red (Move xt=0.25 xf=0.025 yt=0 yf=-0.025 (Prim square)))")) ==
        "Color red Move xt=0.25 yt=0 Prim square");
}

TEST_CASE("unconditional generation") {
  const DomainPtr d = makeDomain("layout-toy");
  const GrammarPrior prior = GrammarPrior::fromSampler(*d, defaultSamplerConfig(*d));
  Rng rng(13);
  const GroupTriplet ref = sampleTriplet(*d, defaultSamplerConfig(*d), rng);
  const auto out = unconditionalGenerate(*d, prior, 4, 3, ref.visuals, rng);
  REQUIRE(out.size() == 4);
  for (const auto& s : out) {
    REQUIRE(s.programs.size() == 3);
    REQUIRE(s.nearest.size() == 3);
    for (std::size_t m = 0; m < 3; ++m) {
      CHECK(conforms(d->grammar(), s.programs[m], s.tp));
      CHECK(d->execute(s.programs[m]) == s.canvases[m]);
      double best = 2.0;
      for (const auto& x : ref.visuals) best = std::min(best, d->distance(s.canvases[m], x));
      CHECK(s.nearest[m].distance == best);
    }
  }
  CHECK(unconditionalGenerate(*d, prior, 0, 3, ref.visuals, rng).empty());
}
