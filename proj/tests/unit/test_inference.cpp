#include <cmath>

#include "doctest.h"
#include "tplprog/errors.hpp"
#include "tplprog/inference.hpp"

using namespace tplprog;

namespace {

const char* kTwoPrims = "(UNION (Color red (Move xt=0.25 xf=0.025 yt=0 yf=-0.025 (Prim square))) (Color blue (Prim circle)))";

GroupTriplet twoCopies(const Domain& d, const char* tp_text) {
  const Program z = parseProgramText(d.grammar(), kTwoPrims);
  const Canvas c = d.execute(z);
  return {parseTemplateText(d.grammar(), tp_text), {z, z}, {c, c}};
}

GrammarPrior tinyPrior(const Domain& d) {
  GrammarPrior::Config cfg;
  cfg.weights = {{"Color", 1.0}, {"Prim", 1.0}};
  return GrammarPrior(d.grammar(), cfg);
}

}  // namespace

TEST_CASE("objective fixtures") {
  const DomainPtr d = makeDomain("layout");
  const ObjectiveWeights w;
  SUBCASE("fully pinned template over perfect reconstructions") {
    const auto t = twoCopies(*d, "(UNION (Color red (Move xt=0.25 xf=?0 yt=0 yf=?1 (Prim square))) (Color blue (Prim circle)))");
    CHECK(objective(*d, t, w) == 0.0);
  }
  SUBCASE("all-free template") {
    const auto t = twoCopies(*d, "(UNION (Color ? (Move xt=? xf=? yt=? yf=? (Prim ?))) (Color ? (Prim ?)))");
    // Per copy: 2 colours, xt, yt, 2 shapes.
    CHECK(objective(*d, t, w) == 0.001 * (2 * 6));
    const auto terms = objectiveTerms(*d, t, w);
    CHECK(terms.dl == 12);
    CHECK(terms.reconstruction == 0.0);
  }
  SUBCASE("lambda1 scales only the reconstruction term") {
    auto t = twoCopies(*d, "(UNION (Color ? (Move xt=? xf=? yt=? yf=? (Prim ?))) (Color ? (Prim ?)))");
    t.visuals[1] = d->execute(parseProgramText(d->grammar(), "(Prim triangle)"));
    ObjectiveWeights w3 = w;
    w3.lambda1 = 3.0;
    const auto a = objectiveTerms(*d, t, w), b = objectiveTerms(*d, t, w3);
    CHECK(a.reconstruction > 0);
    CHECK(b.reconstructionTerm() == doctest::Approx(3 * a.reconstructionTerm()));
    CHECK(b.dlTerm() == a.dlTerm());
  }
  SUBCASE("counting the template once") {
    ObjectiveWeights once = w;
    once.tp_per_member = false;
    const auto t = twoCopies(*d, "(UNION (Color red (HOLE 0)) (HOLE 1))");
    // |z| = 6 functions + 6 coarse values, |TP| = UNION, Color, red.
    CHECK(objectiveTerms(*d, t, w).dl == 2 * (12 - 3));
    CHECK(objectiveTerms(*d, t, once).dl == 2 * 12 - 3);
  }
  SUBCASE("execution failures are infinite") {
    const DomainPtr s = makeDomain("stroke");
    const Program bad = parseProgramText(s->grammar(), "(ON (EMPTY) (MOVE si=1 mt=0 mf=0 (END)))");
    const GroupTriplet t{parseTemplateText(s->grammar(), "(HOLE 0)"), {bad}, {Canvas(s->canvasWidth(), s->canvasHeight())}};
    const auto terms = objectiveTerms(*s, t, w);
    CHECK(terms.failed);
    CHECK(std::isinf(terms.value()));
  }
}

TEST_CASE("inference on the tiny grammar") {
  const DomainPtr d = makeDomain("layout-tiny");
  const Grammar& g = d->grammar();
  const GrammarPrior prior = tinyPrior(*d);
  const ObjectiveWeights w;
  const Canvas rs = d->execute(parseProgramText(g, "(Color red (Prim square))"));
  const Canvas gc = d->execute(parseProgramText(g, "(Color green (Prim circle))"));
  SUBCASE("identical members recover the fully pinned template") {
    const auto r = inferGroup(*d, {rs, rs, rs}, prior, {32, 8}, w);
    CHECK(toText(g, r.triplet.tp) == "(Color red (Prim square))");
    CHECK(r.objective.value() == 0.0);
    CHECK(r.diagnostics.tp_candidates == 21);
  }
  SUBCASE("single member") {
    const auto r = inferGroup(*d, {gc}, prior, {32, 8}, w);
    REQUIRE(r.triplet.programs.size() == 1);
    CHECK(d->execute(r.triplet.programs[0]) == gc);
    CHECK(conforms(g, r.triplet.programs[0], r.triplet.tp));
  }
  SUBCASE("differing members relax the slots that differ") {
    const auto r = inferGroup(*d, {rs, gc}, prior, {32, 8}, w);
    CHECK(r.objective.reconstruction == 0.0);
    for (const auto& z : r.triplet.programs) CHECK(conforms(g, z, r.triplet.tp));
    // A variable on a single slot costs what a pinned value costs in the
    // template and in each member, so it beats a free slot.
    CHECK(toText(g, r.triplet.tp) == "(Color V0 (Prim V1))");
    CHECK(r.objective.dl == 0);
  }
  SUBCASE("deterministic and independent of worker count") {
    std::vector<Concept> cs{{"a", {rs, gc, rs}}, {"b", {gc, gc}}, {"c", {rs}}};
    const auto one = inferConcepts(*d, cs, prior, {8, 4}, w, 2, 5, 1);
    const auto many = inferConcepts(*d, cs, prior, {8, 4}, w, 2, 5, 3);
    CHECK(resultsToJsonl(*d, one) == resultsToJsonl(*d, many));
    CHECK(one.size() == 3);
    CHECK(one[2].chosen == std::vector<int>{0});
    CHECK(std::isfinite(meanObjective(one, w, 2)));
    CHECK_THROWS_AS(inferConcepts(*d, {}, prior, {8, 4}, w, 2, 5), DataError);
  }
}

TEST_CASE("narrow beams on the full grammar still return conforming triplets") {
  const DomainPtr d = makeDomain("layout-toy");
  const SamplerConfig cfg = defaultSamplerConfig(*d);
  const GrammarPrior prior = GrammarPrior::fromSampler(*d, cfg);
  Rng rng(17);
  for (int i = 0; i < 5; ++i) {
    const GroupTriplet t = sampleTriplet(*d, cfg, rng);
    try {
      const auto r = inferGroup(*d, t.visuals, prior, {3, 3}, {});
      for (const auto& z : r.triplet.programs) CHECK(conforms(d->grammar(), z, r.triplet.tp));
      CHECK(r.objective.value() == doctest::Approx(objective(*d, r.triplet, {})));
    } catch (const InferenceFailure&) {
    }
  }
}

TEST_CASE("concept files") {
  const DomainPtr d = makeDomain("layout-toy");
  const SamplerConfig cfg = defaultSamplerConfig(*d);
  Rng rng(3);
  std::vector<GroupTriplet> ts{sampleTriplet(*d, cfg, rng), sampleTriplet(*d, cfg, rng)};
  const auto cs = conceptsFromTriplets(ts);
  const auto back = conceptsFromJsonl(*d, conceptsToJsonl(*d, cs));
  REQUIRE(back.size() == 2);
  CHECK(back[1].id == "c1");
  CHECK(back[1].members == ts[1].visuals);
  // Triplet lines are accepted as concepts.
  CHECK(conceptsFromJsonl(*d, tripletsToJsonl(*d, ts))[0].members == ts[0].visuals);
  const DomainPtr other = makeDomain("layout");
  CHECK_THROWS_AS(conceptsFromJsonl(*other, conceptsToJsonl(*d, cs)), DataError);
}
