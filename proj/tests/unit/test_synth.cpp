#include <set>

#include "doctest.h"
#include "tplprog/domain.hpp"
#include "tplprog/errors.hpp"
#include "tplprog/synth.hpp"

using namespace tplprog;

namespace {

// Coarse (relatable) values of a program in pre-order.
void coarseValues(const Grammar& g, const Expr& e, std::vector<int>& out) {
  const auto& sig = g.function(e.fn);
  for (int i = 0; i < sig.paramCount(); ++i)
    if (g.relatable(sig.param_types[static_cast<std::size_t>(i)])) out.push_back(e.args[static_cast<std::size_t>(i)].index);
  for (const auto& c : e.children) coarseValues(g, c, out);
}

void skeleton(const Expr& e, std::vector<int>& out) {
  out.push_back(e.fn);
  for (const auto& c : e.children) skeleton(c, out);
}

bool allPinned(const Grammar& g, const Expr& e) {
  if (e.isHole()) return false;
  const auto& sig = g.function(e.fn);
  for (int i = 0; i < sig.paramCount(); ++i)
    if (g.relatable(sig.param_types[static_cast<std::size_t>(i)]) && e.args[static_cast<std::size_t>(i)].kind != ArgKind::Value) return false;
  for (const auto& c : e.children)
    if (!allPinned(g, c)) return false;
  return true;
}

bool allFree(const Expr& e) {
  if (e.isHole()) return false;
  for (const auto& a : e.args)
    if (a.kind != ArgKind::Free) return false;
  for (const auto& c : e.children)
    if (!allFree(c)) return false;
  return true;
}

}  // namespace

TEST_CASE("sampler basics") {
  const DomainPtr d = makeDomain("layout");
  SamplerConfig cfg = defaultSamplerConfig(*d);
  SUBCASE("depth one forces a bare primitive") {
    cfg.max_depth = 1;
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(d->grammar().function(sampleProgram(*d, cfg, rng).root().fn).symbol == "Prim");
  }
  SUBCASE("fixed seed reproduces") {
    Rng a(99), b(99);
    for (int i = 0; i < 20; ++i) CHECK(sampleProgram(*d, cfg, a) == sampleProgram(*d, cfg, b));
  }
  SUBCASE("config validation") {
    cfg.pin_prob = 0.9;
    cfg.share_prob = 0.2;
    CHECK_THROWS(cfg.validate());
    CHECK_THROWS(SamplerConfig::fromJson(nlohmann::json{{"bogus", 1}}));
    const SamplerConfig back = SamplerConfig::fromJson(defaultSamplerConfig(*d).toJson());
    CHECK(back.toJson() == defaultSamplerConfig(*d).toJson());
  }
}

TEST_CASE("collapse limiting cases and soundness") {
  for (std::string id : {"layout", "stroke"}) {
    CAPTURE(id);
    const DomainPtr d = makeDomain(id);
    const Grammar& g = d->grammar();
    SamplerConfig cfg = defaultSamplerConfig(*d);
    Rng rng(7);
    for (int i = 0; i < 300; ++i) {
      const Program z = sampleProgram(*d, cfg, rng);
      const Template tp = collapse(g, z, cfg, rng);
      CHECK(conforms(g, z, tp).has_value());
      CHECK(tp.holeCount() <= kMaxHoles);
    }
    SamplerConfig pinned = cfg;
    pinned.hole_prob = 0, pinned.pin_prob = 1, pinned.share_prob = 0;
    SamplerConfig bare = cfg;
    bare.hole_prob = 0, bare.pin_prob = 0, bare.share_prob = 0;
    for (int i = 0; i < 50; ++i) {
      const Program z = sampleProgram(*d, cfg, rng);
      CHECK(allPinned(g, collapse(g, z, pinned, rng).root()));
      const Template sk = collapse(g, z, bare, rng);
      CHECK(allFree(sk.root()));
      CHECK(sk.root() == eraseParams(z.root()));
    }
  }
}

TEST_CASE("groups conform and respect pinning") {
  for (std::string id : {"layout", "stroke"}) {
    CAPTURE(id);
    const DomainPtr d = makeDomain(id);
    const Grammar& g = d->grammar();
    SamplerConfig cfg = defaultSamplerConfig(*d);
    Rng rng(13);
    for (int i = 0; i < 40; ++i) {
      const GroupTriplet t = sampleTriplet(*d, cfg, rng);
      REQUIRE(t.programs.size() == 5);
      for (std::size_t m = 0; m < t.programs.size(); ++m) {
        CHECK(conforms(g, t.programs[m], t.tp).has_value());
        CHECK(d->execute(t.programs[m]) == t.visuals[m]);
      }
    }
    SamplerConfig pinned = cfg;
    pinned.hole_prob = 0, pinned.pin_prob = 1, pinned.share_prob = 0;
    SamplerConfig nohole = cfg;
    nohole.hole_prob = 0;
    for (int i = 0; i < 20; ++i) {
      const Program z = sampleProgram(*d, cfg, rng);
      const GroupTriplet t = sampleGroup(*d, collapse(g, z, pinned, rng), cfg, rng);
      std::vector<int> first;
      coarseValues(g, t.programs[0].root(), first);
      for (const auto& p : t.programs) {
        std::vector<int> v;
        coarseValues(g, p.root(), v);
        CHECK(v == first);
      }
      const GroupTriplet u = sampleGroup(*d, collapse(g, z, nohole, rng), cfg, rng);
      std::vector<int> sk0;
      skeleton(u.programs[0].root(), sk0);
      for (const auto& p : u.programs) {
        std::vector<int> sk;
        skeleton(p.root(), sk);
        CHECK(sk == sk0);
      }
    }
  }
}

TEST_CASE("teacher-forced targets rebuild every member") {
  for (std::string id : {"layout", "stroke", "layout-toy"}) {
    CAPTURE(id);
    const DomainPtr d = makeDomain(id);
    const Grammar& g = d->grammar();
    SamplerConfig cfg = defaultSamplerConfig(*d);
    Rng rng(21);
    for (int i = 0; i < 60; ++i) {
      const GroupTriplet t = sampleTriplet(*d, cfg, rng);
      const auto ex = formatTargets(*d, t, rng);
      REQUIRE(ex.size() == 1 + 2 * t.programs.size());
      CHECK(ex[0].role == Role::Template);
      CHECK(ex[0].visuals.size() == t.programs.size());
      const AnyTree back = parse(g, ex[0].target);
      CHECK(std::visit([](const auto& x) -> const Expr& { return x.root(); }, back) == t.tp.root());
      for (std::size_t m = 0; m < t.programs.size(); ++m) {
        const auto& e = ex[1 + 2 * m];
        const auto& p = ex[2 + 2 * m];
        CHECK(e.role == Role::Expansion);
        CHECK(p.role == Role::Param);
        const Expansion se = expand(g, t.tp, fillsFromTarget(g, t.tp, e.target));
        CHECK(linearize(g, se) == p.program);
        CHECK(instantiate(g, se, bindingsFromTarget(g, se, p.target)) == t.programs[m]);
        if (t.tp.holeCount() == 0) CHECK(e.target.size() == 2);
      }
    }
  }
}

TEST_CASE("a shared variable is predicted once") {
  const DomainPtr d = makeDomain("layout");
  const Grammar& g = d->grammar();
  const Template tp = parseTemplateText(
      g, "(UNION (Move xt=V0 ? yt=? ? (Prim square)) (UNION (Move xt=V0 ? yt=0 ? (Prim circle)) (Move xt=V0 ? yt=0 ? (Prim circle))))");
  const Program z = parseProgramText(
      g, "(UNION (Move xt=0.5 yt=0.25 (Prim square)) (UNION (Move xt=0.5 yt=0 (Prim circle)) (Move xt=0.5 yt=0 (Prim circle))))");
  auto w = conforms(g, z, tp);
  REQUIRE(w);
  const Expansion se = expand(g, tp, w->fills);
  const TokenSeq target = paramTarget(g, se, w->bindings);
  int shared = 0;
  for (const auto& t : target) shared += t.kind == TokenKind::Shared;
  CHECK(shared == 1);
  CHECK(paramPredictionCount(se.root()) == 1 + 3 + 2 + 2);
  CHECK(instantiate(g, se, bindingsFromTarget(g, se, target)) == z);
}

TEST_CASE("formatTargets rejects a non-conforming triplet") {
  const DomainPtr d = makeDomain("layout");
  const Grammar& g = d->grammar();
  GroupTriplet t;
  t.tp = parseTemplateText(g, "(Color red (Prim ?))");
  t.programs = {parseProgramText(g, "(Color blue (Prim square))")};
  t.visuals = {d->execute(t.programs[0])};
  Rng rng(0);
  CHECK_THROWS_AS(formatTargets(*d, t, rng), TypeError);
}

TEST_CASE("triplet JSONL round-trip") {
  for (std::string id : {"layout", "stroke"}) {
    const DomainPtr d = makeDomain(id);
    SamplerConfig cfg = defaultSamplerConfig(*d);
    Rng rng(4);
    std::vector<GroupTriplet> ts;
    for (int i = 0; i < 10; ++i) ts.push_back(sampleTriplet(*d, cfg, rng));
    const std::string text = tripletsToJsonl(*d, ts);
    const auto back = tripletsFromJsonl(*d, text);
    REQUIRE(back.size() == ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
      CHECK(back[i].tp == ts[i].tp);
      CHECK(back[i].programs == ts[i].programs);
      CHECK(back[i].visuals == ts[i].visuals);
    }
    CHECK(tripletsToJsonl(*d, back) == text);
  }
}
