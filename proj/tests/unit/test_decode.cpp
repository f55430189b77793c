#include <cmath>
#include <set>

#include "doctest.h"
#include "tplprog/decode.hpp"
#include "tplprog/errors.hpp"

using namespace tplprog;

namespace {

// Depth-first enumeration of every complete sequence a cursor admits.
void enumerate(Cursor c, std::vector<TokenSeq>& out, std::size_t limit) {
  if (out.size() > limit) return;
  if (c.done()) {
    out.push_back(c.tokens());
    return;
  }
  for (const auto& t : c.legal()) {
    Cursor n = c;
    n.push(t);
    enumerate(n, out, limit);
  }
}

}  // namespace

TEST_CASE("teacher-forced targets are legal under the cursors") {
  for (std::string id : {"layout", "stroke", "layout-toy"}) {
    CAPTURE(id);
    const DomainPtr d = makeDomain(id);
    const Grammar& g = d->grammar();
    const SamplerConfig cfg = defaultSamplerConfig(*d);
    const GrammarPrior prior = GrammarPrior::fromSampler(*d, cfg);
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
      const GroupTriplet t = sampleTriplet(*d, cfg, rng);
      const auto ex = formatTargets(*d, t, rng);
      CHECK(std::isfinite(sequenceLogProb(prior, {}, Cursor::forTemplate(g), ex[0].target)));
      for (std::size_t m = 0; m < t.programs.size(); ++m) {
        CHECK(std::isfinite(sequenceLogProb(prior, {}, Cursor::forExpansion(g, t.tp), ex[1 + 2 * m].target)));
        const AnyTree any = parse(g, ex[2 + 2 * m].program);
        const Expansion se(g, std::visit([](const auto& x) -> const Expr& { return x.root(); }, any));
        CHECK(std::isfinite(sequenceLogProb(prior, {}, Cursor::forParams(g, se), ex[2 + 2 * m].target)));
      }
    }
  }
}

TEST_CASE("prior samples always parse and respect caps") {
  for (std::string id : {"layout", "stroke"}) {
    CAPTURE(id);
    const DomainPtr d = makeDomain(id);
    const Grammar& g = d->grammar();
    const GrammarPrior prior = GrammarPrior::fromSampler(*d, defaultSamplerConfig(*d));
    Rng rng(2);
    int executed = 0;
    for (int i = 0; i < 1000; ++i) {
      const Decoded tpd = decodeOne(prior, {}, Cursor::forTemplate(g), &rng);
      REQUIRE(static_cast<int>(tpd.tokens.size()) <= g.caps().template_len);
      const AnyTree any = parse(g, tpd.tokens);
      const Template tp(g, std::visit([](const auto& x) -> const Expr& { return x.root(); }, any));
      Decoded xd;
      try {
        xd = decodeOne(prior, {}, Cursor::forExpansion(g, tp), &rng);
      } catch (const DecodeError&) {
        continue;  // counted-reference dead end
      }
      CHECK(static_cast<int>(xd.tokens.size()) <= g.caps().expansion_len);
      const Expansion se = expand(g, tp, fillsFromTarget(g, tp, xd.tokens));
      CHECK(static_cast<int>(linearize(g, se).size()) <= g.caps().program_len);
      const Decoded pd = decodeOne(prior, {}, Cursor::forParams(g, se), &rng);
      CHECK(static_cast<int>(pd.tokens.size()) <= g.caps().param_len);
      const Program z = instantiate(g, se, bindingsFromTarget(g, se, pd.tokens));
      CHECK(conforms(g, z, tp).has_value());
      try {
        d->execute(z);
        ++executed;
      } catch (const SceneOverflow&) {
      }
    }
    CHECK(executed > 800);
  }
}

TEST_CASE("grammar prior probabilities") {
  const DomainPtr d = makeDomain("layout");
  const Grammar& g = d->grammar();
  GrammarPrior::Config cfg;
  for (const auto& f : g.functions()) cfg.weights[f.symbol] = 1.0;
  const GrammarPrior prior(g, cfg);
  const Expansion se = std::get<Expansion>(parseText(g, "(Prim ?)"));
  Cursor c = Cursor::forParams(g, se);
  c.push(Token::sentinel(0));
  std::vector<double> sc;
  prior.start({})->scores(c, sc);
  const auto lp = maskedLogProbs(c, sc);
  REQUIRE(lp.size() == 3);
  for (double v : lp) CHECK(std::exp(v) == doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(c.isLegal(Token::end()));
  CHECK_THROWS_AS(c.push(Token::function(0)), DecodeError);
  cfg.weights.erase("Prim");
  CHECK_THROWS_AS(GrammarPrior(g, cfg), DataError);
}

TEST_CASE("cursor masks") {
  const DomainPtr d = makeDomain("stroke");
  const Grammar& g = d->grammar();
  SUBCASE("MOVE needs an earlier stroke") {
    Cursor c = Cursor::forTemplate(g);
    CHECK_FALSE(c.isLegal(Token::function(g.functionId("MOVE"))));
    c.push(Token::function(g.functionId("ON")));
    c.push(Token::function(g.functionId("EMPTY")));
    CHECK(c.isLegal(Token::function(g.functionId("MOVE"))));
    c.push(Token::function(g.functionId("MOVE")));
    const int si = g.paramTypeId("si");
    CHECK(c.isLegal(Token::value(si, 0)));
    CHECK_FALSE(c.isLegal(Token::value(si, 1)));
  }
  SUBCASE("shared variables are numbered canonically and typed") {
    const DomainPtr l = makeDomain("layout");
    const Grammar& lg = l->grammar();
    Cursor c = Cursor::forTemplate(lg);
    c.push(Token::function(lg.functionId("Move")));
    CHECK(c.isLegal(Token::shared(0)));
    CHECK_FALSE(c.isLegal(Token::shared(1)));
    c.push(Token::shared(0));  // xt
    c.push(Token::sentinel(0));
    CHECK_FALSE(c.isLegal(Token::shared(0)));  // yt is another type
    CHECK(c.isLegal(Token::shared(1)));
  }
  SUBCASE("expansion fills are function-only and holes are forced") {
    const DomainPtr l = makeDomain("layout");
    const Grammar& lg = l->grammar();
    Cursor c = Cursor::forExpansion(lg, parseTemplateText(lg, "(UNION (HOLE 0) (HOLE 1))"));
    REQUIRE(c.legal().size() == 1);
    CHECK(c.legal()[0] == Token::hole(0));
  }
}

TEST_CASE("tiny grammar enumerates 21 templates") {
  const DomainPtr d = makeDomain("layout-tiny");
  std::vector<TokenSeq> all;
  enumerate(Cursor::forTemplate(d->grammar()), all, 1000);
  CHECK(all.size() == 21);
  std::set<TokenSeq> uniq(all.begin(), all.end());
  CHECK(uniq.size() == all.size());
}

TEST_CASE("beam search") {
  const DomainPtr d = makeDomain("layout-tiny");
  const Grammar& g = d->grammar();
  GrammarPrior::Config cfg;
  cfg.weights = {{"Color", 1.0}, {"Prim", 1.0}};
  const GrammarPrior prior(g, cfg);
  SUBCASE("exhaustive width returns everything, ordered") {
    const auto res = beamSearch(prior, {}, Cursor::forTemplate(g), 32);
    CHECK(res.size() == 21);
    double total = 0;
    for (std::size_t i = 0; i < res.size(); ++i) {
      total += std::exp(res[i].logp);
      if (i) CHECK(res[i - 1].logp >= res[i].logp);
      CHECK(sequenceLogProb(prior, {}, Cursor::forTemplate(g), res[i].tokens) == doctest::Approx(res[i].logp));
    }
    CHECK(total == doctest::Approx(1.0));
  }
  SUBCASE("widening never loses a hypothesis") {
    const DomainPtr l = makeDomain("layout");
    const GrammarPrior lp = GrammarPrior::fromSampler(*l, defaultSamplerConfig(*l));
    std::set<TokenSeq> prev;
    for (int w = 1; w <= 5; ++w) {
      std::set<TokenSeq> cur;
      for (const auto& r : beamSearch(lp, {}, Cursor::forTemplate(l->grammar()), w)) cur.insert(r.tokens);
      for (const auto& t : prev) CHECK(cur.count(t) == 1);
      prev = cur;
    }
  }
  SUBCASE("greedy equals the top of a width-one beam") {
    const Decoded gr = decodeOne(prior, {}, Cursor::forTemplate(g));
    CHECK(gr.tokens == beamSearch(prior, {}, Cursor::forTemplate(g), 1).front().tokens);
  }
}
