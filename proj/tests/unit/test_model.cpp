#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "tplprog/errors.hpp"
#include "tplprog/transformer.hpp"

using namespace tplprog;

namespace {

std::vector<TrainingExample> someExamples(const Domain& d, std::uint64_t seed, int triplets) {
  SamplerConfig cfg = defaultSamplerConfig(d);
  cfg.group_size = 3;
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (int i = 0; i < triplets; ++i) {
    const auto ex = formatTargets(d, sampleTriplet(d, cfg, rng), rng);
    out.insert(out.end(), ex.begin(), ex.end());
  }
  return out;
}

}  // namespace

TEST_CASE("gradient matches central differences") {
  const DomainPtr d = makeDomain("layout-toy");
  ModelConfig cfg = ModelConfig::named("tiny");
  cfg.seed = 3;
  TransformerModel m(*d, cfg);
  for (VisualMode mode : {VisualMode::Inference, VisualMode::FewShot}) {
    m.setMode(mode);
    const auto batch = someExamples(*d, 11, 1);
    std::vector<double> grad;
    m.lossAndGrad(batch, grad);
    // Probe the ten largest-magnitude coordinates of a strided slice, so every
    // tensor family is visited without probing structurally zero entries.
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < grad.size(); i += 97) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(grad[a]) > std::abs(grad[b]); });
    idx.resize(10);
    for (std::size_t i : idx) {
      const double h = 1e-5;
      const double keep = m.params()[i];
      m.params()[i] = keep + h;
      std::vector<double> scratch;
      const double up = m.lossAndGrad(batch, scratch);
      m.params()[i] = keep - h;
      scratch.clear();
      const double down = m.lossAndGrad(batch, scratch);
      m.params()[i] = keep;
      const double fd = (up - down) / (2 * h);
      CAPTURE(i);
      CHECK(std::abs(fd - grad[i]) / std::max(std::abs(fd) + std::abs(grad[i]), 1e-8) < 1e-3);
    }
  }
}

TEST_CASE("single batch overfits") {
  const DomainPtr d = makeDomain("layout-toy");
  ModelConfig cfg = ModelConfig::named("tiny");
  cfg.lr = 3e-3;
  TransformerModel m(*d, cfg);
  const auto batch = someExamples(*d, 5, 1);
  double last = 1e9;
  int steps = 0;
  while (steps < 200 && last >= 0.1) {
    m.trainStep(batch);
    last = m.loss(batch);
    ++steps;
  }
  MESSAGE("overfit reached " << last << " nats/token after " << steps << " steps");
  CHECK(last < 0.1);
}

TEST_CASE("incremental decoding agrees with the full forward pass") {
  const DomainPtr d = makeDomain("layout-toy");
  TransformerModel m(*d, ModelConfig::named("tiny"));
  for (const auto& ex : someExamples(*d, 9, 1)) {
    Cursor c = ex.role == Role::Template ? Cursor::forTemplate(d->grammar())
             : ex.role == Role::Expansion
                 ? Cursor::forExpansion(d->grammar(), Template(d->grammar(), std::visit([](const auto& x) -> const Expr& { return x.root(); }, parse(d->grammar(), ex.program))))
                 : Cursor::forParams(d->grammar(), Expansion(d->grammar(), std::visit([](const auto& x) -> const Expr& { return x.root(); }, parse(d->grammar(), ex.program))));
    // Full-vocabulary cross-entropy from the session must equal loss().
    auto s = m.start(conditioningOf(ex));
    double nll = 0;
    std::vector<double> sc;
    for (std::size_t i = 1; i < ex.target.size(); ++i) {
      s->scores(c, sc);
      const double mx = *std::max_element(sc.begin(), sc.end());
      double z = 0;
      for (double v : sc) z += std::exp(v - mx);
      nll += std::log(z) + mx - sc[static_cast<std::size_t>(d->grammar().tokenId(ex.target[i]))];
      s->advance(ex.target[i]);
      c.push(ex.target[i]);
    }
    CHECK(nll / static_cast<double>(ex.target.size() - 1) == doctest::Approx(m.loss({ex})).epsilon(1e-9));
  }
}

TEST_CASE("generative mode ignores visuals and training it leaves the inference model alone") {
  const DomainPtr d = makeDomain("layout-toy");
  TransformerModel inf(*d, ModelConfig::named("tiny"));
  TransformerModel gen = inf.generativeCopy();
  auto batch = someExamples(*d, 4, 1);
  auto blank = batch;
  for (auto& ex : blank)
    for (auto& v : ex.visuals) std::fill(v.begin(), v.end(), 0.0);
  CHECK(gen.loss(batch) == gen.loss(blank));
  CHECK(inf.loss(batch) != inf.loss(blank));
  const std::uint64_t before = inf.paramHash();
  for (int i = 0; i < 5; ++i) gen.trainStep(batch);
  CHECK(inf.paramHash() == before);
  CHECK(gen.paramHash() != before);
}

TEST_CASE("checkpoint round trip") {
  const DomainPtr d = makeDomain("layout-toy");
  ModelConfig cfg = ModelConfig::named("tiny");
  cfg.lr = 1e-3;
  TransformerModel m(*d, cfg);
  const auto batch = someExamples(*d, 6, 1);
  m.trainStep(batch);
  const std::string path = (std::filesystem::temp_directory_path() / "tplprog_ckpt_test.bin").string();
  m.save(path);
  TransformerModel r = TransformerModel::load(*d, path);
  CHECK(r.paramHash() == m.paramHash());
  CHECK(r.steps() == 1);
  CHECK(r.config().lr == cfg.lr);
  // Optimizer moments survive: one more step lands on the same parameters.
  m.trainStep(batch);
  r.trainStep(batch);
  CHECK(r.paramHash() == m.paramHash());
  const DomainPtr other = makeDomain("layout");
  CHECK_THROWS_AS(TransformerModel::load(*other, path), DataError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(ModelConfig::fromJson({{"depth", 3}}), DataError);
}

TEST_CASE("cold sampling converges to greedy decoding") {
  const DomainPtr d = makeDomain("layout-toy");
  TransformerModel m(*d, ModelConfig::named("tiny"));
  const auto ex = someExamples(*d, 2, 1).front();
  const Conditioning c = conditioningOf(ex);
  const Decoded greedy = decodeOne(m, c, Cursor::forTemplate(d->grammar()));
  Rng rng(1);
  for (int i = 0; i < 5; ++i) CHECK(decodeOne(m, c, Cursor::forTemplate(d->grammar()), &rng, 1e-6).tokens == greedy.tokens);
}
