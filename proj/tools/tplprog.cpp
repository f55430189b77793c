// Command-line front end: dataset generation, training, inference, tasks and
// evaluation. Every command is deterministic given --seed and its inputs.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "tplprog/errors.hpp"
#include "tplprog/finetune.hpp"
#include "tplprog/stroke.hpp"
#include "tplprog/tasks.hpp"
#include "tplprog/util.hpp"

using namespace tplprog;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void note(const std::string& s) { std::cerr << s << '\n'; }

struct Common {
  std::string domain = "layout";
  std::uint64_t seed = 0;
  int jobs = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  bool timestamps = false;
};

void addCommon(CLI::App* app, Common& c) {
  app->add_option("--domain", c.domain, "layout, stroke, layout-toy or layout-tiny")->capture_default_str();
  app->add_option("--seed", c.seed, "seed for every random choice")->capture_default_str();
  app->add_option("--jobs", c.jobs, "worker threads for group-level stages")->check(CLI::PositiveNumber);
  app->add_flag("--timestamps", c.timestamps, "record wall-clock time in the manifest (outputs stop being byte-stable)");
}

DomainPtr domainOf(const Common& c) {
  const auto ids = domainIds();
  if (std::find(ids.begin(), ids.end(), c.domain) == ids.end()) throw UsageError("unknown domain '" + c.domain + "'");
  return makeDomain(c.domain);
}

json loadJson(const std::string& path) {
  try {
    return json::parse(readFile(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---- Manifest ------------------------------------------------------------------------------

class Manifest {
 public:
  Manifest(std::string command, const Common& c) : command_(std::move(command)), common_(c) {}

  json config = json::object();

  void input(const std::string& path) { inputs_.push_back({{"path", path}, {"fnv1a", hex64(fnv1a(readFile(path)))}}); }

  /// manifest.json at the top of `dir`, hashing every other file below it.
  void finishDir(const fs::path& dir) const {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path() != dir / "manifest.json") files.push_back(fs::relative(e.path(), dir).generic_string());
    std::sort(files.begin(), files.end());
    json outs = json::array();
    for (const auto& f : files) outs.push_back({{"path", f}, {"fnv1a", hex64(fnv1a(readFile((dir / f).string())))}});
    writeFile((dir / "manifest.json").string(), body(outs).dump(2) + "\n");
  }

  /// `<file>.manifest.json` next to a single-file output.
  void finishFile(const fs::path& file) const {
    json outs = json::array({{{"path", file.filename().string()}, {"fnv1a", hex64(fnv1a(readFile(file.string())))}}});
    writeFile(file.string() + ".manifest.json", body(outs).dump(2) + "\n");
  }

 private:
  json body(const json& outputs) const {
    json j{{"command", command_}, {"domain", common_.domain}, {"seed", common_.seed}, {"config", config},
           {"inputs", inputs_},   {"outputs", outputs}};
    if (common_.timestamps) {
      const auto now = std::chrono::system_clock::now().time_since_epoch();
      j["finished_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    }
    return j;
  }

  std::string command_;
  Common common_;
  json inputs_ = json::array();
};

fs::path prepareDir(const std::string& dir) {
  if (dir.empty()) throw UsageError("an output directory is required (-o)");
  fs::create_directories(dir);
  return fs::path(dir);
}

// ---- Canvas and program files -----------------------------------------------------------------

Canvas readCanvas(const Domain& d, const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".cnv") {
    const std::string raw = readFile(path);
    return d.undump(std::vector<std::uint8_t>(raw.begin(), raw.end()));
  }
  if (d.family() == "stroke" && (ext == ".pgm" || ext == ".ppm")) return ingestImage(path);
  throw DataError(path + ": expected a .cnv canvas dump" + std::string(d.family() == "stroke" ? " or a PGM/PPM image" : ""));
}

std::string canvasBytes(const Domain& d, const Canvas& c, const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".cnv") {
    const auto raw = d.dump(c);
    return std::string(raw.begin(), raw.end());
  }
  if (ext == "." + d.imageExtension()) return d.encodeImage(c);
  throw UsageError(path + ": output must end in .cnv or ." + d.imageExtension());
}

std::string imageName(const Domain& d, const std::string& stem) { return stem + "." + d.imageExtension(); }

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty())
    std::cout << text;
  else
    writeFile(out, text);
}

// ---- Models --------------------------------------------------------------------------------

struct ModelChoice {
  std::string checkpoint;
  bool prior = false;
  std::string sampler_config;
};

void addModelChoice(CLI::App* app, ModelChoice& m, const std::string& what) {
  auto* ck = app->add_option("--checkpoint", m.checkpoint, what + " checkpoint");
  auto* pr = app->add_flag("--prior", m.prior, "use the grammar prior instead of a checkpoint");
  ck->excludes(pr);
  app->add_option("--sampler-config", m.sampler_config, "sampler config for the grammar prior's weights");
}

SamplerConfig samplerConfig(const Domain& d, const std::string& path) {
  if (path.empty()) return defaultSamplerConfig(d);
  SamplerConfig cfg = defaultSamplerConfig(d);
  json j = cfg.toJson();
  j.update(loadJson(path));
  return SamplerConfig::fromJson(j);
}

std::unique_ptr<ProposalModel> loadModel(const Domain& d, const ModelChoice& m, Manifest& man, std::optional<VisualMode> mode = {}) {
  if (!m.sampler_config.empty()) man.input(m.sampler_config);
  if (m.prior || m.checkpoint.empty()) {
    if (!m.prior) throw UsageError("give --checkpoint or --prior");
    man.config["model"] = "grammar-prior";
    return std::make_unique<GrammarPrior>(GrammarPrior::fromSampler(d, samplerConfig(d, m.sampler_config)));
  }
  man.input(m.checkpoint);
  auto model = std::make_unique<TransformerModel>(TransformerModel::load(d, m.checkpoint));
  if (mode) model->setMode(*mode);
  man.config["model"] = {{"kind", "transformer"}, {"mode", visualModeName(model->mode())}};
  return model;
}

struct SearchOptions {
  int bm_tp = 5, bm_z = 5;
  double lambda1 = 1.0, lambda2 = 0.001;
};

void addSearch(CLI::App* app, SearchOptions& s) {
  app->add_option("--bm-tp", s.bm_tp, "template beam width")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--bm-z", s.bm_z, "expansion and parameter beam width")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--lambda1", s.lambda1, "reconstruction weight")->capture_default_str();
  app->add_option("--lambda2", s.lambda2, "description-length weight")->capture_default_str();
}

BeamConfig beamsOf(const SearchOptions& s) { return {s.bm_tp, s.bm_z}; }
ObjectiveWeights weightsOf(const SearchOptions& s) {
  ObjectiveWeights w;
  w.lambda1 = s.lambda1;
  w.lambda2 = s.lambda2;
  return w;
}
json searchJson(const SearchOptions& s) { return {{"bm_tp", s.bm_tp}, {"bm_z", s.bm_z}, {"lambda1", s.lambda1}, {"lambda2", s.lambda2}}; }

// ---- Self test -------------------------------------------------------------------------------

const Expr& rootOf(const AnyTree& t) {
  return std::visit([](const auto& x) -> const Expr& { return x.root(); }, t);
}

/// Round trips, collapse soundness, teacher forcing and executor determinism
/// over sampled triplets. Returns the number of failures.
int selfTest(int n, std::uint64_t seed, json& report) {
  int failures = 0;
  for (const std::string id : {"layout", "stroke", "layout-toy"}) {
    const DomainPtr d = makeDomain(id);
    const Grammar& g = d->grammar();
    const SamplerConfig cfg = defaultSamplerConfig(*d);
    Rng rng(fnv1a(id, seed));
    std::map<std::string, int> fails;
    for (const char* k : {"round_trip", "collapse", "teacher_forcing", "execute"}) fails[k] = 0;
    for (int i = 0; i < n; ++i) {
      const GroupTriplet t = sampleTriplet(*d, cfg, rng);
      const Program& z = t.programs[0];
      const TokenSeq zt = linearize(g, z), tt = linearize(g, t.tp);
      if (linearize(g, std::get<Program>(parse(g, zt))) != zt || rootOf(parse(g, tt)) != t.tp.root() ||
          parseProgramText(g, toText(g, z)) != z)
        ++fails["round_trip"];
      Rng crng(static_cast<std::uint64_t>(i));
      if (!conforms(g, z, collapse(g, z, cfg, crng))) ++fails["collapse"];
      const auto ex = formatTargets(*d, t, rng);
      for (std::size_t m = 0; m < t.programs.size(); ++m) {
        const Expansion se = expand(g, t.tp, fillsFromTarget(g, t.tp, ex[1 + 2 * m].target));
        if (instantiate(g, se, bindingsFromTarget(g, se, ex[2 + 2 * m].target)) != t.programs[m]) ++fails["teacher_forcing"];
        if (d->execute(t.programs[m]) != t.visuals[m]) ++fails["execute"];
      }
    }
    for (const auto& [k, v] : fails) failures += v;
    report[id] = {{"samples", n}, {"failures", fails}};
  }
  return failures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Template-program induction toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tplprog 1.0");
  Common common;
  int status = 0;

  // sample ------------------------------------------------------------------------------------
  struct {
    int n = 10, group_size = 0;
    std::string kind = "triplets", config, out;
  } sample;
  auto* s = app.add_subcommand("sample", "synthetic triplets, concepts or co-segmentation fixtures as JSONL");
  addCommon(s, common);
  s->add_option("--n", sample.n, "records to generate")->check(CLI::NonNegativeNumber)->capture_default_str();
  s->add_option("--kind", sample.kind, "triplets, concepts or coseg")->check(CLI::IsMember({"triplets", "concepts", "coseg"}))->capture_default_str();
  s->add_option("--config", sample.config, "sampler config JSON");
  s->add_option("--group-size", sample.group_size, "members per group (overrides the config)")->check(CLI::PositiveNumber);
  s->add_option("-o,--out", sample.out, "output file (default stdout)");
  s->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("sample", common);
    SamplerConfig cfg = samplerConfig(*d, sample.config);
    if (!sample.config.empty()) man.input(sample.config);
    if (sample.group_size > 0) cfg.group_size = sample.group_size;
    cfg.seed = common.seed;
    cfg.validate();
    man.config = {{"sampler", cfg.toJson()}, {"n", sample.n}, {"kind", sample.kind}};
    Rng rng(cfg.seed);
    std::string text;
    if (sample.kind == "coseg") {
      std::vector<CosegFixture> fs;
      while (static_cast<int>(fs.size()) < sample.n)
        if (auto f = cosegFixture(*d, sampleTriplet(*d, cfg, rng), "g" + std::to_string(fs.size()))) fs.push_back(std::move(*f));
      text = cosegFixturesToJsonl(*d, fs);
    } else {
      std::vector<GroupTriplet> ts;
      for (int i = 0; i < sample.n; ++i) ts.push_back(sampleTriplet(*d, cfg, rng));
      text = sample.kind == "triplets" ? tripletsToJsonl(*d, ts) : conceptsToJsonl(*d, conceptsFromTriplets(ts));
    }
    emit(text, sample.out);
    if (!sample.out.empty()) man.finishFile(sample.out);
  });

  // execute ------------------------------------------------------------------------------------
  struct {
    std::string program, out;
  } exec;
  auto* e = app.add_subcommand("execute", "run a program file and write its canvas");
  addCommon(e, common);
  e->add_option("program", exec.program, "S-expression program file")->required();
  e->add_option("-o,--out", exec.out, "output .cnv dump or image")->required();
  e->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("execute", common);
    man.input(exec.program);
    const Program z = parseProgramText(d->grammar(), trim(readFile(exec.program)));
    writeFile(exec.out, canvasBytes(*d, d->execute(z), exec.out));
    man.finishFile(exec.out);
  });

  // render -------------------------------------------------------------------------------------
  struct {
    std::string input, out;
  } render;
  auto* r = app.add_subcommand("render", "render a canvas dump, or every canvas of a JSONL file, as images");
  addCommon(r, common);
  r->add_option("input", render.input, ".cnv dump or triplet/concept JSONL")->required();
  r->add_option("-o,--out", render.out, "image file (for a dump) or directory (for JSONL)")->required();
  r->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("render", common);
    man.input(render.input);
    if (fs::path(render.input).extension() == ".jsonl") {
      const fs::path dir = prepareDir(render.out);
      for (const auto& c : conceptsFromJsonl(*d, readFile(render.input)))
        for (std::size_t m = 0; m < c.members.size(); ++m)
          writeFile((dir / imageName(*d, c.id + "_" + std::to_string(m))).string(), d->encodeImage(c.members[m]));
      man.finishDir(dir);
      return;
    }
    writeFile(render.out, canvasBytes(*d, readCanvas(*d, render.input), render.out));
    man.finishFile(render.out);
  });

  // collapse -----------------------------------------------------------------------------------
  struct {
    std::string program, config, out;
  } col;
  auto* c = app.add_subcommand("collapse", "turn a program into a random template it conforms to");
  addCommon(c, common);
  c->add_option("program", col.program, "S-expression program file")->required();
  c->add_option("--config", col.config, "sampler config JSON (hole/pin/share probabilities)");
  c->add_option("-o,--out", col.out, "output file (default stdout)");
  c->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("collapse", common);
    man.input(col.program);
    if (!col.config.empty()) man.input(col.config);
    const SamplerConfig cfg = samplerConfig(*d, col.config);
    man.config = cfg.toJson();
    const Program z = parseProgramText(d->grammar(), trim(readFile(col.program)));
    Rng rng(common.seed);
    emit(toText(d->grammar(), collapse(d->grammar(), z, cfg, rng)) + "\n", col.out);
    if (!col.out.empty()) man.finishFile(col.out);
  });

  // pretrain -----------------------------------------------------------------------------------
  struct {
    std::string model = "tiny", config, sampler, out, mode = "inference";
    int steps = -1, batch = -1;
    double lr = -1;
  } pre;
  auto* p = app.add_subcommand("pretrain", "train a proposal model on freshly sampled synthetic triplets");
  addCommon(p, common);
  p->add_option("--model", pre.model, "tiny, desk, full or a model config JSON")->capture_default_str();
  p->add_option("--config", pre.config, "pretraining config JSON");
  p->add_option("--sampler-config", pre.sampler, "sampler config JSON");
  p->add_option("--steps", pre.steps, "training steps")->check(CLI::PositiveNumber);
  p->add_option("--batch-size", pre.batch, "examples per step")->check(CLI::PositiveNumber);
  p->add_option("--lr", pre.lr, "learning rate")->check(CLI::PositiveNumber);
  p->add_option("--mode", pre.mode, "inference or few-shot")->check(CLI::IsMember({"inference", "few-shot"}))->capture_default_str();
  p->add_option("-o,--out", pre.out, "output directory")->required();
  p->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("pretrain", common);
    ModelConfig mc;
    if (fs::path(pre.model).extension() == ".json") {
      man.input(pre.model);
      mc = ModelConfig::fromJson(loadJson(pre.model));
    } else {
      mc = ModelConfig::named(pre.model);
    }
    mc.seed = common.seed;
    json pj = PretrainConfig{}.toJson();
    if (!pre.config.empty()) {
      man.input(pre.config);
      pj.update(loadJson(pre.config));
    }
    if (pre.steps > 0) pj["steps"] = pre.steps;
    if (pre.batch > 0) pj["batch_size"] = pre.batch;
    if (pre.lr > 0) pj["lr"] = pre.lr;
    pj["seed"] = common.seed;
    const PretrainConfig pc = PretrainConfig::fromJson(pj);
    if (!pre.sampler.empty()) man.input(pre.sampler);
    const SamplerConfig sc = samplerConfig(*d, pre.sampler);
    const fs::path dir = prepareDir(pre.out);
    TransformerModel m(*d, mc, pre.mode == "few-shot" ? VisualMode::FewShot : VisualMode::Inference);
    man.config = {{"model", mc.toJson()}, {"pretrain", pc.toJson()}, {"sampler", sc.toJson()}, {"mode", pre.mode}};
    const auto losses = pretrain(m, sc, pc, note);
    std::ostringstream csv;
    csv.precision(10);
    csv << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) csv << i + 1 << ',' << losses[i] << '\n';
    writeFile((dir / "losses.csv").string(), csv.str());
    m.save((dir / "model.ckpt").string());
    man.finishDir(dir);
  });

  // finetune -----------------------------------------------------------------------------------
  struct {
    std::string checkpoint, train, validation, config, out;
    int rounds = -1, epochs = -1, patience = -1, ws = -1, group_size = -1, bm_tp = -1, bm_z = -1;
    double lr = -1;
    bool resume = false;
  } ft;
  auto* f = app.add_subcommand("finetune", "bootstrapped fine-tuning on unlabeled concepts");
  addCommon(f, common);
  f->add_option("--checkpoint", ft.checkpoint, "starting p_inf checkpoint")->required();
  f->add_option("--train", ft.train, "training concepts JSONL")->required();
  f->add_option("--validation", ft.validation, "validation concepts JSONL")->required();
  f->add_option("--config", ft.config, "fine-tuning config JSON");
  f->add_option("--rounds", ft.rounds, "outer rounds")->check(CLI::NonNegativeNumber);
  f->add_option("--epochs", ft.epochs, "max epochs per round")->check(CLI::PositiveNumber);
  f->add_option("--patience", ft.patience, "epochs without improvement before a round stops")->check(CLI::PositiveNumber);
  f->add_option("--ws-samples", ft.ws, "dreams per round")->check(CLI::NonNegativeNumber);
  f->add_option("--group-size", ft.group_size, "members fed to inference")->check(CLI::PositiveNumber);
  f->add_option("--bm-tp", ft.bm_tp, "template beam width")->check(CLI::PositiveNumber);
  f->add_option("--bm-z", ft.bm_z, "expansion and parameter beam width")->check(CLI::PositiveNumber);
  f->add_option("--lr", ft.lr, "learning rate")->check(CLI::PositiveNumber);
  f->add_flag("--resume", ft.resume, "continue after the last completed round in the output directory");
  f->add_option("-o,--out", ft.out, "run directory")->required();
  f->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("finetune", common);
    for (const auto& in : {ft.checkpoint, ft.train, ft.validation}) man.input(in);
    json cj = FinetuneConfig{}.toJson();
    if (!ft.config.empty()) {
      man.input(ft.config);
      cj.update(loadJson(ft.config));
    }
    if (ft.rounds >= 0) cj["outer_rounds"] = ft.rounds;
    if (ft.epochs > 0) cj["max_epochs"] = ft.epochs;
    if (ft.patience > 0)
      cj["patience"] = ft.patience;
    else if (ft.epochs > 0)
      cj["patience"] = std::min(cj["patience"].get<int>(), ft.epochs);
    if (ft.ws >= 0) cj["ws_samples"] = ft.ws;
    if (ft.group_size > 0) cj["group_size"] = ft.group_size;
    if (ft.bm_tp > 0) cj["bm_tp"] = ft.bm_tp;
    if (ft.bm_z > 0) cj["bm_z"] = ft.bm_z;
    if (ft.lr > 0) cj["lr"] = ft.lr;
    cj["seed"] = common.seed;
    cj["jobs"] = common.jobs;
    FinetuneConfig cfg = FinetuneConfig::fromJson(cj);
    cfg.validate();
    // Worker count never changes results, so it stays out of the manifest.
    json snapshot = cfg.toJson();
    snapshot.erase("jobs");
    man.config = snapshot;
    const auto train = conceptsFromJsonl(*d, readFile(ft.train));
    const auto val = conceptsFromJsonl(*d, readFile(ft.validation));
    TransformerModel m = TransformerModel::load(*d, ft.checkpoint);
    const fs::path dir = prepareDir(ft.out);
    FinetuneOptions opts;
    opts.run_dir = dir.string();
    opts.resume = ft.resume;
    opts.log = note;
    const FinetuneHistory h = finetune(m, train, val, cfg, opts);
    m.save((dir / "model.ckpt").string());
    writeFile((dir / "history.json").string(), h.toJson().dump(2) + "\n");
    man.finishDir(dir);
  });

  // infer --------------------------------------------------------------------------------------
  struct {
    ModelChoice model;
    SearchOptions search;
    std::string concepts, out;
    int group_size = 0;
  } inf;
  auto* i = app.add_subcommand("infer", "infer a template and member programs for each concept");
  addCommon(i, common);
  addModelChoice(i, inf.model, "p_inf");
  addSearch(i, inf.search);
  i->add_option("--concepts", inf.concepts, "concepts JSONL")->required();
  i->add_option("--group-size", inf.group_size, "members fed to inference (0 = all)")->check(CLI::NonNegativeNumber);
  i->add_option("-o,--out", inf.out, "output directory")->required();
  i->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("infer", common);
    man.input(inf.concepts);
    const auto concepts = conceptsFromJsonl(*d, readFile(inf.concepts));
    const auto model = loadModel(*d, inf.model, man);
    const BeamConfig beams = beamsOf(inf.search);
    beams.validate();
    const ObjectiveWeights w = weightsOf(inf.search);
    man.config["search"] = searchJson(inf.search);
    man.config["group_size"] = inf.group_size;
    const fs::path dir = prepareDir(inf.out);
    const auto results = inferConcepts(*d, concepts, *model, beams, w, inf.group_size, common.seed, common.jobs);
    writeFile((dir / "results.jsonl").string(), resultsToJsonl(*d, results));
    int failed = 0;
    for (const auto& res : results) failed += !res.result;
    writeFile((dir / "summary.json").string(),
              json{{"concepts", results.size()}, {"failures", failed}, {"mean_objective", meanObjective(results, w, inf.group_size)}}.dump(2) + "\n");
    man.finishDir(dir);
    if (failed == static_cast<int>(results.size())) throw InferenceFailure("inference failed for every concept");
  });

  // generate -----------------------------------------------------------------------------------
  struct {
    ModelChoice model;
    SearchOptions search;
    std::string concepts, fewshot, out;
    int k = 5;
    double temperature = 1.0;
  } gen;
  auto* g = app.add_subcommand("generate", "few-shot generation: new members for each concept");
  addCommon(g, common);
  addModelChoice(g, gen.model, "p_inf");
  addSearch(g, gen.search);
  g->add_option("--concepts", gen.concepts, "concepts JSONL")->required();
  g->add_option("--fewshot-checkpoint", gen.fewshot, "few-shot model for sampling (default: grammar prior)");
  g->add_option("--k", gen.k, "samples per concept")->check(CLI::NonNegativeNumber)->capture_default_str();
  g->add_option("--temperature", gen.temperature, "sampling temperature")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("-o,--out", gen.out, "output directory")->required();
  g->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("generate", common);
    man.input(gen.concepts);
    const auto concepts = conceptsFromJsonl(*d, readFile(gen.concepts));
    const auto p_inf = loadModel(*d, gen.model, man);
    std::unique_ptr<ProposalModel> sampler;
    if (!gen.fewshot.empty()) {
      man.input(gen.fewshot);
      auto fsm = std::make_unique<TransformerModel>(TransformerModel::load(*d, gen.fewshot));
      fsm->setMode(VisualMode::FewShot);
      sampler = std::move(fsm);
    } else {
      sampler = std::make_unique<GrammarPrior>(GrammarPrior::fromSampler(*d, samplerConfig(*d, gen.model.sampler_config)));
    }
    man.config["search"] = searchJson(gen.search);
    man.config["k"] = gen.k;
    man.config["temperature"] = gen.temperature;
    man.config["sampler"] = gen.fewshot.empty() ? "grammar-prior" : "few-shot";
    const fs::path dir = prepareDir(gen.out);
    json summary = json::array();
    int failed = 0;
    for (std::size_t ci = 0; ci < concepts.size(); ++ci) {
      Rng rng = Rng(common.seed).split(ci);
      const fs::path cd = dir / concepts[ci].id;
      fs::create_directories(cd);
      try {
        const auto res = fewShotGenerate(*d, concepts[ci].members, *p_inf, *sampler, beamsOf(gen.search), weightsOf(gen.search), gen.k, rng,
                                         gen.temperature);
        std::string programs;
        int conforming = 0;
        for (std::size_t k = 0; k < res.samples.size(); ++k) {
          programs += toText(d->grammar(), res.samples[k].program) + "\n";
          conforming += conforms(d->grammar(), res.samples[k].program, res.inference.triplet.tp).has_value();
          writeFile((cd / imageName(*d, "sample_" + std::to_string(k))).string(), d->encodeImage(res.samples[k].canvas));
        }
        writeFile((cd / "template.txt").string(), toText(d->grammar(), res.inference.triplet.tp) + "\n");
        writeFile((cd / "programs.txt").string(), programs);
        summary.push_back({{"id", concepts[ci].id}, {"objective", res.inference.objective.toJson()}, {"samples", res.samples.size()},
                           {"conforming", conforming}});
      } catch (const InferenceFailure& err) {
        ++failed;
        summary.push_back({{"id", concepts[ci].id}, {"error", err.what()}});
      }
    }
    writeFile((dir / "summary.json").string(), summary.dump(2) + "\n");
    man.finishDir(dir);
    if (!concepts.empty() && failed == static_cast<int>(concepts.size())) throw InferenceFailure("inference failed for every concept");
  });

  // uncond -------------------------------------------------------------------------------------
  struct {
    ModelChoice model;
    std::string reference, out;
    int n = 10, per = 5;
    double temperature = 1.0;
  } unc;
  auto* u = app.add_subcommand("uncond", "unconditional concept generation with nearest-reference report");
  addCommon(u, common);
  addModelChoice(u, unc.model, "p_gen (run in generative mode)");
  u->add_option("--n", unc.n, "concepts")->check(CLI::NonNegativeNumber)->capture_default_str();
  u->add_option("--per-concept", unc.per, "instances per concept")->check(CLI::PositiveNumber)->capture_default_str();
  u->add_option("--reference", unc.reference, "reference concepts JSONL (nearest neighbours and MMD/Coverage)");
  u->add_option("--temperature", unc.temperature, "sampling temperature")->check(CLI::PositiveNumber)->capture_default_str();
  u->add_option("-o,--out", unc.out, "output directory")->required();
  u->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("uncond", common);
    const auto model = loadModel(*d, unc.model, man, VisualMode::Generative);
    std::vector<Canvas> reference;
    if (!unc.reference.empty()) {
      man.input(unc.reference);
      for (const auto& cpt : conceptsFromJsonl(*d, readFile(unc.reference))) reference.insert(reference.end(), cpt.members.begin(), cpt.members.end());
    }
    man.config["n"] = unc.n;
    man.config["per_concept"] = unc.per;
    man.config["temperature"] = unc.temperature;
    const fs::path dir = prepareDir(unc.out);
    Rng rng(common.seed);
    const auto samples = unconditionalGenerate(*d, *model, unc.n, unc.per, reference, rng, unc.temperature);
    json summary{{"concepts", json::array()}};
    std::vector<Canvas> all;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const fs::path cd = dir / ("u" + std::to_string(k));
      fs::create_directories(cd);
      std::string programs;
      json nearest = json::array();
      for (std::size_t m = 0; m < samples[k].programs.size(); ++m) {
        programs += toText(d->grammar(), samples[k].programs[m]) + "\n";
        writeFile((cd / imageName(*d, "member_" + std::to_string(m))).string(), d->encodeImage(samples[k].canvases[m]));
        all.push_back(samples[k].canvases[m]);
      }
      for (const auto& nb : samples[k].nearest) nearest.push_back({{"index", nb.index}, {"distance", nb.distance}});
      writeFile((cd / "template.txt").string(), toText(d->grammar(), samples[k].tp) + "\n");
      writeFile((cd / "programs.txt").string(), programs);
      summary["concepts"].push_back({{"id", "u" + std::to_string(k)}, {"nearest", nearest}});
    }
    if (!reference.empty() && !all.empty()) summary["metrics"] = generationMetrics(*d, all, reference).toJson();
    writeFile((dir / "summary.json").string(), summary.dump(2) + "\n");
    man.finishDir(dir);
  });

  // coseg --------------------------------------------------------------------------------------
  struct {
    ModelChoice model;
    SearchOptions search;
    std::string fixtures, out;
    bool given_programs = false;
  } cs;
  auto* co = app.add_subcommand("coseg", "co-segmentation by label propagation through inferred programs");
  addCommon(co, common);
  addModelChoice(co, cs.model, "p_inf");
  addSearch(co, cs.search);
  co->add_option("--fixtures", cs.fixtures, "co-segmentation JSONL (see `sample --kind coseg`)")->required();
  co->add_flag("--given-programs", cs.given_programs, "use the fixtures' generating programs instead of inference");
  co->add_option("-o,--out", cs.out, "output directory")->required();
  co->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("coseg", common);
    man.input(cs.fixtures);
    const auto fixtures = cosegFixturesFromJsonl(*d, readFile(cs.fixtures));
    std::unique_ptr<ProposalModel> model;
    if (!cs.given_programs) model = loadModel(*d, cs.model, man);
    man.config["search"] = searchJson(cs.search);
    man.config["given_programs"] = cs.given_programs;
    const fs::path dir = prepareDir(cs.out);
    json summary{{"groups", json::array()}};
    double sum = 0;
    int scored = 0, failed = 0;
    for (const auto& fx : fixtures) {
      const fs::path gd = dir / fx.group.id;
      fs::create_directories(gd);
      json rec{{"id", fx.group.id}};
      std::vector<SegmentedCanvas> segs;
      try {
        if (cs.given_programs) {
          if (!fx.generating) throw DataError("fixture '" + fx.group.id + "' has no generating programs");
          segs = cosegmentTriplet(*d, *fx.generating, fx.labeled, fx.reference);
        } else {
          auto res = cosegment(*d, fx.group.members, fx.labeled, fx.reference, *model, beamsOf(cs.search), weightsOf(cs.search));
          rec["template"] = toText(d->grammar(), res.inference.triplet.tp);
          segs = std::move(res.segments);
        }
      } catch (const InferenceFailure& err) {
        ++failed;
        rec["error"] = err.what();
        summary["groups"].push_back(rec);
        continue;
      }
      json miou = json::array();
      for (std::size_t m = 0; m < segs.size(); ++m) {
        writeFile((gd / ("labels_" + std::to_string(m) + ".ppm")).string(), renderLabels(segs[m]));
        writeFile((gd / ("labels_" + std::to_string(m) + ".json")).string(), json(segs[m].labels).dump() + "\n");
        if (!fx.truth.empty() && std::any_of(fx.truth[m].begin(), fx.truth[m].end(), [](int l) { return l >= 0; })) {
          const double v = mIoU(segs[m].labels, fx.truth[m]);
          miou.push_back(v);
          sum += v;
          ++scored;
        }
      }
      if (!miou.empty()) rec["miou"] = miou;
      summary["groups"].push_back(rec);
    }
    if (scored) summary["mean_miou"] = sum / scored;
    summary["failures"] = failed;
    writeFile((dir / "summary.json").string(), summary.dump(2) + "\n");
    man.finishDir(dir);
    if (!fixtures.empty() && failed == static_cast<int>(fixtures.size())) throw InferenceFailure("inference failed for every group");
  });

  // eval ---------------------------------------------------------------------------------------
  struct {
    std::string triplets, generated, reference, out;
    double lambda1 = 1.0, lambda2 = 0.001;
  } ev;
  auto* v = app.add_subcommand("eval", "objective of triplets, or MMD/Coverage of generated against reference canvases");
  addCommon(v, common);
  auto* vt = v->add_option("--triplets", ev.triplets, "triplets JSONL to score");
  auto* vg = v->add_option("--generated", ev.generated, "generated canvases (concept or triplet JSONL)");
  auto* vr = v->add_option("--reference", ev.reference, "reference canvases (concept or triplet JSONL)");
  vg->needs(vr);
  vr->needs(vg);
  vt->excludes(vg);
  v->add_option("--lambda1", ev.lambda1, "reconstruction weight")->capture_default_str();
  v->add_option("--lambda2", ev.lambda2, "description-length weight")->capture_default_str();
  v->add_option("-o,--out", ev.out, "output JSON file (default stdout)");
  v->callback([&] {
    const DomainPtr d = domainOf(common);
    Manifest man("eval", common);
    json out;
    if (!ev.triplets.empty()) {
      man.input(ev.triplets);
      ObjectiveWeights w;
      w.lambda1 = ev.lambda1;
      w.lambda2 = ev.lambda2;
      man.config = w.toJson();
      json per = json::array();
      double sum = 0;
      const auto ts = tripletsFromJsonl(*d, readFile(ev.triplets));
      for (const auto& t : ts) {
        const auto terms = objectiveTerms(*d, t, w);
        per.push_back(terms.toJson());
        sum += terms.value();
      }
      out = {{"triplets", per}, {"mean_objective", ts.empty() ? 0.0 : sum / static_cast<double>(ts.size())}};
    } else if (!ev.generated.empty()) {
      man.input(ev.generated);
      man.input(ev.reference);
      const auto flatten = [&](const std::string& path) {
        std::vector<Canvas> xs;
        for (const auto& cpt : conceptsFromJsonl(*d, readFile(path))) xs.insert(xs.end(), cpt.members.begin(), cpt.members.end());
        return xs;
      };
      out = generationMetrics(*d, flatten(ev.generated), flatten(ev.reference)).toJson();
    } else {
      throw UsageError("eval needs --triplets or --generated with --reference");
    }
    emit(out.dump(2) + "\n", ev.out);
    if (!ev.out.empty()) man.finishFile(ev.out);
  });

  // selftest -----------------------------------------------------------------------------------
  int st_n = 200;
  auto* t = app.add_subcommand("selftest", "round-trip, collapse, teacher-forcing and executor checks over sampled triplets");
  addCommon(t, common);
  t->add_option("--n", st_n, "triplets per domain")->check(CLI::PositiveNumber)->capture_default_str();
  t->callback([&] {
    json report;
    const int failures = selfTest(st_n, common.seed, report);
    std::cout << report.dump(2) << '\n';
    if (failures) {
      note("selftest: " + std::to_string(failures) + " failures");
      status = 5;
    }
  });

  const auto fail = [](const char* kind, const std::string& msg, int code) {
    std::cerr << json{{"error", kind}, {"message", msg}}.dump() << '\n';
    return code;
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    return fail("usage", err.what(), 2);
  } catch (const UsageError& err) {
    return fail("usage", err.what(), 2);
  } catch (const InferenceFailure& err) {
    return fail("inference", err.what(), 4);
  } catch (const DecodeError& err) {
    return fail("inference", err.what(), 4);
  } catch (const Error& err) {
    return fail("data", err.what(), 3);
  } catch (const std::exception& err) {
    return fail("internal", err.what(), 5);
  }
  return status;
}
