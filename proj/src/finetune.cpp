#include "tplprog/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "tplprog/errors.hpp"

namespace tplprog {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double nanIfNull(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::vector<double> blankFeatures() { return std::vector<double>(static_cast<std::size_t>(kVisualTokens * kPatchFeatures), 0.0); }

}  // namespace

// ---- Config ------------------------------------------------------------------------------

json FinetuneConfig::toJson() const {
  return {{"outer_rounds", outer_rounds},
          {"max_epochs", max_epochs},
          {"validate_every", validate_every},
          {"patience", patience},
          {"ws_samples", ws_samples},
          {"ws_retries", ws_retries},
          {"batch_size", batch_size},
          {"steps_per_epoch", steps_per_epoch},
          {"gen_epochs", gen_epochs},
          {"group_size", group_size},
          {"bm_tp", beams.bm_tp},
          {"bm_z", beams.bm_z},
          {"objective", weights.toJson()},
          {"mix", mix},
          {"bootstrap_with_prior", bootstrap_with_prior},
          {"lr", lr},
          {"seed", seed},
          {"jobs", jobs}};
}

FinetuneConfig FinetuneConfig::fromJson(const json& j) {
  FinetuneConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "outer_rounds") c.outer_rounds = v.get<int>();
      else if (k == "max_epochs") c.max_epochs = v.get<int>();
      else if (k == "validate_every") c.validate_every = v.get<int>();
      else if (k == "patience") c.patience = v.get<int>();
      else if (k == "ws_samples") c.ws_samples = v.get<int>();
      else if (k == "ws_retries") c.ws_retries = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "steps_per_epoch") c.steps_per_epoch = v.get<int>();
      else if (k == "gen_epochs") c.gen_epochs = v.get<int>();
      else if (k == "group_size") c.group_size = v.get<int>();
      else if (k == "bm_tp") c.beams.bm_tp = v.get<int>();
      else if (k == "bm_z") c.beams.bm_z = v.get<int>();
      else if (k == "objective") c.weights = ObjectiveWeights::fromJson(v);
      else if (k == "mix") c.mix = v.get<std::map<std::string, double>>();
      else if (k == "bootstrap_with_prior") c.bootstrap_with_prior = v.get<bool>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "jobs") c.jobs = v.get<int>();
      else throw DataError("unknown finetune config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad finetune config: ") + e.what());
  }
  c.validate();
  return c;
}

void FinetuneConfig::validate() const {
  if (outer_rounds < 0 || max_epochs < 1 || validate_every < 1 || patience < 1) throw DataError("finetune schedule values out of range");
  if (patience > max_epochs) throw DataError("patience cannot exceed max_epochs");
  if (ws_samples < 0 || ws_retries < 0 || batch_size < 1 || steps_per_epoch < 0 || gen_epochs < 0 || group_size < 1)
    throw DataError("finetune sizes out of range");
  for (const auto& [k, v] : mix) {
    if (k != "st" && k != "lest" && k != "ws") throw DataError("unknown dataset '" + k + "' in mix");
    if (v < 0) throw DataError("mix weights must be nonnegative");
  }
  if (!(lr > 0)) throw DataError("learning rate must be positive");
  beams.validate();
}

// ---- Pretraining ---------------------------------------------------------------------------

json PretrainConfig::toJson() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"lr", lr}, {"seed", seed}, {"log_every", log_every}};
}

PretrainConfig PretrainConfig::fromJson(const json& j) {
  PretrainConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "steps") c.steps = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "log_every") c.log_every = v.get<int>();
      else throw DataError("unknown pretrain config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad pretrain config: ") + e.what());
  }
  c.validate();
  return c;
}

void PretrainConfig::validate() const {
  if (steps < 0 || batch_size < 1 || log_every < 0) throw DataError("pretrain sizes out of range");
  if (!(lr > 0)) throw DataError("learning rate must be positive");
}

std::vector<double> pretrain(TransformerModel& m, const SamplerConfig& sampler, const PretrainConfig& cfg,
                             const std::function<void(const std::string&)>& log) {
  cfg.validate();
  const Domain& d = m.domain();
  m.setLearningRate(cfg.lr);
  Rng rng(cfg.seed);
  std::vector<TrainingExample> pending;
  std::vector<double> losses;
  double window = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    while (static_cast<int>(pending.size()) < cfg.batch_size) {
      const auto ex = formatTargets(d, sampleTriplet(d, sampler, rng), rng);
      pending.insert(pending.end(), ex.begin(), ex.end());
    }
    const std::vector<TrainingExample> batch(pending.begin(), pending.begin() + cfg.batch_size);
    pending.erase(pending.begin(), pending.begin() + cfg.batch_size);
    const double loss = m.trainStep(batch);
    if (!std::isfinite(loss)) throw Error("pretraining diverged at step " + std::to_string(step));
    losses.push_back(loss);
    window += loss;
    if (log && cfg.log_every > 0 && step % cfg.log_every == 0) {
      log("step " + std::to_string(step) + ": loss " + std::to_string(window / cfg.log_every));
      window = 0;
    }
  }
  return losses;
}

// ---- Builders ------------------------------------------------------------------------------

std::vector<TrainingExample> buildSelfTrainData(const Domain& d, const std::vector<GroupTriplet>& ts, const std::vector<std::string>& ids,
                                                Rng& rng, const std::string& tag) {
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto ex = formatTargets(d, ts[i], rng, tag + ":" + (i < ids.size() ? ids[i] : std::to_string(i)));
    out.insert(out.end(), ex.begin(), ex.end());
  }
  return out;
}

std::vector<TrainingExample> buildLestData(const Domain& d, const std::vector<GroupTriplet>& ts, const std::vector<std::string>& ids,
                                           Rng& rng, const std::string& tag, int* dropped) {
  std::vector<GroupTriplet> executed;
  std::vector<std::string> kept_ids;
  int lost = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    GroupTriplet t{ts[i].tp, {}, {}};
    for (const auto& z : ts[i].programs) {
      try {
        t.visuals.push_back(d.execute(z));
        t.programs.push_back(z);
      } catch (const ExecError&) {
        ++lost;
      }
    }
    if (t.programs.empty()) continue;
    executed.push_back(std::move(t));
    kept_ids.push_back(i < ids.size() ? ids[i] : std::to_string(i));
  }
  if (dropped) *dropped = lost;
  return buildSelfTrainData(d, executed, kept_ids, rng, tag);
}

std::string groupDigest(const Domain& d, const std::vector<Canvas>& xs) {
  std::vector<std::string> parts;
  for (const auto& c : xs) {
    const auto bytes = d.dump(c);
    parts.push_back(hex64(fnv1a(std::span<const std::uint8_t>(bytes.data(), bytes.size()))));
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (const auto& p : parts) out += p + ",";
  return out;
}

json DreamStats::toJson() const {
  return {{"requested", requested}, {"attempts", attempts},           {"rejected", rejected},
          {"accepted_duplicates", accepted_duplicates}, {"failures", failures}, {"rejection_rate", rejectionRate()}};
}

std::vector<Dream> sampleDreams(const Domain& d, const ProposalModel& p_gen, int count, int group_size, DreamHistory& history,
                                Rng& rng, int retries, DreamStats& stats) {
  const Grammar& g = d.grammar();
  std::vector<Dream> out;
  stats.requested += count;
  const std::vector<std::vector<double>> blank_group(static_cast<std::size_t>(group_size), blankFeatures());
  // Failures get a larger budget than duplicates: a dead end is cheap to retry.
  const int failure_budget = 4 * (retries + 1) * group_size;
  for (int i = 0; i < count; ++i) {
    int dup_tries = 0, fail_tries = 0;
    for (;;) {
      ++stats.attempts;
      GroupTriplet t;
      try {
        t.tp = sampleTemplate(d, p_gen, blank_group, rng);
        for (int m = 0; m < group_size; ++m) {
          Program z = sampleFromTemplate(d, p_gen, t.tp, {blankFeatures()}, rng);
          t.visuals.push_back(d.execute(z));
          t.programs.push_back(std::move(z));
        }
      } catch (const Error& e) {
        if (!dynamic_cast<const DecodeError*>(&e) && !dynamic_cast<const ExecError*>(&e) && !dynamic_cast<const CapError*>(&e)) throw;
        ++stats.failures;
        if (++fail_tries > failure_budget)
          throw DecodeError("dream " + std::to_string(i) + " failed " + std::to_string(fail_tries) + " times; last error: " + e.what());
        continue;
      }
      const TokenSeq key = linearize(g, t.tp);
      const std::string digest = groupDigest(d, t.visuals);
      const bool dup = history.templates.count(key) || history.groups.count(digest);
      if (dup && dup_tries < retries) {
        ++stats.rejected;
        ++dup_tries;
        continue;
      }
      if (dup) ++stats.accepted_duplicates;
      history.templates.insert(key);
      history.groups.insert(digest);
      out.push_back({std::move(t), dup});
      break;
    }
  }
  return out;
}

std::vector<TrainingExample> buildWakeSleepData(const Domain& d, const std::vector<Dream>& dreams, Rng& rng, const std::string& tag) {
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < dreams.size(); ++i) {
    const auto ex = formatTargets(d, dreams[i].triplet, rng, tag + ":d" + std::to_string(i));
    out.insert(out.end(), ex.begin(), ex.end());
  }
  return out;
}

// ---- History ----------------------------------------------------------------------------------

json RoundSummary::toJson() const {
  return {{"round", round},   {"inferred", inferred},        {"inference_failures", inference_failures},
          {"st", st},         {"lest", lest},                {"ws", ws},
          {"lest_dropped", lest_dropped}, {"dreams", dreams.toJson()}, {"best_objective", best_objective},
          {"aborted", aborted}};
}

std::string FinetuneHistory::csv() const {
  std::ostringstream out;
  out << "round,epoch,mean_objective,loss\n";
  out.precision(10);
  for (const auto& r : rows) out << r.round << ',' << r.epoch << ',' << r.mean_objective << ',' << r.loss << '\n';
  return out.str();
}

json FinetuneHistory::toJson() const {
  json rs = json::array();
  for (const auto& r : rows) rs.push_back({{"round", r.round}, {"epoch", r.epoch}, {"mean_objective", r.mean_objective}, {"loss", r.loss}});
  json summaries = json::array();
  for (const auto& r : rounds) summaries.push_back(r.toJson());
  return {{"initial_objective", initial_objective}, {"best_objective", best_objective}, {"rows", rs}, {"rounds", summaries}};
}

FinetuneHistory FinetuneHistory::fromJson(const json& j) {
  FinetuneHistory h;
  h.initial_objective = j.at("initial_objective").get<double>();
  h.best_objective = j.at("best_objective").get<double>();
  for (const auto& r : j.at("rows"))
    h.rows.push_back({r.at("round").get<int>(), r.at("epoch").get<int>(), r.at("mean_objective").get<double>(), nanIfNull(r.at("loss"))});
  for (const auto& r : j.at("rounds")) {
    RoundSummary s;
    s.round = r.at("round").get<int>();
    s.inferred = r.at("inferred").get<int>();
    s.inference_failures = r.at("inference_failures").get<int>();
    s.st = r.at("st").get<std::size_t>();
    s.lest = r.at("lest").get<std::size_t>();
    s.ws = r.at("ws").get<std::size_t>();
    s.lest_dropped = r.at("lest_dropped").get<int>();
    const auto& dj = r.at("dreams");
    s.dreams.requested = dj.at("requested").get<int>();
    s.dreams.attempts = dj.at("attempts").get<int>();
    s.dreams.rejected = dj.at("rejected").get<int>();
    s.dreams.accepted_duplicates = dj.at("accepted_duplicates").get<int>();
    s.dreams.failures = dj.at("failures").get<int>();
    s.best_objective = r.at("best_objective").get<double>();
    s.aborted = r.at("aborted").get<bool>();
    h.rounds.push_back(s);
  }
  return h;
}

// ---- Orchestration --------------------------------------------------------------------------------

double validationObjective(const Domain& d, const ProposalModel& m, const std::vector<Concept>& validation, const FinetuneConfig& cfg) {
  if (validation.empty()) throw DataError("empty validation set");
  return meanObjective(inferConcepts(d, validation, m, cfg.beams, cfg.weights, cfg.group_size, cfg.seed, cfg.jobs), cfg.weights,
                       cfg.group_size);
}

namespace {

// Epochs of shuffled minibatches over one dataset (used for p_gen).
void trainPasses(TransformerModel& m, const std::vector<TrainingExample>& data, int epochs, int batch, Rng& rng) {
  if (data.empty()) return;
  std::vector<std::size_t> order(data.size());
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch)) {
      std::vector<TrainingExample> b;
      for (std::size_t k = s; k < std::min(order.size(), s + static_cast<std::size_t>(batch)); ++k) b.push_back(data[order[k]]);
      const double loss = m.trainStep(b);
      if (!std::isfinite(loss)) return;
    }
  }
}

int lastCompletedRound(const std::string& dir) {
  int best = 0;
  if (dir.empty() || !fs::exists(dir)) return 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("round_", 0) != 0 || !fs::exists(e.path() / "state.json")) continue;
    try {
      best = std::max(best, std::stoi(name.substr(6)));
    } catch (const std::exception&) {
    }
  }
  return best;
}

}  // namespace

FinetuneHistory finetune(TransformerModel& p_inf, const std::vector<Concept>& train, const std::vector<Concept>& validation,
                         const FinetuneConfig& cfg, const FinetuneOptions& opts) {
  cfg.validate();
  const Domain& d = p_inf.domain();
  const auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  if (train.empty()) throw DataError("empty training concept set");

  FinetuneHistory hist;
  int start_round = 1;
  const int done = opts.resume ? lastCompletedRound(opts.run_dir) : 0;
  if (done > 0) {
    const fs::path rd = fs::path(opts.run_dir) / ("round_" + std::to_string(done));
    p_inf = TransformerModel::load(d, (rd / "model.ckpt").string());
    hist = FinetuneHistory::fromJson(json::parse(readFile((rd / "state.json").string())).at("history"));
    start_round = done + 1;
    log("resuming after round " + std::to_string(done));
  } else {
    hist.initial_objective = validationObjective(d, p_inf, validation, cfg);
    hist.best_objective = hist.initial_objective;
    hist.rows.push_back({0, 0, hist.initial_objective, std::numeric_limits<double>::quiet_NaN()});
    log("initial validation objective " + std::to_string(hist.initial_objective));
  }
  if (cfg.outer_rounds < start_round) return hist;

  p_inf.setLearningRate(cfg.lr);
  TransformerModel best = p_inf;
  const GrammarPrior prior = GrammarPrior::fromSampler(d, defaultSamplerConfig(d));

  for (int r = start_round; r <= cfg.outer_rounds; ++r) {
    Rng rng(fnv1a("round:" + std::to_string(r), cfg.seed));
    RoundSummary rs;
    rs.round = r;
    const std::string rtag = ":r" + std::to_string(r);

    const ProposalModel& searcher = cfg.bootstrap_with_prior && r == 1 ? static_cast<const ProposalModel&>(prior) : p_inf;
    const auto results = inferConcepts(d, train, searcher, cfg.beams, cfg.weights, cfg.group_size, rng.next(), cfg.jobs);
    std::vector<GroupTriplet> ts;
    std::vector<std::string> ids;
    for (const auto& res : results) {
      if (!res.result) {
        ++rs.inference_failures;
        continue;
      }
      ts.push_back(res.result->triplet);
      ids.push_back(res.id);
    }
    rs.inferred = static_cast<int>(ts.size());

    const auto st = buildSelfTrainData(d, ts, ids, rng, "st" + rtag);
    const auto lest = buildLestData(d, ts, ids, rng, "lest" + rtag, &rs.lest_dropped);

    std::vector<Dream> dreams;
    if (cfg.ws_samples > 0 && !st.empty()) {
      TransformerModel gen = p_inf.generativeCopy();
      gen.setLearningRate(cfg.lr);
      trainPasses(gen, st, cfg.gen_epochs, cfg.batch_size, rng);
      DreamHistory dh;
      dreams = sampleDreams(d, gen, cfg.ws_samples, cfg.group_size, dh, rng, cfg.ws_retries, rs.dreams);
    }
    const auto ws = buildWakeSleepData(d, dreams, rng, "ws" + rtag);
    rs.st = st.size();
    rs.lest = lest.size();
    rs.ws = ws.size();
    log("round " + std::to_string(r) + ": inferred " + std::to_string(rs.inferred) + "/" + std::to_string(train.size()) +
        ", examples st=" + std::to_string(st.size()) + " lest=" + std::to_string(lest.size()) + " ws=" + std::to_string(ws.size()) +
        ", dream rejection rate " + std::to_string(rs.dreams.rejectionRate()));

    const std::vector<std::pair<std::string, const std::vector<TrainingExample>*>> pools{{"st", &st}, {"lest", &lest}, {"ws", &ws}};
    std::vector<double> weights;
    std::size_t pooled = 0;
    for (const auto& [name, data] : pools) {
      const auto it = cfg.mix.find(name);
      weights.push_back(data->empty() || it == cfg.mix.end() ? 0.0 : it->second);
      pooled += data->size();
    }
    const bool any = std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0; });
    const int steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                                              : std::max(1, static_cast<int>((pooled + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                                                             static_cast<std::size_t>(cfg.batch_size)));
    int since_best = 0;
    double loss_sum = 0;
    int loss_n = 0;
    for (int epoch = 1; any && epoch <= cfg.max_epochs; ++epoch) {
      for (int s = 0; s < steps && !rs.aborted; ++s) {
        const auto& data = *pools[static_cast<std::size_t>(rng.categorical(weights))].second;
        std::vector<TrainingExample> batch;
        for (int k = 0; k < cfg.batch_size; ++k) batch.push_back(data[static_cast<std::size_t>(rng.uniformInt(static_cast<int>(data.size())))]);
        const double loss = p_inf.trainStep(batch);
        if (!std::isfinite(loss)) {
          rs.aborted = true;
          log("round " + std::to_string(r) + ": non-finite loss, aborting the round");
        }
        loss_sum += loss;
        ++loss_n;
      }
      if (rs.aborted) break;
      if (opts.after_epoch) opts.after_epoch(p_inf, r, epoch);
      ++since_best;
      if (epoch % cfg.validate_every == 0 || epoch == cfg.max_epochs) {
        const double o = validationObjective(d, p_inf, validation, cfg);
        hist.rows.push_back({r, epoch, o, loss_n ? loss_sum / loss_n : std::numeric_limits<double>::quiet_NaN()});
        loss_sum = 0;
        loss_n = 0;
        log("round " + std::to_string(r) + " epoch " + std::to_string(epoch) + ": validation objective " + std::to_string(o));
        if (o < hist.best_objective) {
          hist.best_objective = o;
          best = p_inf;
          since_best = 0;
        }
      }
      if (since_best >= cfg.patience) break;
    }
    // Always continue from the best snapshot seen so far.
    p_inf = best;
    p_inf.setLearningRate(cfg.lr);
    rs.best_objective = hist.best_objective;
    hist.rounds.push_back(rs);

    if (!opts.run_dir.empty()) {
      const fs::path rd = fs::path(opts.run_dir) / ("round_" + std::to_string(r));
      fs::create_directories(rd);
      writeFile((rd / "inferred.jsonl").string(), resultsToJsonl(d, results));
      std::vector<GroupTriplet> dts;
      for (const auto& dr : dreams) dts.push_back(dr.triplet);
      writeFile((rd / "dreams.jsonl").string(), tripletsToJsonl(d, dts));
      p_inf.save((rd / "model.ckpt").string());
      writeFile((rd / "state.json").string(), json{{"round", r}, {"history", hist.toJson()}}.dump(2) + "\n");
      writeFile((fs::path(opts.run_dir) / "history.csv").string(), hist.csv());
    }
  }
  return hist;
}

}  // namespace tplprog
