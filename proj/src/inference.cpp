#include "tplprog/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "tplprog/errors.hpp"

namespace tplprog {

using nlohmann::json;

namespace {

const Expr& rootOf(const AnyTree& t) {
  return std::visit([](const auto& x) -> const Expr& { return x.root(); }, t);
}

struct MemberBest {
  Program z;
  TokenSeq tokens;
  double score = std::numeric_limits<double>::infinity();
  bool found = false;
};

}  // namespace

// ---- Objective -----------------------------------------------------------------------

json ObjectiveWeights::toJson() const { return {{"lambda1", lambda1}, {"lambda2", lambda2}, {"tp_per_member", tp_per_member}}; }

ObjectiveWeights ObjectiveWeights::fromJson(const json& j) {
  ObjectiveWeights w;
  for (const auto& [k, v] : j.items()) {
    if (k == "lambda1") w.lambda1 = v.get<double>();
    else if (k == "lambda2") w.lambda2 = v.get<double>();
    else if (k == "tp_per_member") w.tp_per_member = v.get<bool>();
    else throw DataError("unknown objective key '" + k + "'");
  }
  if (w.lambda1 < 0 || w.lambda2 < 0) throw DataError("objective weights must be nonnegative");
  return w;
}

double ObjectiveTerms::value() const {
  if (failed) return std::numeric_limits<double>::infinity();
  return reconstructionTerm() + dlTerm();
}

json ObjectiveTerms::toJson() const {
  json j{{"reconstruction", reconstruction}, {"dl", dl}, {"lambda1", lambda1}, {"lambda2", lambda2}, {"failed", failed}};
  if (failed) j["error"] = error;
  else j["value"] = value();
  return j;
}

ObjectiveTerms objectiveTerms(const Domain& d, const GroupTriplet& t, const ObjectiveWeights& w) {
  ObjectiveTerms o;
  o.lambda1 = w.lambda1;
  o.lambda2 = w.lambda2;
  if (t.programs.size() != t.visuals.size()) throw TypeError("triplet has mismatched programs and visuals");
  const int tp_dl = descriptionLength(d.grammar(), t.tp);
  for (std::size_t m = 0; m < t.programs.size(); ++m) {
    try {
      o.reconstruction += d.distance(t.visuals[m], d.execute(t.programs[m]));
    } catch (const ExecError& e) {
      o.failed = true;
      o.error = "member " + std::to_string(m) + ": " + e.what();
    }
    o.dl += descriptionLength(d.grammar(), t.programs[m]) - (w.tp_per_member ? tp_dl : 0);
  }
  if (!w.tp_per_member) o.dl -= tp_dl;
  return o;
}

double objective(const Domain& d, const GroupTriplet& t, const ObjectiveWeights& w) { return objectiveTerms(d, t, w).value(); }

void BeamConfig::validate() const {
  if (bm_tp < 1 || bm_z < 1) throw DataError("beam widths must be at least 1");
}

json GroupDiagnostics::toJson() const {
  json objs = json::array();
  for (const auto& o : tp_objectives) objs.push_back(o ? json(*o) : json(nullptr));
  return {{"tp_candidates", tp_candidates}, {"tp_valid", tp_valid},       {"se_candidates", se_candidates},
          {"z_candidates", z_candidates},   {"exec_failures", exec_failures}, {"tp_objectives", objs}};
}

// ---- Search ----------------------------------------------------------------------------

Template sampleTemplate(const Domain& d, const ProposalModel& m, const std::vector<std::vector<double>>& visuals, Rng& rng,
                        double temperature) {
  const Grammar& g = d.grammar();
  const Decoded t = decodeOne(m, {Role::Template, visuals, {}}, Cursor::forTemplate(g), &rng, temperature);
  return Template(g, rootOf(parse(g, t.tokens)));
}

Program sampleFromTemplate(const Domain& d, const ProposalModel& m, const Template& tp, const std::vector<std::vector<double>>& visuals,
                           Rng& rng, double temperature) {
  const Grammar& g = d.grammar();
  const Decoded x = decodeOne(m, {Role::Expansion, visuals, linearize(g, tp)}, Cursor::forExpansion(g, tp), &rng, temperature);
  const Expansion se = expand(g, tp, fillsFromTarget(g, tp, x.tokens));
  const Decoded p = decodeOne(m, {Role::Param, visuals, linearize(g, se)}, Cursor::forParams(g, se), &rng, temperature);
  return instantiate(g, se, bindingsFromTarget(g, se, p.tokens));
}

InferenceResult inferGroup(const Domain& d, const std::vector<Canvas>& group, const ProposalModel& model, const BeamConfig& beams,
                           const ObjectiveWeights& w) {
  beams.validate();
  if (group.empty()) throw DataError("cannot infer a template for an empty group");
  const Grammar& g = d.grammar();
  std::vector<std::vector<double>> feats;
  for (const auto& c : group) feats.push_back(d.features(c));

  GroupDiagnostics diag;
  Conditioning tc{Role::Template, feats, {}};
  const auto tps = beamSearch(model, tc, Cursor::forTemplate(g), beams.bm_tp);
  diag.tp_candidates = static_cast<int>(tps.size());

  std::optional<InferenceResult> best;
  TokenSeq best_tokens;
  for (const auto& cand : tps) {
    const Template tp(g, rootOf(parse(g, cand.tokens)));
    const int tp_dl = descriptionLength(g, tp);
    const TokenSeq tp_tokens = linearize(g, tp);
    GroupTriplet trip{tp, {}, group};
    bool ok = true;
    for (std::size_t m = 0; m < group.size() && ok; ++m) {
      MemberBest mb;
      Conditioning xc{Role::Expansion, {feats[m]}, tp_tokens};
      for (const auto& xs : beamSearch(model, xc, Cursor::forExpansion(g, tp), beams.bm_z)) {
        ++diag.se_candidates;
        const Expansion se = expand(g, tp, fillsFromTarget(g, tp, xs.tokens));
        Conditioning pc{Role::Param, {feats[m]}, linearize(g, se)};
        for (const auto& ps : beamSearch(model, pc, Cursor::forParams(g, se), beams.bm_z)) {
          ++diag.z_candidates;
          Program z = instantiate(g, se, bindingsFromTarget(g, se, ps.tokens));
          double score;
          try {
            score = w.lambda1 * d.distance(group[m], d.execute(z)) + w.lambda2 * (descriptionLength(g, z) - tp_dl);
          } catch (const ExecError&) {
            ++diag.exec_failures;
            continue;
          }
          TokenSeq zt = linearize(g, z);
          if (!mb.found || score < mb.score || (score == mb.score && zt < mb.tokens)) {
            mb.found = true;
            mb.score = score;
            mb.z = std::move(z);
            mb.tokens = std::move(zt);
          }
        }
      }
      if (!mb.found) ok = false;
      else trip.programs.push_back(std::move(mb.z));
    }
    if (!ok) {
      diag.tp_objectives.push_back(std::nullopt);
      continue;
    }
    ObjectiveTerms o = objectiveTerms(d, trip, w);
    diag.tp_objectives.push_back(o.value());
    ++diag.tp_valid;
    const double v = o.value();
    if (!best || v < best->objective.value() || (v == best->objective.value() && tp_tokens < best_tokens)) {
      best = InferenceResult{std::move(trip), std::move(o), {}};
      best_tokens = tp_tokens;
    }
  }
  if (!best) {
    std::ostringstream msg;
    msg << "no executable triplet among " << diag.tp_candidates << " template candidates (" << diag.exec_failures
        << " execution failures)";
    throw InferenceFailure(msg.str());
  }
  best->diagnostics = std::move(diag);
  return std::move(*best);
}

std::vector<ConceptResult> inferConcepts(const Domain& d, const std::vector<Concept>& dataset, const ProposalModel& model,
                                         const BeamConfig& beams, const ObjectiveWeights& w, int group_size, std::uint64_t seed,
                                         int jobs) {
  if (dataset.empty()) throw DataError("empty concept dataset");
  beams.validate();
  Rng root(seed);
  std::vector<ConceptResult> out(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng r = root.split(i);
    const auto& c = dataset[i];
    if (c.members.empty()) throw DataError("concept '" + c.id + "' has no members");
    std::vector<int> idx(c.members.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<int>(k);
    if (group_size > 0 && static_cast<int>(idx.size()) > group_size) {
      r.shuffle(idx);
      idx.resize(static_cast<std::size_t>(group_size));
      std::sort(idx.begin(), idx.end());
    }
    out[i].id = c.id;
    out[i].chosen = std::move(idx);
  }
  const auto work = [&](std::size_t i) {
    std::vector<Canvas> group;
    for (int k : out[i].chosen) group.push_back(dataset[i].members[static_cast<std::size_t>(k)]);
    try {
      out[i].result = inferGroup(d, group, model, beams, w);
    } catch (const InferenceFailure& e) {
      out[i].error = e.what();
    }
  };
  const std::size_t n = dataset.size();
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(workers);
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += workers) work(i);
        } catch (...) {
          errs[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

double meanObjective(const std::vector<ConceptResult>& results, const ObjectiveWeights& w, int group_size) {
  if (results.empty()) return 0.0;
  double total = 0;
  for (const auto& r : results) {
    if (r.result) total += r.result->objective.value();
    else total += w.lambda1 * static_cast<double>(group_size > 0 ? group_size : static_cast<int>(r.chosen.size()));
  }
  return total / static_cast<double>(results.size());
}

std::vector<GroupTriplet> inferredTriplets(const std::vector<ConceptResult>& results) {
  std::vector<GroupTriplet> out;
  for (const auto& r : results)
    if (r.result) out.push_back(r.result->triplet);
  return out;
}

std::string resultsToJsonl(const Domain& d, const std::vector<ConceptResult>& results) {
  std::string out;
  for (const auto& r : results) {
    json j{{"id", r.id}, {"members", r.chosen}};
    if (r.result) {
      j["objective"] = r.result->objective.toJson();
      j["diagnostics"] = r.result->diagnostics.toJson();
      j["triplet"] = tripletToJson(d, r.result->triplet);
    } else {
      j["error"] = r.error;
    }
    out += j.dump() + "\n";
  }
  return out;
}

std::string conceptsToJsonl(const Domain& d, const std::vector<Concept>& cs) {
  std::string out;
  for (const auto& c : cs) {
    json j{{"domain", d.id()}, {"id", c.id}, {"members", json::array()}};
    for (const auto& m : c.members) j["members"].push_back(base64Encode(d.dump(m)));
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Concept> conceptsFromJsonl(const Domain& d, const std::string& text) {
  std::vector<Concept> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("domain") && j["domain"].get<std::string>() != d.id())
        throw DataError("record belongs to domain '" + j["domain"].get<std::string>() + "', expected '" + d.id() + "'");
      Concept c;
      c.id = j.contains("id") ? j["id"].get<std::string>() : "c" + std::to_string(out.size());
      // Triplet records (from `sample`) are accepted too; only their canvases are used.
      const json& members = j.contains("members") ? j.at("members") : j.at("canvases");
      for (const auto& m : members) c.members.push_back(d.undump(base64Decode(m.get<std::string>())));
      if (c.members.empty()) throw DataError("concept '" + c.id + "' has no members");
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Concept> conceptsFromTriplets(const std::vector<GroupTriplet>& ts) {
  std::vector<Concept> out;
  for (std::size_t i = 0; i < ts.size(); ++i) out.push_back({"c" + std::to_string(i), ts[i].visuals});
  return out;
}

}  // namespace tplprog
