#include "goodlab/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "goodlab/errors.hpp"

namespace goodlab {

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::Erm: return "erm";
    case ObjectiveKind::Irm: return "irm";
    case ObjectiveKind::Vrex: return "vrex";
    case ObjectiveKind::Cia: return "cia";
    case ObjectiveKind::CiaLra: return "cia_lra";
  }
  return "?";
}

ObjectiveKind parse_objective(const std::string& s) {
  if (s == "erm") return ObjectiveKind::Erm;
  if (s == "irm" || s == "irmv1") return ObjectiveKind::Irm;
  if (s == "vrex") return ObjectiveKind::Vrex;
  if (s == "cia") return ObjectiveKind::Cia;
  if (s == "cia_lra" || s == "cia-lra") return ObjectiveKind::CiaLra;
  throw ConfigError("unknown objective '" + s + "' (expected erm|irm|vrex|cia|cia_lra)");
}

void ObjectiveConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("objective: lambda must be >= 0");
  if (hops < 1) throw ConfigError("objective: hops must be >= 1");
  if (pair_budget < 1) throw ConfigError("objective: pair budget must be >= 1");
  if (!(r_same_floor > 0.0)) throw ConfigError("objective: r_same floor must be > 0");
}

EnvPartition make_env_partition(const Graph& g) {
  EnvPartition part;
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (g.split[i] == Split::Train && g.envs[i] >= 0) part[g.envs[i]].push_back(i);
  return part;
}

std::size_t PairSet::size() const {
  std::size_t n = 0;
  for (const auto& c : per_class) n += c.size();
  return n;
}

PairSet build_cia_pairs(const Graph& g, const EnvPartition& part, std::size_t budget, Rng& rng) {
  PairSet out;
  out.mode = PairSet::Mode::CrossEnv;
  out.per_class.resize(g.num_classes);
  if (part.size() < 2) {
    out.warnings.push_back("cross-environment alignment needs >= 2 training environments; no pairs built");
    return out;
  }
  // by_env_class[e][c] = nodes
  std::vector<std::vector<std::vector<std::size_t>>> by;
  for (const auto& [env, nodes] : part) {
    by.emplace_back(g.num_classes);
    for (std::size_t i : nodes) by.back()[static_cast<std::size_t>(g.labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < g.num_classes; ++c) {
    std::size_t envs_with_c = 0;
    for (std::size_t a = 0; a < by.size(); ++a) envs_with_c += by[a][c].empty() ? 0 : 1;
    if (envs_with_c < 2) {
      if (envs_with_c == 1) {
        out.warnings.push_back("class " + std::to_string(c) + " appears in a single training environment");
      }
      continue;
    }
    for (std::size_t a = 0; a < by.size(); ++a) {
      for (std::size_t b = a + 1; b < by.size(); ++b) {
        const auto& na = by[a][c];
        const auto& nb = by[b][c];
        const std::size_t total = na.size() * nb.size();
        if (total == 0) continue;
        for (std::size_t idx : rng.sample_without_replacement(total, budget)) {
          out.per_class[c].push_back({na[idx / nb.size()], nb[idx % nb.size()], 1.0, 0});
        }
      }
    }
  }
  return out;
}

double lra_raw_weight(const RatioDiscrepancy& r, std::size_t distance, const LraSwitches& sw, double floor) {
  double num = sw.use_r_diff ? r.diff : 1.0;
  double den = 1.0;
  if (sw.use_inv_d) den *= static_cast<double>(distance);
  if (sw.r_same_in_numerator) {
    num *= r.same;
  } else if (sw.use_inv_r_same) {
    den *= std::max(r.same, floor);
  }
  return num / den;
}

void minmax_normalize_weights(std::vector<AlignedPair>& pairs) {
  if (pairs.empty()) return;
  double lo = pairs[0].weight, hi = pairs[0].weight;
  for (const auto& p : pairs) {
    lo = std::min(lo, p.weight);
    hi = std::max(hi, p.weight);
  }
  const double range = hi - lo;
  for (auto& p : pairs) p.weight = range > 0.0 ? (p.weight - lo) / range : 1.0;
}

PairSet build_cia_lra_pairs(const Graph& g, const NeighborhoodProfile& profile, const HopDistanceTable& hops,
                            const ObjectiveConfig& cfg, const std::vector<bool>& labeled, Rng& rng) {
  if (hops.max_hops() != cfg.hops) {
    throw ContractError("build_cia_lra_pairs: hop table built with t=" + std::to_string(hops.max_hops()) +
                        " but config asks for t=" + std::to_string(cfg.hops));
  }
  if (labeled.size() != g.num_nodes) throw ContractError("build_cia_lra_pairs: labeled mask length mismatch");
  PairSet out;
  out.mode = PairSet::Mode::Local;
  out.per_class.resize(g.num_classes);
  std::vector<std::vector<AlignedPair>> candidates(g.num_classes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (!labeled[i]) continue;
    for (const auto& [j, d] : hops.within(i)) {
      if (j <= i || !labeled[j] || g.labels[j] != g.labels[i]) continue;
      candidates[static_cast<std::size_t>(g.labels[i])].push_back({i, j, 0.0, d});
    }
  }
  for (std::size_t c = 0; c < g.num_classes; ++c) {
    auto& cand = candidates[c];
    if (cand.empty()) {
      out.warnings.push_back("class " + std::to_string(c) + " has no same-class pair within " +
                             std::to_string(cfg.hops) + " hops");
      continue;
    }
    auto& chosen = out.per_class[c];
    for (std::size_t idx : rng.sample_without_replacement(cand.size(), cfg.pair_budget)) {
      AlignedPair p = cand[idx];
      const auto r = pair_ratio_discrepancies(profile, g.labels, p.i, p.j, static_cast<int>(c));
      p.weight = lra_raw_weight(r, p.distance, cfg.switches, cfg.r_same_floor);
      chosen.push_back(p);
    }
    minmax_normalize_weights(chosen);
  }
  return out;
}

Supervision Supervision::from_graph(const Graph& g, bool regression) {
  Supervision s;
  s.labels = g.labels;
  s.regression = regression;
  if (regression) {
    if (g.targets.empty()) throw ConfigError("regression objective needs targets.tsv in the dataset");
    s.values = g.targets;
  }
  return s;
}

namespace {
Tensor target_column(const Supervision& sup, const std::vector<std::size_t>& nodes) {
  Tensor t(nodes.size(), 1);
  for (std::size_t k = 0; k < nodes.size(); ++k) t[k] = sup.values.at(nodes[k]);
  return t;
}

std::vector<int> labels_of(const Supervision& sup, const std::vector<std::size_t>& nodes) {
  std::vector<int> y;
  y.reserve(nodes.size());
  for (std::size_t i : nodes) y.push_back(sup.labels.at(i));
  return y;
}
}  // namespace

Var erm_loss(Var outputs, const Supervision& sup, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) throw ContractError("erm_loss: empty node selection");
  const Var z = gather_rows(outputs, nodes);
  if (sup.regression) {
    if (z.cols() != 1) throw ContractError("erm_loss: regression expects one output column");
    return mse(z, outputs.tape->constant(target_column(sup, nodes)));
  }
  return cross_entropy_with_logits(z, labels_of(sup, nodes));
}

Var vrex_penalty(const std::vector<Var>& env_losses) {
  if (env_losses.size() < 2) {
    throw ContractError("vrex_penalty: need >= 2 environments, got " + std::to_string(env_losses.size()));
  }
  return population_variance(concat_rows(env_losses));
}

Var irm_dummy_gradient(Var outputs, const Supervision& sup, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) throw ContractError("irm_dummy_gradient: empty environment");
  Tape& tape = *outputs.tape;
  const Var z = gather_rows(outputs, nodes);
  const double n = static_cast<double>(nodes.size());
  if (sup.regression) {
    // (2/N) sum z (z - y)
    const Var resid = sub(z, tape.constant(target_column(sup, nodes)));
    return scale(sum(hadamard(z, resid)), 2.0 / n);
  }
  // (1/N) sum (softmax(z) - onehot(y)) . z
  Tensor onehot(z.rows(), z.cols());
  for (std::size_t k = 0; k < nodes.size(); ++k) onehot(k, static_cast<std::size_t>(sup.labels.at(nodes[k]))) = 1.0;
  const Var diff = sub(row_softmax(z), tape.constant(std::move(onehot)));
  return scale(sum(hadamard(diff, z)), 1.0 / n);
}

Var irmv1_penalty(Var outputs, const Supervision& sup, const EnvPartition& part) {
  if (part.empty()) throw ContractError("irmv1_penalty: no environments");
  std::vector<Var> terms;
  for (const auto& [env, nodes] : part) {
    const Var g = irm_dummy_gradient(outputs, sup, nodes);
    terms.push_back(hadamard(g, g));
  }
  return sum(concat_rows(terms));
}

Var alignment_loss(Var reps, const PairSet& pairs) {
  Tape& tape = *reps.tape;
  std::vector<std::size_t> is, js;
  std::vector<double> coeff;
  std::size_t classes = 0;
  for (const auto& cls : pairs.per_class) classes += cls.empty() ? 0 : 1;
  if (classes == 0) return tape.constant(Tensor::scalar(0.0));
  for (const auto& cls : pairs.per_class) {
    if (cls.empty()) continue;
    const double k = 1.0 / (static_cast<double>(classes) * static_cast<double>(cls.size()));
    for (const auto& p : cls) {
      is.push_back(p.i);
      js.push_back(p.j);
      coeff.push_back(k * p.weight);
    }
  }
  const Var diff = sub(gather_rows(reps, is), gather_rows(reps, js));
  const Var sq = row_sum(hadamard(diff, diff));
  return sum(hadamard(sq, tape.constant(Tensor::column(std::move(coeff)))));
}

LossParts total_loss(const ObjectiveConfig& cfg, Var outputs, Var reps, const Supervision& sup,
                     const std::vector<std::size_t>& train_nodes, const EnvPartition& part, const PairSet* pairs,
                     std::size_t epoch) {
  Tape& tape = *outputs.tape;
  LossParts parts;
  parts.erm = erm_loss(outputs, sup, train_nodes);
  parts.penalty_active = cfg.kind != ObjectiveKind::Erm && epoch >= cfg.warmup && cfg.lambda > 0.0;
  if (!parts.penalty_active) {
    parts.penalty = tape.constant(Tensor::scalar(0.0));
    parts.total = parts.erm;
    return parts;
  }
  switch (cfg.kind) {
    case ObjectiveKind::Irm:
      parts.penalty = irmv1_penalty(outputs, sup, part);
      break;
    case ObjectiveKind::Vrex: {
      std::vector<Var> losses;
      for (const auto& [env, nodes] : part) losses.push_back(erm_loss(outputs, sup, nodes));
      parts.penalty = vrex_penalty(losses);
      break;
    }
    case ObjectiveKind::Cia:
    case ObjectiveKind::CiaLra:
      if (!pairs) throw ContractError("total_loss: alignment objective without a pair set");
      parts.penalty = alignment_loss(reps, *pairs);
      break;
    case ObjectiveKind::Erm:
      break;
  }
  parts.total = add(parts.erm, scale(parts.penalty, cfg.lambda));
  return parts;
}

}  // namespace goodlab
