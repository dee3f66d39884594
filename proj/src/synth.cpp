#include "goodlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "goodlab/dataset_io.hpp"
#include "goodlab/errors.hpp"

namespace goodlab {

std::string to_string(ShiftKind k) { return k == ShiftKind::Concept ? "concept" : "covariate"; }

ShiftKind parse_shift(const std::string& token) {
  if (token == "concept") return ShiftKind::Concept;
  if (token == "covariate") return ShiftKind::Covariate;
  throw ConfigError("unknown shift '" + token + "' (expected concept|covariate)");
}

std::vector<Edge> erdos_renyi_edges(std::size_t n, double p, Rng& rng) {
  std::vector<Edge> edges;
  if (n < 2 || p <= 0.0) return edges;
  if (p >= 1.0) {
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = u + 1; v < n; ++v) edges.emplace_back(u, v);
    return edges;
  }
  // Batagelj-Brandes skipping over the lower triangle, row v, column w < v.
  const double log_q = std::log1p(-p);
  long long v = 1, w = -1;
  const long long nn = static_cast<long long>(n);
  while (v < nn) {
    const double r = rng.uniform();
    w += 1 + static_cast<long long>(std::floor(std::log1p(-r) / log_q));
    while (w >= v && v < nn) {
      w -= v;
      ++v;
    }
    if (v < nn) edges.emplace_back(static_cast<std::size_t>(w), static_cast<std::size_t>(v));
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

namespace {

// Adds round(fraction * |edges|) random edges whose endpoints lie in different
// blocks. Blocks are contiguous id ranges given by offsets (size = blocks + 1).
void add_cross_block_edges(std::vector<Edge>& edges, const std::vector<std::size_t>& offsets, double fraction,
                           Rng& rng) {
  const std::size_t blocks = offsets.size() - 1;
  if (blocks < 2 || fraction <= 0.0) return;
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(edges.size())));
  std::set<Edge> present(edges.begin(), edges.end());
  const std::size_t n = offsets.back();
  auto block_of = [&](std::size_t i) {
    return static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), i) - offsets.begin()) - 1;
  };
  std::size_t added = 0, attempts = 0;
  while (added < target && attempts < 100 * (target + 1)) {
    ++attempts;
    std::size_t u = rng.index(n), v = rng.index(n);
    if (block_of(u) == block_of(v)) continue;
    if (u > v) std::swap(u, v);
    if (present.insert({u, v}).second) ++added;
  }
  edges.assign(present.begin(), present.end());
}

void assign_val(std::vector<Split>& split, const std::vector<std::size_t>& candidates, double fraction, Rng& rng) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));
  for (std::size_t idx : rng.sample_without_replacement(candidates.size(), k)) split[candidates[idx]] = Split::Val;
}

std::vector<double> apply_power(const CsrMatrix& a, std::vector<double> x, std::size_t power) {
  for (std::size_t p = 0; p < power; ++p) {
    Tensor t = a.multiply(Tensor::column(std::move(x)));
    x.assign(t.values().begin(), t.values().end());
  }
  return x;
}

}  // namespace

void ScmConfig::validate() const {
  if (nodes_per_env < 2) throw ConfigError("scm: nodes_per_env must be >= 2");
  if (num_envs < 1) throw ConfigError("scm: num_envs must be >= 1");
  if (causal_depth < 1) throw ConfigError("scm: causal depth k must be >= 1");
  if (shift == ShiftKind::Concept && spurious_depth < 1) throw ConfigError("scm: spurious depth m must be >= 1");
  if (!(cross_env_spurious_variance > 0.0)) throw ConfigError("scm: cross_env_spurious_variance must be > 0");
  if (!(edge_probability > 0.0 && edge_probability < 1.0)) throw ConfigError("scm: edge_probability must be in (0, 1)");
  if (!env_spurious_means.empty() && env_spurious_means.size() != num_envs) {
    throw ConfigError("scm: env_spurious_means needs one value per environment");
  }
  if (num_test_envs >= num_envs && num_envs > 1) throw ConfigError("scm: need at least one training environment");
  if (num_classes < 1) throw ConfigError("scm: num_classes must be >= 1");
}

std::vector<double> ScmConfig::resolved_env_means() const {
  if (!env_spurious_means.empty()) return env_spurious_means;
  std::vector<double> mu(num_envs, 0.0);
  if (num_envs < 2) return mu;
  double var = 0.0;
  for (std::size_t e = 0; e < num_envs; ++e) {
    mu[e] = static_cast<double>(e) - 0.5 * static_cast<double>(num_envs - 1);
    var += mu[e] * mu[e];
  }
  var /= static_cast<double>(num_envs);
  const double k = std::sqrt(cross_env_spurious_variance / var);
  for (auto& m : mu) m *= k;
  return mu;
}

ScmEnvironment sample_scm_environment(const ScmConfig& cfg, std::size_t env, double mu, Rng& rng) {
  const std::size_t n = cfg.nodes_per_env;
  ScmEnvironment out;
  out.mu = mu;
  Graph& g = out.graph;
  g.num_nodes = n;
  g.num_classes = 1;
  g.edges = erdos_renyi_edges(n, cfg.edge_probability, rng);
  g.features = Tensor(n, 2);
  g.labels.assign(n, 0);
  g.envs.assign(n, static_cast<int>(env));
  g.split.assign(n, Split::Train);
  out.adj = build_normalized(g);

  out.x1.resize(n);
  for (auto& x : out.x1) x = cfg.x1_constant ? *cfg.x1_constant : rng.normal(cfg.x1_mean, 1.0);
  std::vector<double> n1(n), n2(n);
  for (auto& x : n1) x = cfg.noise_scale * rng.normal();
  for (auto& x : n2) x = cfg.noise_scale * rng.normal();
  out.eps.resize(n);
  for (auto& x : out.eps) x = rng.normal(mu, cfg.within_env_std);

  out.y = apply_power(out.adj.tilde_a, out.x1, cfg.causal_depth);
  for (std::size_t i = 0; i < n; ++i) out.y[i] += n1[i];
  if (cfg.shift == ShiftKind::Concept) {
    out.x2 = apply_power(out.adj.tilde_a, out.y, cfg.spurious_depth);
  } else {
    out.x2.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) out.x2[i] += n2[i] + out.eps[i];
  for (std::size_t i = 0; i < n; ++i) {
    g.features(i, 0) = out.x1[i];
    g.features(i, 1) = out.x2[i];
  }
  g.targets = out.y;
  return out;
}

Graph gen_scm(const ScmConfig& cfg) {
  cfg.validate();
  const auto mus = cfg.resolved_env_means();
  const std::size_t n_env = cfg.nodes_per_env;
  Graph g;
  g.num_nodes = cfg.num_envs * n_env;
  g.num_classes = cfg.num_classes;
  g.features = Tensor(g.num_nodes, 2);
  std::vector<std::size_t> offsets{0};
  for (std::size_t e = 0; e < cfg.num_envs; ++e) {
    Rng rng(cfg.seed, "scm/env-" + std::to_string(e));
    const auto env = sample_scm_environment(cfg, e, mus[e], rng);
    const std::size_t off = offsets.back();
    for (const auto& [u, v] : env.graph.edges) g.edges.emplace_back(u + off, v + off);
    for (std::size_t i = 0; i < n_env; ++i) {
      g.features(off + i, 0) = env.x1[i];
      g.features(off + i, 1) = env.x2[i];
      g.targets.push_back(env.y[i]);
      g.envs.push_back(static_cast<int>(e));
    }
    offsets.push_back(off + n_env);
  }
  Rng cross(cfg.seed, "scm/cross-env-edges");
  add_cross_block_edges(g.edges, offsets, cfg.cross_env_edge_fraction, cross);

  // Quantile bins of Y, ties broken by node id.
  std::vector<std::size_t> order(g.num_nodes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g.targets[a] < g.targets[b]; });
  g.labels.assign(g.num_nodes, 0);
  for (std::size_t r = 0; r < order.size(); ++r) {
    g.labels[order[r]] = static_cast<int>(std::min(cfg.num_classes - 1, r * cfg.num_classes / g.num_nodes));
  }

  g.split.assign(g.num_nodes, Split::Train);
  const std::size_t first_test = cfg.num_envs > 1 ? cfg.num_envs - cfg.num_test_envs : cfg.num_envs;
  std::vector<std::size_t> train_nodes;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (static_cast<std::size_t>(g.envs[i]) >= first_test) g.split[i] = Split::Test;
    else train_nodes.push_back(i);
  }
  Rng split_rng(cfg.seed, "scm/split");
  assign_val(g.split, train_nodes, cfg.val_fraction, split_rng);
  g.validate();
  return g;
}

void CsbmConfig::validate() const {
  if (num_classes < 2) throw ConfigError("csbm: num_classes must be >= 2");
  if (feature_dim == 0 || feature_dim % 2 != 0) throw ConfigError("csbm: feature_dim must be even and positive");
  if (num_classes > feature_dim / 2) {
    throw ConfigError("csbm: " + std::to_string(num_classes) + " orthonormal means do not fit in dimension " +
                      std::to_string(feature_dim / 2));
  }
  if (num_envs < 2) throw ConfigError("csbm: num_envs must be >= 2 (train + test)");
  if (!(noise_variance > 0.0)) throw ConfigError("csbm: noise_variance must be > 0");
  if (!(p_hm >= 0.0 && p_hm <= 1.0)) throw ConfigError("csbm: p_hm must lie in [0, 1]");
  if (!p_ht.empty() && p_ht.size() != num_envs) throw ConfigError("csbm: p_ht needs one table per environment");
  for (std::size_t e = 0; e < p_ht.size(); ++e) {
    const Tensor& t = p_ht[e];
    if (t.rows() != num_classes || t.cols() != num_classes) throw ConfigError("csbm: p_ht table must be C x C");
    for (std::size_t c = 0; c < num_classes; ++c) {
      double s = p_hm;
      for (std::size_t d = 0; d < num_classes; ++d) {
        if (d == c) continue;
        if (t(c, d) < 0.0) throw ConfigError("csbm: negative heterophily probability");
        s += t(c, d);
      }
      if (std::abs(s - 1.0) > 1e-9) {
        throw ConfigError("csbm: env " + std::to_string(e) + " class " + std::to_string(c) +
                          ": p_hm + sum of p_ht = " + format_double(s) + ", expected 1");
      }
    }
  }
  if (!class_means.empty()) {
    if (class_means.rows() != num_classes || class_means.cols() != feature_dim / 2) {
      throw ConfigError("csbm: class means must be C x D/2, got " + class_means.shape_string());
    }
    require_orthonormal_rows(class_means, "class means");
  }
  if (!env_means.empty() && env_means.size() != num_envs) throw ConfigError("csbm: env_means needs one block per env");
  for (const Tensor& m : env_means) require_orthonormal_rows(m, "environment means");
}

Tensor CsbmConfig::resolved_p_ht(std::size_t env) const {
  if (!p_ht.empty()) return p_ht.at(env);
  Tensor t(num_classes, num_classes);
  const double off = (1.0 - p_hm) / static_cast<double>(num_classes - 1);
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t d = 0; d < num_classes; ++d)
      if (c != d) t(c, d) = off;
  return t;
}

void require_orthonormal_rows(const Tensor& m, const std::string& what, double tol) {
  double max_dot = 0.0, max_norm_err = 0.0;
  for (std::size_t a = 0; a < m.rows(); ++a) {
    for (std::size_t b = a; b < m.rows(); ++b) {
      double d = 0.0;
      for (std::size_t k = 0; k < m.cols(); ++k) d += m(a, k) * m(b, k);
      if (a == b) max_norm_err = std::max(max_norm_err, std::abs(d - 1.0));
      else max_dot = std::max(max_dot, std::abs(d));
    }
  }
  if (max_dot > tol || max_norm_err > tol) {
    throw ConfigError(what + " are not orthonormal: max pairwise |dot| = " + format_double(max_dot) +
                      ", max |norm^2 - 1| = " + format_double(max_norm_err));
  }
}

Tensor random_orthonormal_rows(std::size_t k, std::size_t dim, Rng& rng) {
  if (k > dim) throw ContractError("random_orthonormal_rows: k > dim");
  Eigen::MatrixXd g(dim, k);
  for (Eigen::Index c = 0; c < g.cols(); ++c)
    for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                                         static_cast<Eigen::Index>(k));
  Tensor out(k, dim);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < dim; ++c) out(r, c) = q(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r));
  return out;
}

Tensor read_means_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read means file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) throw ConfigError(path.string() + ": non-numeric entry in means file");
    if (!rows.empty() && row.size() != rows[0].size()) throw ConfigError(path.string() + ": ragged means file");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(path.string() + ": empty means file");
  Tensor m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

CsbmDataset gen_csbm(const CsbmConfig& cfg) {
  cfg.validate();
  const std::size_t C = cfg.num_classes, half = cfg.feature_dim / 2, E = cfg.num_envs;
  CsbmDataset out;
  if (!cfg.class_means.empty()) {
    out.means.class_means = cfg.class_means;
  } else {
    Rng r(cfg.seed, "csbm/class-means");
    out.means.class_means = random_orthonormal_rows(C, half, r);
  }
  for (std::size_t e = 0; e < E; ++e) {
    if (!cfg.env_means.empty()) {
      out.means.env_means.push_back(cfg.env_means[e]);
    } else {
      Rng r(cfg.seed, "csbm/env-means-" + std::to_string(e));
      out.means.env_means.push_back(random_orthonormal_rows(C, half, r));
    }
  }

  Graph& g = out.graph;
  const std::size_t per_env = C * cfg.nodes_per_class;
  g.num_nodes = E * per_env;
  g.num_classes = C;
  g.features = Tensor(g.num_nodes, cfg.feature_dim);
  const double sd = std::sqrt(cfg.noise_variance);
  Rng feat(cfg.seed, "csbm/features");
  // Node id = env * per_env + class * nodes_per_class + k.
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < cfg.nodes_per_class; ++k) {
        const std::size_t i = e * per_env + c * cfg.nodes_per_class + k;
        for (std::size_t d = 0; d < half; ++d) {
          g.features(i, d) = out.means.class_means(c, d) + sd * feat.normal();
          g.features(i, half + d) = out.means.env_means[e](c, d) + sd * feat.normal();
        }
        g.labels.push_back(static_cast<int>(c));
        g.envs.push_back(static_cast<int>(e));
        g.split.push_back(e + 1 == E ? Split::Test : Split::Train);
      }
    }
  }

  // Each node proposes Poisson(mean_degree / 2) edges so the expected degree
  // after symmetrization is mean_degree.
  std::set<Edge> edges;
  Rng topo(cfg.seed, "csbm/edges");
  for (std::size_t e = 0; e < E; ++e) {
    const Tensor table = cfg.resolved_p_ht(e);
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> probs(C);
      for (std::size_t d = 0; d < C; ++d) probs[d] = d == c ? cfg.p_hm : table(c, d);
      std::discrete_distribution<std::size_t> pick_class(probs.begin(), probs.end());
      for (std::size_t k = 0; k < cfg.nodes_per_class; ++k) {
        const std::size_t i = e * per_env + c * cfg.nodes_per_class + k;
        const auto count = topo.poisson(0.5 * cfg.mean_degree);
        for (std::uint64_t s = 0; s < count; ++s) {
          const std::size_t d = pick_class(topo.engine());
          if (d == c && cfg.nodes_per_class < 2) continue;
          std::size_t j;
          do {
            j = e * per_env + d * cfg.nodes_per_class + topo.index(cfg.nodes_per_class);
          } while (j == i);
          edges.insert({std::min(i, j), std::max(i, j)});
        }
      }
    }
  }
  g.edges.assign(edges.begin(), edges.end());

  std::vector<std::size_t> train_nodes;
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (g.split[i] == Split::Train) train_nodes.push_back(i);
  Rng split_rng(cfg.seed, "csbm/split");
  assign_val(g.split, train_nodes, cfg.val_fraction, split_rng);
  g.validate();
  return out;
}

namespace {
nlohmann::json tensor_rows_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (double v : t.row(r)) row.push_back(v);
    rows.push_back(row);
  }
  return rows;
}

Tensor tensor_from_rows(const nlohmann::json& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows[0].size() : 0;
  Tensor t(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) throw ConfigError("ragged matrix in means json");
    for (std::size_t j = 0; j < c; ++j) t(i, j) = rows[i][j].get<double>();
  }
  return t;
}
}  // namespace

void write_csbm_means(const CsbmMeans& means, const std::filesystem::path& path) {
  nlohmann::json j;
  j["class_means"] = tensor_rows_json(means.class_means);
  j["env_means"] = nlohmann::json::array();
  for (const auto& m : means.env_means) j["env_means"].push_back(tensor_rows_json(m));
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

CsbmMeans read_csbm_means(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    CsbmMeans m;
    m.class_means = tensor_from_rows(j.at("class_means"));
    for (const auto& e : j.at("env_means")) m.env_means.push_back(tensor_from_rows(e));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ToyConfig::validate() const {
  if (nodes_per_class_per_env < 1) throw ConfigError("toy: nodes_per_class_per_env must be >= 1");
  if (!(edge_probability >= 0.0 && edge_probability < 1.0)) throw ConfigError("toy: edge_probability must be in [0, 1)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("toy: val_fraction must be in [0, 1)");
}

std::array<double, 2> toy_invariant_mean(int cls) {
  static constexpr std::array<std::array<double, 2>, 4> kMeans{{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  return kMeans.at(static_cast<std::size_t>(cls));
}

std::array<double, 2> toy_spurious_mean(ShiftKind shift, int env, int cls) {
  if (shift == ShiftKind::Covariate) {
    static constexpr std::array<double, 3> kLevel{2, 4, 6};
    const double v = kLevel.at(static_cast<std::size_t>(env));
    return {v, v};
  }
  static constexpr std::array<std::array<double, 2>, 4> kCycle{{{3, 3}, {-3, 3}, {-3, -3}, {3, -3}}};
  if (env < 0 || env > 2 || cls < 0 || cls > 3) throw ContractError("toy_spurious_mean: bad env/class");
  return kCycle[static_cast<std::size_t>((cls + env) % 4)];
}

Graph gen_toy(const ToyConfig& cfg) {
  cfg.validate();
  constexpr std::size_t kClasses = 4, kEnvs = 3;
  const std::size_t per_env = kClasses * cfg.nodes_per_class_per_env;
  Graph g;
  g.num_nodes = kEnvs * per_env;
  g.num_classes = kClasses;
  g.features = Tensor(g.num_nodes, 4);
  Rng feat(cfg.seed, "toy/features");
  std::vector<std::size_t> offsets{0};
  for (std::size_t e = 0; e < kEnvs; ++e) {
    for (std::size_t c = 0; c < kClasses; ++c) {
      const auto inv = toy_invariant_mean(static_cast<int>(c));
      const auto sp = toy_spurious_mean(cfg.shift, static_cast<int>(e), static_cast<int>(c));
      for (std::size_t k = 0; k < cfg.nodes_per_class_per_env; ++k) {
        const std::size_t i = e * per_env + c * cfg.nodes_per_class_per_env + k;
        g.features(i, 0) = inv[0] + feat.normal();
        g.features(i, 1) = inv[1] + feat.normal();
        g.features(i, 2) = sp[0] + feat.normal();
        g.features(i, 3) = sp[1] + feat.normal();
        g.labels.push_back(static_cast<int>(c));
        g.envs.push_back(static_cast<int>(e));
        g.split.push_back(e + 1 == kEnvs ? Split::Test : Split::Train);
      }
    }
    Rng topo(cfg.seed, "toy/edges-env-" + std::to_string(e));
    const std::size_t off = offsets.back();
    for (const auto& [u, v] : erdos_renyi_edges(per_env, cfg.edge_probability, topo)) {
      g.edges.emplace_back(u + off, v + off);
    }
    offsets.push_back(off + per_env);
  }
  Rng cross(cfg.seed, "toy/cross-env-edges");
  add_cross_block_edges(g.edges, offsets, cfg.cross_env_edge_fraction, cross);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if ((g.split[i] == Split::Test) == cfg.ood_validation) pool.push_back(i);
  Rng split_rng(cfg.seed, "toy/split");
  assign_val(g.split, pool, cfg.val_fraction, split_rng);
  g.validate();
  return g;
}

namespace {

std::size_t get_count(const KvConfig& kv, const std::string& key, std::size_t fallback) {
  const long long v = kv.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError("config key '" + key + "': must be >= 0");
  return static_cast<std::size_t>(v);
}

Tensor square_table(const std::vector<double>& flat, std::size_t c, const std::string& key) {
  if (flat.size() != c * c) {
    throw ConfigError("config key '" + key + "': expected " + std::to_string(c * c) + " values (C x C, row major)");
  }
  return Tensor(c, c, flat);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

}  // namespace

ScmConfig scm_config_from_kv(const KvConfig& kv) {
  kv.require_known({"num_envs", "nodes_per_env", "k", "m", "shift", "env_spurious_means", "sigma2",
                    "within_env_std", "edge_probability", "cross_env_edge_fraction", "noise_scale", "x1_mean", "x1_constant",
                    "num_classes", "num_test_envs", "val_fraction", "seed"});
  ScmConfig c;
  c.num_envs = get_count(kv, "num_envs", c.num_envs);
  c.nodes_per_env = get_count(kv, "nodes_per_env", c.nodes_per_env);
  c.causal_depth = get_count(kv, "k", c.causal_depth);
  c.spurious_depth = get_count(kv, "m", c.spurious_depth);
  c.shift = parse_shift(kv.get_string("shift", to_string(c.shift)));
  if (kv.has("env_spurious_means")) c.env_spurious_means = kv.get_doubles("env_spurious_means");
  c.cross_env_spurious_variance = kv.get_double("sigma2", c.cross_env_spurious_variance);
  c.within_env_std = kv.get_double("within_env_std", c.within_env_std);
  c.edge_probability = kv.get_double("edge_probability", c.edge_probability);
  c.cross_env_edge_fraction = kv.get_double("cross_env_edge_fraction", c.cross_env_edge_fraction);
  c.noise_scale = kv.get_double("noise_scale", c.noise_scale);
  c.x1_mean = kv.get_double("x1_mean", c.x1_mean);
  if (kv.has("x1_constant")) c.x1_constant = kv.get_double("x1_constant");
  c.num_classes = get_count(kv, "num_classes", c.num_classes);
  c.num_test_envs = get_count(kv, "num_test_envs", c.num_test_envs);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.validate();
  return c;
}

KvConfig to_kv(const ScmConfig& c) {
  KvConfig kv;
  kv.set("num_envs", std::to_string(c.num_envs));
  kv.set("nodes_per_env", std::to_string(c.nodes_per_env));
  kv.set("k", std::to_string(c.causal_depth));
  kv.set("m", std::to_string(c.spurious_depth));
  kv.set("shift", to_string(c.shift));
  kv.set("env_spurious_means", join(c.resolved_env_means()));
  kv.set("sigma2", format_double(c.cross_env_spurious_variance));
  kv.set("within_env_std", format_double(c.within_env_std));
  kv.set("edge_probability", format_double(c.edge_probability));
  kv.set("cross_env_edge_fraction", format_double(c.cross_env_edge_fraction));
  kv.set("noise_scale", format_double(c.noise_scale));
  kv.set("x1_mean", format_double(c.x1_mean));
  if (c.x1_constant) kv.set("x1_constant", format_double(*c.x1_constant));
  kv.set("num_classes", std::to_string(c.num_classes));
  kv.set("num_test_envs", std::to_string(c.num_test_envs));
  kv.set("val_fraction", format_double(c.val_fraction));
  kv.set("seed", std::to_string(c.seed));
  return kv;
}

CsbmConfig csbm_config_from_kv(const KvConfig& kv) {
  kv.require_known({"num_classes", "feature_dim", "num_envs", "nodes_per_class", "noise_variance", "p_hm", "p_ht",
                    "p_ht_test", "mean_degree", "means_file", "val_fraction", "seed"});
  CsbmConfig c;
  c.num_classes = get_count(kv, "num_classes", c.num_classes);
  c.feature_dim = get_count(kv, "feature_dim", c.feature_dim);
  c.num_envs = get_count(kv, "num_envs", c.num_envs);
  c.nodes_per_class = get_count(kv, "nodes_per_class", c.nodes_per_class);
  c.noise_variance = kv.get_double("noise_variance", c.noise_variance);
  c.p_hm = kv.get_double("p_hm", c.p_hm);
  c.mean_degree = kv.get_double("mean_degree", c.mean_degree);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  if (kv.has("p_ht") || kv.has("p_ht_test")) {
    const Tensor base = kv.has("p_ht") ? square_table(kv.get_doubles("p_ht"), c.num_classes, "p_ht")
                                       : CsbmConfig{c}.resolved_p_ht(0);
    c.p_ht.assign(c.num_envs, base);
    if (kv.has("p_ht_test")) c.p_ht.back() = square_table(kv.get_doubles("p_ht_test"), c.num_classes, "p_ht_test");
  }
  if (kv.has("means_file")) {
    std::filesystem::path p = kv.get_string("means_file");
    if (p.is_relative() && kv.source().front() != '<') p = std::filesystem::path(kv.source()).parent_path() / p;
    c.class_means = read_means_file(p);
  }
  c.validate();
  return c;
}

KvConfig to_kv(const CsbmConfig& c) {
  KvConfig kv;
  kv.set("num_classes", std::to_string(c.num_classes));
  kv.set("feature_dim", std::to_string(c.feature_dim));
  kv.set("num_envs", std::to_string(c.num_envs));
  kv.set("nodes_per_class", std::to_string(c.nodes_per_class));
  kv.set("noise_variance", format_double(c.noise_variance));
  kv.set("p_hm", format_double(c.p_hm));
  kv.set("mean_degree", format_double(c.mean_degree));
  kv.set("val_fraction", format_double(c.val_fraction));
  kv.set("seed", std::to_string(c.seed));
  if (!c.p_ht.empty()) {
    const auto flat = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    kv.set("p_ht", join(flat(c.p_ht.front())));
    kv.set("p_ht_test", join(flat(c.p_ht.back())));
  }
  return kv;
}

ToyConfig toy_config_from_kv(const KvConfig& kv) {
  kv.require_known({"nodes_per_class_per_env", "shift", "edge_probability", "cross_env_edge_fraction",
                    "val_fraction", "ood_validation", "seed"});
  ToyConfig c;
  c.nodes_per_class_per_env = get_count(kv, "nodes_per_class_per_env", c.nodes_per_class_per_env);
  c.shift = parse_shift(kv.get_string("shift", to_string(c.shift)));
  c.edge_probability = kv.get_double("edge_probability", c.edge_probability);
  c.cross_env_edge_fraction = kv.get_double("cross_env_edge_fraction", c.cross_env_edge_fraction);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.ood_validation = kv.get_bool("ood_validation", c.ood_validation);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.validate();
  return c;
}

KvConfig to_kv(const ToyConfig& c) {
  KvConfig kv;
  kv.set("nodes_per_class_per_env", std::to_string(c.nodes_per_class_per_env));
  kv.set("shift", to_string(c.shift));
  kv.set("edge_probability", format_double(c.edge_probability));
  kv.set("cross_env_edge_fraction", format_double(c.cross_env_edge_fraction));
  kv.set("val_fraction", format_double(c.val_fraction));
  kv.set("ood_validation", c.ood_validation ? "true" : "false");
  kv.set("seed", std::to_string(c.seed));
  return kv;
}

}  // namespace goodlab
