#include "goodlab/dataset_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "goodlab/errors.hpp"

namespace goodlab {
namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad(const fs::path& file, std::size_t line, const std::string& what) {
  throw ConfigError(file.string() + ":" + std::to_string(line + 1) + ": " + what);
}

double parse_double(const fs::path& file, std::size_t line, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) bad(file, line, "not a number: '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    bad(file, line, "not a number: '" + s + "'");
  }
}

long long parse_int(const fs::path& file, std::size_t line, const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad(file, line, "not an integer: '" + s + "'");
  return v;
}

std::vector<std::string> read_column(const fs::path& path, std::size_t n) {
  auto lines = read_lines(path);
  if (lines.size() != n) {
    throw ConfigError(path.string() + ": expected " + std::to_string(n) + " lines, found " +
                      std::to_string(lines.size()));
  }
  return lines;
}

}  // namespace

void write_dataset(const Graph& g, const fs::path& dir, const std::string& task) {
  g.validate();
  fs::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["num_nodes"] = g.num_nodes;
  meta["num_classes"] = g.num_classes;
  meta["feature_dim"] = g.feature_dim();
  meta["task"] = task;
  write_text(dir / "meta.json", meta.dump(2) + "\n");

  std::string text;
  for (const auto& [u, v] : g.edges) text += std::to_string(u) + "\t" + std::to_string(v) + "\n";
  write_text(dir / "edges.tsv", text);

  text.clear();
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const auto row = g.features.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) text += '\t';
      text += format_double(row[c]);
    }
    text += '\n';
  }
  write_text(dir / "features.tsv", text);

  std::string labels, envs, splits;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    labels += std::to_string(g.labels[i]) + "\n";
    envs += std::to_string(g.envs[i]) + "\n";
    splits += to_string(g.split[i]) + "\n";
  }
  write_text(dir / "labels.tsv", labels);
  write_text(dir / "envs.tsv", envs);
  write_text(dir / "splits.tsv", splits);

  if (!g.targets.empty()) {
    text.clear();
    for (double y : g.targets) text += format_double(y) + "\n";
    write_text(dir / "targets.tsv", text);
  }
}

namespace {
nlohmann::json read_meta(const fs::path& dir) {
  const fs::path path = dir / "meta.json";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}
}  // namespace

std::string read_dataset_task(const fs::path& dir) {
  const auto meta = read_meta(dir);
  return meta.value("task", std::string("classification"));
}

Graph read_dataset(const fs::path& dir) {
  const auto meta = read_meta(dir);
  Graph g;
  std::size_t dim = 0;
  try {
    g.num_nodes = meta.at("num_nodes").get<std::size_t>();
    g.num_classes = meta.at("num_classes").get<std::size_t>();
    dim = meta.at("feature_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((dir / "meta.json").string() + ": " + e.what());
  }
  const std::size_t n = g.num_nodes;

  const fs::path edges_path = dir / "edges.tsv";
  const auto edge_lines = read_lines(edges_path);
  for (std::size_t k = 0; k < edge_lines.size(); ++k) {
    const auto cells = split_tabs(edge_lines[k]);
    if (cells.size() != 2) bad(edges_path, k, "expected 'u<TAB>v'");
    const auto u = parse_int(edges_path, k, cells[0]);
    const auto v = parse_int(edges_path, k, cells[1]);
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      bad(edges_path, k, "endpoint out of range");
    }
    if (u >= v) bad(edges_path, k, "edges must be listed once with u < v");
    g.edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
  }
  try {
    g.edges = canonical_edges(std::move(g.edges), n);
  } catch (const ContractError& e) {
    throw ConfigError(edges_path.string() + ": " + e.what());
  }

  const fs::path feat_path = dir / "features.tsv";
  const auto feat_lines = read_column(feat_path, n);
  g.features = Tensor(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cells = split_tabs(feat_lines[i]);
    if (cells.size() != dim) {
      bad(feat_path, i, "expected " + std::to_string(dim) + " values, found " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < dim; ++c) g.features(i, c) = parse_double(feat_path, i, cells[c]);
  }

  const fs::path labels_path = dir / "labels.tsv";
  const auto label_lines = read_column(labels_path, n);
  const fs::path envs_path = dir / "envs.tsv";
  const auto env_lines = read_column(envs_path, n);
  const fs::path splits_path = dir / "splits.tsv";
  const auto split_lines = read_column(splits_path, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = parse_int(labels_path, i, label_lines[i]);
    if (y < 0 || static_cast<std::size_t>(y) >= g.num_classes) bad(labels_path, i, "label out of range");
    g.labels.push_back(static_cast<int>(y));
    g.envs.push_back(static_cast<int>(parse_int(envs_path, i, env_lines[i])));
    try {
      g.split.push_back(parse_split(split_lines[i]));
    } catch (const ConfigError& e) {
      bad(splits_path, i, e.what());
    }
  }

  const fs::path targets_path = dir / "targets.tsv";
  if (fs::exists(targets_path)) {
    const auto lines = read_column(targets_path, n);
    for (std::size_t i = 0; i < n; ++i) g.targets.push_back(parse_double(targets_path, i, lines[i]));
  }
  g.validate();
  return g;
}

}  // namespace goodlab
