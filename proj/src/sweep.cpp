#include "goodlab/sweep.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "goodlab/dataset_io.hpp"
#include "goodlab/errors.hpp"

namespace goodlab {
namespace fs = std::filesystem;

void SweepGrid::validate() const {
  base.validate();
  if (lambdas.empty() || hops.empty() || seeds.empty()) throw ConfigError("sweep: every grid axis needs a value");
  if (size() > 100) throw ConfigError("sweep: grid has " + std::to_string(size()) + " cells, limit is 100");
  for (double l : lambdas)
    if (!(l >= 0.0)) throw ConfigError("sweep: lambda must be >= 0");
  for (std::size_t h : hops)
    if (h < 1) throw ConfigError("sweep: hops must be >= 1");
}

SweepGrid sweep_grid_from_kv(const KvConfig& kv) {
  KvConfig scalar;
  for (const auto& [k, v] : kv.entries())
    if (k != "lambda" && k != "hops" && k != "seed") scalar.set(k, v);
  SweepGrid grid;
  grid.base = run_config_from_kv(scalar);
  grid.lambdas = kv.has("lambda") ? kv.get_doubles("lambda") : std::vector<double>{grid.base.lambda};
  auto counts = [&](const std::string& key, std::size_t fallback) {
    std::vector<std::size_t> out;
    if (!kv.has(key)) return std::vector<std::size_t>{fallback};
    for (double v : kv.get_doubles(key)) {
      if (v < 0 || v != std::floor(v)) throw ConfigError("sweep: '" + key + "' values must be non-negative integers");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  };
  grid.hops = counts("hops", grid.base.hops);
  for (std::size_t s : counts("seed", static_cast<std::size_t>(grid.base.seed))) grid.seeds.push_back(s);
  grid.validate();
  return grid;
}

namespace {

std::string cell_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell-%03zu", i);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<SweepCell> run_sweep(const SweepGrid& grid, std::size_t jobs, const fs::path& out) {
  grid.validate();
  if (grid.base.dataset.empty()) throw ConfigError("sweep: no dataset directory given");
  const Graph g = read_dataset(grid.base.dataset);
  const bool regression = read_dataset_task(grid.base.dataset) == "regression";
  fs::create_directories(out);

  std::vector<SweepCell> cells;
  for (double l : grid.lambdas)
    for (std::size_t h : grid.hops)
      for (std::uint64_t s : grid.seeds) {
        SweepCell c;
        c.index = cells.size();
        c.lambda = l;
        c.hops = h;
        c.seed = s;
        cells.push_back(c);
      }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepCell& c = cells[i];
      RunConfig cfg = grid.base;
      cfg.lambda = c.lambda;
      cfg.hops = c.hops;
      cfg.seed = c.seed;
      cfg.out = out / cell_name(i);
      try {
        c.summary = run_training(cfg, g, regression);
        c.ok = true;
      } catch (const std::exception& e) {
        c.error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  write_file(out / "cells.tsv", cells_to_tsv(cells));
  write_file(out / "aggregate.tsv", aggregate_to_tsv(aggregate_cells(cells)));
  return cells;
}

std::vector<SweepAggregate> aggregate_cells(const std::vector<SweepCell>& cells) {
  std::vector<SweepAggregate> rows;
  std::map<std::pair<double, std::size_t>, std::vector<const SweepCell*>> groups;
  std::vector<std::pair<double, std::size_t>> order;
  for (const auto& c : cells) {
    const auto key = std::make_pair(c.lambda, c.hops);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&c);
  }
  for (const auto& key : order) {
    SweepAggregate a;
    a.lambda = key.first;
    a.hops = key.second;
    std::vector<double> v;
    for (const SweepCell* c : groups[key]) {
      if (c->ok) {
        v.push_back(c->summary.test_at_best);
      } else {
        ++a.failed;
      }
    }
    a.runs = v.size();
    if (!v.empty()) {
      for (double x : v) a.mean += x;
      a.mean /= static_cast<double>(v.size());
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
    }
    rows.push_back(a);
  }
  return rows;
}

std::string cells_to_tsv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out << "cell\tlambda\thops\tseed\tstatus\tbest_epoch\tbest_val\ttest_at_best\tfinal_test\n";
  for (const auto& c : cells) {
    out << cell_name(c.index) << '\t' << format_double(c.lambda) << '\t' << c.hops << '\t' << c.seed << '\t';
    if (c.ok) {
      out << "ok\t" << c.summary.best_epoch << '\t' << format_double(c.summary.best_val) << '\t'
          << format_double(c.summary.test_at_best) << '\t' << format_double(c.summary.final_record.test_metric);
    } else {
      std::string msg = c.error;
      for (char& ch : msg)
        if (ch == '\t' || ch == '\n') ch = ' ';
      out << "error: " << msg << "\t\t\t\t";
    }
    out << '\n';
  }
  return out.str();
}

std::string aggregate_to_tsv(const std::vector<SweepAggregate>& rows) {
  std::ostringstream out;
  out << "lambda\thops\truns\tfailed\tmean_test\tstd_test\n";
  for (const auto& r : rows) {
    out << format_double(r.lambda) << '\t' << r.hops << '\t' << r.runs << '\t' << r.failed << '\t'
        << format_double(r.mean) << '\t' << format_double(r.stddev) << '\n';
  }
  return out.str();
}

}  // namespace goodlab
