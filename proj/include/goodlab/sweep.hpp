#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "goodlab/trainer.hpp"

namespace goodlab {

// lambda x hops x seed grid around a base run. At most 100 cells.
struct SweepGrid {
  RunConfig base;
  std::vector<double> lambdas;
  std::vector<std::size_t> hops;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return lambdas.size() * hops.size() * seeds.size(); }
  void validate() const;
};

// Run keys as in run_config_from_kv; lambda, hops and seed may be lists.
SweepGrid sweep_grid_from_kv(const KvConfig& kv);

struct SweepCell {
  std::size_t index = 0;
  double lambda = 0.0;
  std::size_t hops = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainSummary summary;
};

struct SweepAggregate {
  double lambda = 0.0;
  std::size_t hops = 0;
  std::size_t runs = 0;    // successful seeds
  std::size_t failed = 0;
  double mean = 0.0;       // test metric at the selected epoch
  double stddev = 0.0;     // sample standard deviation, 0 for a single run
};

// Cells run on up to `jobs` threads; results come back in grid order
// (lambda major, then hops, then seed). Each cell writes into
// out/cell-NNN; cells.tsv and aggregate.tsv go to out.
std::vector<SweepCell> run_sweep(const SweepGrid& grid, std::size_t jobs, const std::filesystem::path& out);

std::vector<SweepAggregate> aggregate_cells(const std::vector<SweepCell>& cells);
std::string cells_to_tsv(const std::vector<SweepCell>& cells);
std::string aggregate_to_tsv(const std::vector<SweepAggregate>& rows);

}  // namespace goodlab
