#pragma once

#include <filesystem>
#include <string>

#include "goodlab/graph.hpp"

namespace goodlab {

// Directory layout: meta.json, edges.tsv, features.tsv, labels.tsv, envs.tsv,
// splits.tsv and, for regression data, targets.tsv. Floats are written with 17
// significant digits so a round trip is exact.
void write_dataset(const Graph& g, const std::filesystem::path& dir, const std::string& task = "classification");
Graph read_dataset(const std::filesystem::path& dir);
std::string read_dataset_task(const std::filesystem::path& dir);

// "%.17g"
std::string format_double(double v);

}  // namespace goodlab
