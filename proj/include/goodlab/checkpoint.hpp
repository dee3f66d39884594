#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "goodlab/models.hpp"

namespace goodlab {

// Hex-float text ("%a") so every double round-trips exactly.
std::string hex_double(double v);
double parse_hex_double(const std::string& s);

struct Checkpoint {
  MpnnParams model;
  std::optional<EdgeMaskParams> mask;
  long long epoch = -1;
};

std::string checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string theory_params_to_json(const TheoryGnnParams& p);
TheoryGnnParams theory_params_from_json(const std::string& text);

}  // namespace goodlab
