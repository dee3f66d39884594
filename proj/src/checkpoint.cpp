#include "goodlab/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "goodlab/errors.hpp"

namespace goodlab {
using nlohmann::ordered_json;

std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("checkpoint: bad float '" + s + "'");
  return v;
}

namespace {

ordered_json tensor_json(const Tensor& t) {
  ordered_json j;
  j["rows"] = t.rows();
  j["cols"] = t.cols();
  ordered_json data = ordered_json::array();
  for (double v : t.values()) data.push_back(hex_double(v));
  j["data"] = std::move(data);
  return j;
}

Tensor tensor_from(const ordered_json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  const auto& data = j.at("data");
  std::vector<double> v;
  for (const auto& x : data) v.push_back(parse_hex_double(x.get<std::string>()));
  if (v.size() != rows * cols) throw ConfigError("checkpoint: tensor data does not match its shape");
  return Tensor(rows, cols, std::move(v));
}

ordered_json config_json(const MpnnConfig& c) {
  ordered_json j;
  j["aggregator"] = to_string(c.aggregator);
  j["in_dim"] = c.in_dim;
  j["hidden"] = c.hidden;
  j["num_layers"] = c.num_layers;
  j["num_classes"] = c.num_classes;
  j["activation"] = c.activation == Activation::Relu ? "relu" : "identity";
  j["layer_bias"] = c.layer_bias;
  j["head_hidden"] = c.head_hidden;
  j["split_input"] = c.split_input;
  j["attention_slope"] = hex_double(c.attention_slope);
  j["dropout"] = hex_double(c.dropout);
  return j;
}

MpnnConfig config_from(const ordered_json& j) {
  MpnnConfig c;
  c.aggregator = parse_aggregator(j.at("aggregator").get<std::string>());
  c.in_dim = j.at("in_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.activation = j.at("activation").get<std::string>() == "relu" ? Activation::Relu : Activation::Identity;
  c.layer_bias = j.at("layer_bias").get<bool>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.split_input = j.at("split_input").get<bool>();
  c.attention_slope = parse_hex_double(j.at("attention_slope").get<std::string>());
  c.dropout = parse_hex_double(j.at("dropout").get<std::string>());
  return c;
}

ordered_json params_json(const MpnnParams& p) {
  ordered_json j;
  j["config"] = config_json(p.config);
  ordered_json tensors = ordered_json::object();
  const auto names = p.names();
  const auto ts = p.tensors();
  for (std::size_t k = 0; k < ts.size(); ++k) tensors[names[k]] = tensor_json(*ts[k]);
  j["tensors"] = std::move(tensors);
  return j;
}

MpnnParams params_from(const ordered_json& j) {
  const MpnnConfig cfg = config_from(j.at("config"));
  Rng scratch(0, "checkpoint/shape");
  MpnnParams p = MpnnParams::init(cfg, scratch);
  const auto names = p.names();
  auto ts = p.tensors();
  const auto& tensors = j.at("tensors");
  if (tensors.size() != ts.size()) throw ConfigError("checkpoint: tensor count does not match the model config");
  for (std::size_t k = 0; k < ts.size(); ++k) {
    Tensor t = tensor_from(tensors.at(names[k]));
    if (t.shape() != ts[k]->shape()) {
      throw ConfigError("checkpoint: tensor " + names[k] + " has shape " + t.shape_string() + ", expected " +
                        ts[k]->shape_string());
    }
    *ts[k] = std::move(t);
  }
  return p;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ck) {
  ordered_json j;
  j["format"] = "goodlab-checkpoint-1";
  j["epoch"] = ck.epoch;
  j["model"] = params_json(ck.model);
  if (ck.mask) {
    j["mask"] = params_json(ck.mask->encoder);
    j["mask"]["mode"] = to_string(ck.mask->mode);
  }
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    if (j.value("format", std::string()) != "goodlab-checkpoint-1") throw ConfigError("checkpoint: unknown format");
    Checkpoint ck;
    ck.epoch = j.at("epoch").get<long long>();
    ck.model = params_from(j.at("model"));
    if (j.contains("mask")) {
      ck.mask = EdgeMaskParams{params_from(j.at("mask")), parse_mask_mode(j.at("mask").at("mode").get<std::string>())};
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << checkpoint_to_json(ck);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

std::string theory_params_to_json(const TheoryGnnParams& p) {
  ordered_json j;
  j["depth"] = p.depth();
  const auto names = TheoryGnnParams::scalar_names(p.depth());
  const auto values = p.flatten();
  ordered_json s = ordered_json::object();
  for (std::size_t k = 0; k < values.size(); ++k) s[names[k]] = hex_double(values[k]);
  j["scalars"] = std::move(s);
  return j.dump(1) + "\n";
}

TheoryGnnParams theory_params_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    const auto depth = j.at("depth").get<std::size_t>();
    const auto names = TheoryGnnParams::scalar_names(depth);
    std::vector<double> values;
    for (const auto& n : names) values.push_back(parse_hex_double(j.at("scalars").at(n).get<std::string>()));
    return TheoryGnnParams::unflatten(values, depth);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("theory params: ") + e.what());
  }
}

}  // namespace goodlab
