#include "pyrad/config.hpp"

#include <fstream>

#include "pyrad/error.hpp"
#include "pyrad/hash.hpp"

namespace pyrad {

RunConfig RunConfig::from_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  cfg.apply_json(j);
  return cfg;
}

void RunConfig::apply_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "category") category = value.get<std::string>();
      else if (key == "data_root") data_root = value.get<std::string>();
      else if (key == "teacher") teacher = value.get<std::string>();
      else if (key == "out_dir") out_dir = value.get<std::string>();
      else if (key == "blocks") pyramid.block_ids = value.get<std::vector<int>>();
      else if (key == "level_weights") pyramid.level_weights = value.get<std::vector<float>>();
      else if (key == "lr") train.lr = value.get<float>();
      else if (key == "epochs") train.epochs = value.get<int>();
      else if (key == "batch_size") train.batch_size = value.get<int>();
      else if (key == "input_size") train.input_size = value.get<int>();
      else if (key == "val_fraction") train.val_fraction = value.get<float>();
      else if (key == "train_fraction") train.train_fraction = value.get<float>();
      else if (key == "seed") train.seed = value.get<uint64_t>();
      else if (key == "momentum") train.momentum = value.get<float>();
      else if (key == "weight_decay") train.weight_decay = value.get<float>();
      else if (key == "fpr_limit") pro.fpr_limit = value.get<float>();
      else if (key == "pro_steps") pro.steps = value.get<int>();
      else if (key == "per_image_fpr") pro.per_image_fpr = value.get<bool>();
      else if (key == "smooth_sigma") smooth_sigma = value.get<float>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"category", category},
          {"data_root", data_root.string()},
          {"teacher", teacher.string()},
          {"out_dir", out_dir.string()},
          {"blocks", pyramid.block_ids},
          {"level_weights", pyramid.level_weights},
          {"lr", train.lr},
          {"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"input_size", train.input_size},
          {"val_fraction", train.val_fraction},
          {"train_fraction", train.train_fraction},
          {"seed", train.seed},
          {"momentum", train.momentum},
          {"weight_decay", train.weight_decay},
          {"fpr_limit", pro.fpr_limit},
          {"pro_steps", pro.steps},
          {"per_image_fpr", pro.per_image_fpr},
          {"smooth_sigma", smooth_sigma}};
}

std::string RunConfig::fingerprint() const {
  nlohmann::json j = to_json();
  j.erase("data_root");
  j.erase("teacher");
  j.erase("out_dir");
  Fnv64 h;
  h.update(j.dump());
  return h.hex();
}

std::string RunConfig::pyramid_fingerprint() const {
  const nlohmann::json j = {{"blocks", pyramid.block_ids},
                            {"level_weights", pyramid.level_weights},
                            {"input_size", train.input_size}};
  Fnv64 h;
  h.update(j.dump());
  return h.hex();
}

}  // namespace pyrad
