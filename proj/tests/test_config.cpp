#include "pyrad/config.hpp"

#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "pyrad/error.hpp"

using namespace pyrad;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const char* name, const std::string& body) {
  fs::path dir = fs::temp_directory_path() / "pyrad_config_tests";
  fs::create_directories(dir);
  fs::path file = dir / name;
  std::ofstream(file) << body;
  return file;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults encode the reference training protocol") {
  RunConfig cfg;
  CHECK(cfg.train.lr == 0.4f);
  CHECK(cfg.train.epochs == 100);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.input_size == 256);
  CHECK(cfg.train.val_fraction == 0.2f);
  CHECK(cfg.train.train_fraction == 1.f);
  CHECK(cfg.pyramid.block_ids == std::vector<int>{2, 3, 4});
  CHECK(cfg.pyramid.level_weights.empty());
  CHECK(cfg.pro.fpr_limit == 0.3f);
  CHECK(cfg.pro.steps == 200);
  CHECK_FALSE(cfg.pro.per_image_fpr);
  CHECK(cfg.smooth_sigma == 0.f);
}

TEST_CASE("config files load and override defaults") {
  const fs::path file = write_config("ok.json", R"({
    "category": "grid",
    "data_root": "/data",
    "blocks": [2, 3],
    "level_weights": [1.0, 0.5],
    "lr": 0.1,
    "epochs": 7,
    "input_size": 64,
    "seed": 42,
    "fpr_limit": 0.25,
    "per_image_fpr": true,
    "smooth_sigma": 2.0
  })");
  RunConfig cfg = RunConfig::from_file(file);
  CHECK(cfg.category == "grid");
  CHECK(cfg.data_root == fs::path("/data"));
  CHECK(cfg.pyramid.block_ids == std::vector<int>{2, 3});
  CHECK(cfg.pyramid.level_weights == std::vector<float>{1.f, 0.5f});
  CHECK(cfg.train.lr == 0.1f);
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.train.input_size == 64);
  CHECK(cfg.train.seed == 42);
  CHECK(cfg.train.batch_size == 32);  // untouched keys keep their defaults
  CHECK(cfg.pro.fpr_limit == 0.25f);
  CHECK(cfg.pro.per_image_fpr);
  CHECK(cfg.smooth_sigma == 2.f);
}

TEST_CASE("unknown keys and malformed files are configuration errors") {
  const fs::path bad_key = write_config("bad_key.json", R"({"learning_rate": 0.4})");
  CHECK_THROWS_WITH_AS(RunConfig::from_file(bad_key), doctest::Contains("learning_rate"),
                       ConfigError);

  const fs::path bad_json = write_config("bad_json.json", "{not json");
  CHECK_THROWS_AS(RunConfig::from_file(bad_json), ConfigError);

  CHECK_THROWS_AS(RunConfig::from_file(write_config("..", "").parent_path() / "missing.json"),
                  ConfigError);

  RunConfig cfg;
  CHECK_THROWS_AS(cfg.apply_json({{"epochs", "many"}}), ConfigError);  // wrong type
}

TEST_CASE("apply_json layers overrides on top of the current values") {
  RunConfig cfg;
  cfg.apply_json({{"epochs", 30}, {"category", "synth"}});
  CHECK(cfg.train.epochs == 30);
  cfg.apply_json({{"lr", 0.05}});
  CHECK(cfg.train.epochs == 30);  // earlier override survives
  CHECK(cfg.train.lr == 0.05f);
}

TEST_CASE("to_json round-trips through apply_json") {
  RunConfig cfg;
  cfg.category = "tile";
  cfg.train.epochs = 12;
  cfg.pyramid.block_ids = {3, 4};
  cfg.smooth_sigma = 1.f;

  RunConfig other;
  other.apply_json(cfg.to_json());
  CHECK(other.category == "tile");
  CHECK(other.train.epochs == 12);
  CHECK(other.pyramid.block_ids == std::vector<int>{3, 4});
  CHECK(other.fingerprint() == cfg.fingerprint());
}

TEST_CASE("fingerprints cover semantics, not file locations") {
  RunConfig a;
  RunConfig b;
  b.data_root = "/somewhere/else";
  b.teacher = "/tmp/teacher.fpwa";
  b.out_dir = "runs/alternative";
  CHECK(a.fingerprint() == b.fingerprint());

  b.train.lr = 0.01f;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("the pyramid fingerprint tracks scoring-critical fields only") {
  RunConfig a;
  RunConfig b;
  b.train.epochs = 3;        // training-only detail
  b.category = "different";  // bookkeeping
  CHECK(a.pyramid_fingerprint() == b.pyramid_fingerprint());
  CHECK(a.fingerprint() != b.fingerprint());

  RunConfig c;
  c.pyramid.block_ids = {2, 3};
  CHECK(a.pyramid_fingerprint() != c.pyramid_fingerprint());
  RunConfig d;
  d.train.input_size = 128;
  CHECK(a.pyramid_fingerprint() != d.pyramid_fingerprint());
  // Smoothing is a post-process on finished maps, so it may differ between
  // training and scoring without invalidating the checkpoint.
  RunConfig e;
  e.smooth_sigma = 4.f;
  CHECK(a.pyramid_fingerprint() == e.pyramid_fingerprint());
  CHECK(a.fingerprint() != e.fingerprint());
  RunConfig f;
  f.pyramid.level_weights = {1.f, 1.f, 2.f};
  CHECK(a.pyramid_fingerprint() != f.pyramid_fingerprint());
}

}  // TEST_SUITE
