#include "pyrad/datasets.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pyrad/backbone.hpp"
#include "pyrad/error.hpp"

using namespace pyrad;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / "pyrad_dataset_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthSpec small_spec() {
  SynthSpec spec;
  spec.name = "fixture";
  spec.image_size = 24;
  spec.seed = 9;
  spec.train_count = 4;
  spec.test_good = 3;
  spec.test_defect = 3;
  spec.radius_min = 2.f;
  spec.radius_max = 4.f;
  return spec;
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("synthetic generation is deterministic in the spec") {
  const SynthSpec spec = small_spec();
  SynthCategory a = generate_synthetic(spec);
  SynthCategory b = generate_synthetic(spec);
  REQUIRE(a.train.size() == 4);
  REQUIRE(a.test.size() == 6);
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].image.data == b.train[i].image.data);
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    CHECK(a.test[i].image.data == b.test[i].image.data);
    CHECK(a.test[i].mask.data == b.test[i].mask.data);
  }

  SynthSpec other = spec;
  other.seed = 10;
  SynthCategory c = generate_synthetic(other);
  CHECK(c.train[0].image.data != a.train[0].image.data);
}

TEST_CASE("defective items come first and carry non-empty masks") {
  SynthCategory cat = generate_synthetic(small_spec());
  for (int i = 0; i < 3; ++i) {
    CHECK(cat.test[static_cast<size_t>(i)].defect_type == "blob");
    CHECK(cat.test[static_cast<size_t>(i)].mask.max_value() == 1.f);
  }
  for (int i = 3; i < 6; ++i) {
    CHECK(cat.test[static_cast<size_t>(i)].defect_type == "good");
    CHECK(cat.test[static_cast<size_t>(i)].mask.max_value() == 0.f);
  }
  for (const auto& item : cat.train) CHECK(item.mask.max_value() == 0.f);
}

TEST_CASE("generated pixels are 8-bit quantized and inside [0,1]") {
  SynthCategory cat = generate_synthetic(small_spec());
  for (const auto& item : cat.train)
    for (float v : item.image.data) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
      const float steps = v * 255.f;
      CHECK(std::abs(steps - std::round(steps)) < 1e-4f);
    }
}

TEST_CASE("disk_mask matches the exact inequality") {
  const int size = 15;
  const float cx = 6.3f, cy = 8.1f, r = 4.2f;
  Tensor mask = disk_mask(size, cx, cy, r);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      CHECK(mask.at2(y, x) == (d2 <= r * r ? 1.f : 0.f));
    }
}

TEST_CASE("degenerate generator specs are rejected") {
  SynthSpec spec = small_spec();
  spec.image_size = 4;  // too small for the largest defect
  CHECK_THROWS_AS(generate_synthetic(spec), UsageError);
  spec = small_spec();
  spec.train_count = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), UsageError);
  spec = small_spec();
  spec.radius_min = 5.f;
  spec.radius_max = 3.f;
  CHECK_THROWS_AS(generate_synthetic(spec), UsageError);
  spec = small_spec();
  spec.blob_count_min = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), UsageError);
}

TEST_CASE("write_category and load_category round-trip pixels exactly") {
  const fs::path root = fresh_dir("roundtrip");
  SynthCategory cat = generate_synthetic(small_spec());
  const fs::path dir = write_category(cat, root);
  CHECK(dir == root / "fixture");

  CategorySet set = load_category(root, "fixture", cat.image_size);
  REQUIRE(set.train.size() == cat.train.size());
  REQUIRE(set.test.size() == cat.test.size());

  // Train images load back bit-for-bit (quantization makes PNG lossless
  // for these values).
  for (std::size_t i = 0; i < set.train.size(); ++i) {
    Tensor img = load_image_rgb01(set.train[i], cat.image_size);
    CHECK(img.data == cat.train[i].image.data);
  }
  // Test order is (label, filename)-sorted: blob items then good items,
  // matching generation order.
  for (std::size_t i = 0; i < set.test.size(); ++i) {
    CHECK(set.test[i].defect_type == cat.test[i].defect_type);
    Tensor img = load_image_rgb01(set.test[i].image, cat.image_size);
    CHECK(img.data == cat.test[i].image.data);
    auto [tensor, mask] = load_test_pair(set.test[i], cat.image_size, NormParams{});
    CHECK(mask.data == cat.test[i].mask.data);
    CHECK(set.test[i].is_defective() == (cat.test[i].defect_type != "good"));
  }
}

TEST_CASE("layout problems surface as data errors") {
  const fs::path root = fresh_dir("layout");
  SynthCategory cat = generate_synthetic(small_spec());
  write_category(cat, root);

  CHECK_THROWS_AS(load_category(root, "missing_category", 24), DataError);

  // A defective item without its ground-truth mask is an error that names
  // the offending file.
  fs::remove(root / "fixture" / "ground_truth" / "blob" / "001_mask.png");
  CHECK_THROWS_WITH_AS(load_category(root, "fixture", 24),
                       doctest::Contains("001_mask.png"), DataError);
}

TEST_CASE("mask dimensions must match the image before resizing") {
  const fs::path root = fresh_dir("mismatch");
  SynthCategory cat = generate_synthetic(small_spec());
  write_category(cat, root);

  SynthSpec wide = small_spec();
  wide.image_size = 32;
  const fs::path other_root = fresh_dir("mismatch_other");
  write_category(generate_synthetic(wide), other_root);

  fs::copy_file(other_root / "fixture" / "ground_truth" / "blob" / "000_mask.png",
                root / "fixture" / "ground_truth" / "blob" / "000_mask.png",
                fs::copy_options::overwrite_existing);
  CategorySet set = load_category(root, "fixture", 24);
  CHECK_THROWS_AS(load_test_pair(set.test[0], 24, NormParams{}), DataError);
}

TEST_CASE("image loading resizes to the input size and masks stay binary") {
  const fs::path root = fresh_dir("resize");
  SynthSpec spec = small_spec();
  spec.image_size = 32;
  write_category(generate_synthetic(spec), root);
  CategorySet set = load_category(root, "fixture", 16);

  Tensor img = load_image_rgb01(set.train[0], 16);
  REQUIRE(img.shape == std::vector<int>{3, 16, 16});
  CHECK(img.min_value() >= 0.f);
  CHECK(img.max_value() <= 1.f);

  Tensor mask = load_mask(set.test[0].mask, 16);
  REQUIRE(mask.shape == std::vector<int>{16, 16});
  for (float v : mask.data) CHECK((v == 0.f || v == 1.f));

  CHECK_THROWS_AS(load_image_rgb01(root / "fixture" / "nope.png", 16), DataError);
}

TEST_CASE("normalize_image applies per-channel statistics") {
  Tensor rgb({3, 1, 2});
  rgb.data = {0.5f, 1.f, 0.25f, 0.75f, 0.f, 0.1f};
  NormParams norm;
  norm.mean = {0.5f, 0.25f, 0.1f};
  norm.std = {0.5f, 0.25f, 0.2f};
  Tensor out = normalize_image(rgb, norm);
  CHECK(out.at3(0, 0, 0) == doctest::Approx(0.f));
  CHECK(out.at3(0, 0, 1) == doctest::Approx(1.f));
  CHECK(out.at3(1, 0, 0) == doctest::Approx(0.f));
  CHECK(out.at3(1, 0, 1) == doctest::Approx(2.f));
  CHECK(out.at3(2, 0, 0) == doctest::Approx(-0.5f));
}

TEST_CASE("builtin texture classes are distinct and deterministic") {
  auto classes = builtin_texture_classes(32, 5);
  REQUIRE(classes.size() == 3);
  for (const auto& c : classes) CHECK(c.image_size == 32);
  CHECK(classes[0].name != classes[1].name);
  CHECK((classes[0].freq_u != classes[1].freq_u || classes[0].freq_v != classes[1].freq_v));
  auto again = builtin_texture_classes(32, 5);
  CHECK(again[0].seed == classes[0].seed);
  CHECK(again[2].seed == classes[2].seed);
}

TEST_CASE("toy pretraining needs at least two classes and reaches the accuracy floor") {
  auto classes = builtin_texture_classes(32, 6);
  std::vector<SynthSpec> one(classes.begin(), classes.begin() + 1);
  CHECK_THROWS_AS(pretrain_toy_teacher(one, 2, 6), UsageError);

  Archive archive = pretrain_toy_teacher(classes, 6, 6);
  CHECK(archive.meta.kind == "teacher");
  CHECK(archive.meta.arch_id == "minires");
  CHECK(archive.meta.input_size == 32);
  CHECK(archive.meta.extra.at("pretrain_accuracy").get<float>() >= 0.8f);
  // The classifier head is stripped: only trunk tensors remain.
  for (const auto& [name, tensor] : archive.tensors) CHECK(name.rfind("head.", 0) != 0);

  // The archive is a loadable teacher with the corpus statistics recorded.
  const fs::path file = fresh_dir("toy") / "teacher.fpwa";
  archive.save(file);
  NetworkHandle teacher = load_teacher(file, PyramidConfig{});
  CHECK(teacher.frozen);
  CHECK(teacher.arch_id == "minires");
  Tensor batch({1, 3, 32, 32});
  auto taps = extract_pyramid(teacher, batch, PyramidConfig{});
  REQUIRE(taps.size() == 3);
}

}  // TEST_SUITE
