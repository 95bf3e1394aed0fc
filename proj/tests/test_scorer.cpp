#include "pyrad/scorer.hpp"

#include "doctest.h"

#include <cmath>
#include <memory>

#include "pyrad/backbone.hpp"
#include "pyrad/distill.hpp"
#include "pyrad/error.hpp"
#include "pyrad/rng.hpp"

using namespace pyrad;

namespace {

// Independent reference for half-pixel-center bilinear interpolation.
Tensor reference_upsample(const Tensor& src, int th, int tw) {
  const int sh = src.dim(0), sw = src.dim(1);
  Tensor out({th, tw});
  for (int ty = 0; ty < th; ++ty) {
    double sy = (ty + 0.5) * static_cast<double>(sh) / th - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, sh - 1);
    const double fy = sy - y0;
    for (int tx = 0; tx < tw; ++tx) {
      double sx = (tx + 0.5) * static_cast<double>(sw) / tw - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, sw - 1);
      const double fx = sx - x0;
      const double top = src.at2(y0, x0) + fx * (src.at2(y0, x1) - src.at2(y0, x0));
      const double bot = src.at2(y1, x0) + fx * (src.at2(y1, x1) - src.at2(y1, x0));
      out.at2(ty, tx) = static_cast<float>(top + fy * (bot - top));
    }
  }
  return out;
}

NetworkHandle make_net(const char* arch, int input_size, uint64_t seed, bool frozen) {
  const ArchSpec* spec = find_arch(arch);
  REQUIRE(spec != nullptr);
  auto net = std::make_shared<Network>(*spec);
  net->init_params(seed);
  NetworkHandle h;
  h.arch_id = arch;
  h.input_size = input_size;
  h.frozen = frozen;
  h.net = std::move(net);
  return h;
}

}  // namespace

TEST_SUITE("scorer") {

TEST_CASE("upsample reproduces the textbook 2x2 -> 4x4 expansion") {
  Tensor src({2, 2});
  src.data = {0.f, 1.f, 2.f, 3.f};
  Tensor up = upsample_bilinear(src, 4, 4);
  REQUIRE(up.shape == std::vector<int>{4, 4});
  // Corners clamp to the nearest source sample; interior positions mix with
  // fraction 1/4 and 3/4.
  CHECK(up.at2(0, 0) == doctest::Approx(0.f));
  CHECK(up.at2(0, 3) == doctest::Approx(1.f));
  CHECK(up.at2(3, 0) == doctest::Approx(2.f));
  CHECK(up.at2(3, 3) == doctest::Approx(3.f));
  CHECK(up.at2(1, 1) == doctest::Approx(0.75f));
  CHECK(up.at2(2, 2) == doctest::Approx(2.25f));
}

TEST_CASE("upsample matches the reference on assorted size pairs") {
  Rng rng(31);
  const int cases[][4] = {{2, 2, 5, 5}, {3, 4, 7, 9}, {1, 3, 4, 3}, {5, 5, 16, 16}, {4, 1, 8, 2}};
  for (const auto& c : cases) {
    Tensor src({c[0], c[1]});
    for (auto& v : src.data) v = static_cast<float>(rng.normal());
    Tensor got = upsample_bilinear(src, c[2], c[3]);
    Tensor want = reference_upsample(src, c[2], c[3]);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.numel(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("upsample keeps constants exactly constant and respects bounds") {
  Tensor src({3, 3}, 0.37f);
  Tensor up = upsample_bilinear(src, 11, 17);
  for (float v : up.data) CHECK(v == 0.37f);  // exact, not approximate

  Rng rng(32);
  Tensor r({4, 4});
  for (auto& v : r.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  Tensor big = upsample_bilinear(r, 13, 9);
  CHECK(big.min_value() >= r.min_value());
  CHECK(big.max_value() <= r.max_value());
}

TEST_CASE("upsample identity and error paths") {
  Tensor src({3, 4});
  for (std::size_t i = 0; i < src.numel(); ++i) src.data[i] = static_cast<float>(i);
  Tensor same = upsample_bilinear(src, 3, 4);
  CHECK(same.data == src.data);

  CHECK_THROWS_AS(upsample_bilinear(src, 2, 8), UsageError);   // downscale
  CHECK_THROWS_AS(upsample_bilinear(src, 8, 3), UsageError);   // one axis shrinks
  Tensor cube({2, 2, 2});
  CHECK_THROWS_AS(upsample_bilinear(cube, 4, 4), DimensionError);
}

TEST_CASE("fuse multiplies grids element-wise") {
  Tensor a({2, 2}), b({2, 2}), c({2, 2});
  a.data = {1.f, 2.f, 3.f, 4.f};
  b.data = {0.5f, 0.5f, 2.f, 0.f};
  c.data = {1.f, 3.f, 1.f, 10.f};
  Tensor out = fuse({a, b, c});
  CHECK(out.data[0] == doctest::Approx(0.5f));
  CHECK(out.data[1] == doctest::Approx(3.f));
  CHECK(out.data[2] == doctest::Approx(6.f));
  CHECK(out.data[3] == doctest::Approx(0.f));  // one zero level vetoes the pixel

  // Single-level fusion is the identity.
  Tensor one = fuse({a});
  CHECK(one.data == a.data);

  CHECK_THROWS_AS(fuse({}), UsageError);
  Tensor mism({2, 3});
  CHECK_THROWS_AS(fuse({a, mism}), DimensionError);
}

TEST_CASE("level_map equals the per-position distillation loss grid") {
  Rng rng(33);
  Tensor t({6, 3, 3}), s({6, 3, 3});
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  for (auto& v : s.data) v = static_cast<float>(rng.normal());
  Tensor a = level_map(t, s);
  Tensor b = position_loss_map(t, s);
  CHECK(a.data == b.data);
}

TEST_CASE("score_image composes extraction, level maps, upsampling and fusion") {
  NetworkHandle teacher = make_net("minires", 32, 1, true);
  NetworkHandle student = make_net("minires", 32, 2, false);
  PyramidConfig cfg;  // blocks 2,3,4

  Rng rng(34);
  Tensor image({3, 32, 32});
  for (auto& v : image.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  ScoreOptions opt;
  opt.keep_level_maps = true;
  auto [map, score] = score_image(teacher, student, image, cfg, opt);
  REQUIRE(map.scores.shape == std::vector<int>{32, 32});
  REQUIRE(map.per_level.size() == 3);
  CHECK(score == map.scores.max_value());
  CHECK(map.scores.min_value() >= 0.f);

  // Manual pipeline, reusing the public pieces.
  Tensor batch = stack_images({image}, {0}, 0, 1);
  std::vector<Tensor> pt = extract_pyramid(teacher, batch, cfg);
  std::vector<Tensor> ps = extract_pyramid(student, batch, cfg);
  std::vector<Tensor> ups;
  for (std::size_t l = 0; l < pt.size(); ++l) {
    Tensor lm = level_map(image_slice(pt[l], 0), image_slice(ps[l], 0));
    CHECK(map.per_level[l].same_shape(map.scores));
    ups.push_back(upsample_bilinear(lm, 32, 32));
  }
  Tensor fused = fuse(ups);
  REQUIRE(fused.numel() == map.scores.numel());
  for (std::size_t i = 0; i < fused.numel(); ++i)
    CHECK(fused.data[i] == doctest::Approx(map.scores.data[i]).epsilon(1e-6));
}

TEST_CASE("a student identical to the teacher scores (near) zero everywhere") {
  NetworkHandle teacher = make_net("minires", 32, 5, true);
  NetworkHandle student = teacher;  // same underlying network
  student.frozen = false;

  Rng rng(35);
  Tensor image({3, 32, 32});
  for (auto& v : image.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto [map, score] = score_image(teacher, student, image, {});
  CHECK(score == doctest::Approx(0.f).epsilon(1e-9));
  CHECK(map.scores.max_value() <= 1e-9f);
}

TEST_CASE("score_batch agrees with per-image scoring") {
  NetworkHandle teacher = make_net("minires", 32, 7, true);
  NetworkHandle student = make_net("minires", 32, 8, false);
  Rng rng(36);
  std::vector<Tensor> images;
  for (int k = 0; k < 3; ++k) {
    Tensor im({3, 32, 32});
    for (auto& v : im.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    images.push_back(std::move(im));
  }
  Tensor batch = stack_images(images, {0, 1, 2}, 0, 3);
  auto batched = score_batch(teacher, student, batch, {});
  REQUIRE(batched.size() == 3);
  for (int k = 0; k < 3; ++k) {
    auto [map, score] = score_image(teacher, student, images[static_cast<size_t>(k)], {});
    CHECK(batched[static_cast<size_t>(k)].second == doctest::Approx(score).epsilon(1e-6));
    const Tensor& a = batched[static_cast<size_t>(k)].first.scores;
    for (std::size_t i = 0; i < a.numel(); ++i)
      CHECK(a.data[i] == doctest::Approx(map.scores.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("smoothing keeps shape and value range") {
  NetworkHandle teacher = make_net("minires", 32, 9, true);
  NetworkHandle student = make_net("minires", 32, 10, false);
  Rng rng(37);
  Tensor image({3, 32, 32});
  for (auto& v : image.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  ScoreOptions smooth;
  smooth.smooth_sigma = 1.5f;
  auto [map, score] = score_image(teacher, student, image, {}, smooth);
  auto [raw, raw_score] = score_image(teacher, student, image, {});
  CHECK(map.scores.same_shape(raw.scores));
  CHECK(map.scores.min_value() >= 0.f);
  CHECK(map.scores.max_value() <= raw.scores.max_value() + 1e-6f);
  CHECK(score == map.scores.max_value());
}

TEST_CASE("wrong input sizes and mismatched architectures are rejected") {
  NetworkHandle teacher = make_net("minires", 32, 11, true);
  NetworkHandle student = make_net("minires", 32, 12, false);
  Tensor small({3, 16, 16});
  CHECK_THROWS_AS(score_image(teacher, student, small, {}), DimensionError);

  NetworkHandle other = make_net("resnet18", 32, 13, false);
  Tensor image({3, 32, 32});
  CHECK_THROWS_AS(score_image(teacher, other, image, {}), ConfigError);
}

}  // TEST_SUITE
