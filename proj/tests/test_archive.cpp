#include "pyrad/archive.hpp"

#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pyrad/error.hpp"
#include "pyrad/rng.hpp"

using namespace pyrad;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  fs::path dir = fs::temp_directory_path() / "pyrad_archive_tests";
  fs::create_directories(dir);
  return dir / name;
}

Archive sample_archive() {
  Archive a;
  a.meta.kind = "teacher";
  a.meta.arch_id = "minires";
  a.meta.input_size = 64;
  a.meta.norm.mean = {0.1f, 0.2f, 0.3f};
  a.meta.norm.std = {0.4f, 0.5f, 0.6f};
  a.meta.extra = {{"note", "fixture"}, {"value", 3}};

  Rng rng(11);
  Tensor w({4, 3, 3, 3});
  for (auto& v : w.data) v = static_cast<float>(rng.normal());
  Tensor b({4});
  for (auto& v : b.data) v = static_cast<float>(rng.uniform());
  a.tensors.emplace_back("g1.conv.w", std::move(w));
  a.tensors.emplace_back("g1.conv.b", std::move(b));
  return a;
}

}  // namespace

TEST_SUITE("archive") {

TEST_CASE("save/load round-trips meta and tensors bit-exactly") {
  const Archive a = sample_archive();
  const fs::path file = temp_file("roundtrip.fpwa");
  a.save(file);
  const Archive b = Archive::load(file);

  CHECK(b.meta.kind == a.meta.kind);
  CHECK(b.meta.arch_id == a.meta.arch_id);
  CHECK(b.meta.input_size == a.meta.input_size);
  CHECK(b.meta.norm.mean == a.meta.norm.mean);
  CHECK(b.meta.norm.std == a.meta.norm.std);
  CHECK(b.meta.extra == a.meta.extra);
  REQUIRE(b.tensors.size() == a.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    CHECK(b.tensors[i].first == a.tensors[i].first);
    CHECK(b.tensors[i].second.shape == a.tensors[i].second.shape);
    CHECK(b.tensors[i].second.data == a.tensors[i].second.data);  // bit-exact
  }
}

TEST_CASE("find locates tensors by name") {
  const Archive a = sample_archive();
  REQUIRE(a.find("g1.conv.b") != nullptr);
  CHECK(a.find("g1.conv.b")->shape == std::vector<int>{4});
  CHECK(a.find("missing") == nullptr);
}

TEST_CASE("a truncated file fails to load with a clear error") {
  const Archive a = sample_archive();
  const fs::path file = temp_file("truncated.fpwa");
  a.save(file);
  const auto full = fs::file_size(file);
  fs::resize_file(file, full - 16);  // cuts into the last tensor payload
  CHECK_THROWS_AS(Archive::load(file), LoadError);
}

TEST_CASE("garbage bytes are rejected") {
  const fs::path file = temp_file("garbage.fpwa");
  std::ofstream(file, std::ios::binary) << "not an archive at all";
  CHECK_THROWS_AS(Archive::load(file), LoadError);
  CHECK_THROWS_AS(Archive::load(temp_file("missing_file.fpwa")), LoadError);
}

TEST_CASE("fingerprint is stable per content and sensitive to changes") {
  Archive a = sample_archive();
  const fs::path f1 = temp_file("fp1.fpwa");
  const fs::path f2 = temp_file("fp2.fpwa");
  a.save(f1);
  a.save(f2);
  CHECK(Archive::fingerprint(f1) == Archive::fingerprint(f2));

  a.tensors[0].second.data[0] += 1.f;
  a.save(f2);
  CHECK(Archive::fingerprint(f1) != Archive::fingerprint(f2));
}

}  // TEST_SUITE
