// Acceptance gate: every release-critical behavior gets one criterion with an
// independent oracle, one PASS/FAIL/SKIP line, and a pinned tolerance. The
// process exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pyrad/archive.hpp"
#include "pyrad/backbone.hpp"
#include "pyrad/datasets.hpp"
#include "pyrad/distill.hpp"
#include "pyrad/error.hpp"
#include "pyrad/metrics.hpp"
#include "pyrad/rng.hpp"
#include "pyrad/scorer.hpp"
#include "pyrad/tensor.hpp"
#include "pyrad/trainer.hpp"

using namespace pyrad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pinned tolerances and budgets. Change these only with a written rationale.
constexpr double kAucTol = 1e-9;         // ranking metric vs pairwise oracle
constexpr double kAucBudgetSec = 10.0;   // for 1,000 instances
constexpr double kProTol = 0.01;         // region overlap vs sweep oracle
constexpr double kProBudgetSec = 30.0;   // for 100 instances
constexpr double kGradTol = 1e-4;        // analytic gradient vs central FD
constexpr double kFuseTol = 1e-9;        // fused map vs product oracle
constexpr float kDeskAuc = 0.90f;        // desk-scale image and pixel AUC
constexpr double kDeskBudgetSec = 600.0; // desk-scale wall clock
constexpr double kSeedTol = 1e-6;        // identical-seed loss reproduction

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  bool skip = false;
  std::string detail;
};

Outcome pass(std::string detail) { return {true, false, std::move(detail)}; }
Outcome fail(std::string detail) { return {false, false, std::move(detail)}; }
Outcome skip(std::string detail) { return {false, true, std::move(detail)}; }

std::string fmt(double v, const char* format = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Criterion 1: image-level ranking metric against a pairwise-counting oracle.

double pairwise_auc(const std::vector<float>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

Outcome criterion_auc() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(2, 200);
    std::vector<float> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    // Half the instances use quantized scores (heavy ties), half continuous.
    const bool quantized = trial % 2 == 0;
    const int q = rng.uniform_int(1, 8);
    for (int i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] =
          quantized ? static_cast<float>(rng.uniform_int(0, q)) / static_cast<float>(q)
                    : static_cast<float>(rng.uniform(-3.0, 3.0));
      labels[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
    }
    labels[0] = 0;
    labels[static_cast<std::size_t>(n) - 1] = 1;
    worst = std::max(worst, std::abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)));
  }
  if (worst > kAucTol)
    return fail("ranking metric off by " + fmt(worst) + " from the pairwise oracle (tol " +
                fmt(kAucTol) + ")");

  // Pooled pixel scoring must reduce to the same ranking metric, exactly.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> maps, masks;
    std::vector<float> pooled_scores;
    std::vector<int> pooled_labels;
    const int images = rng.uniform_int(1, 4);
    for (int i = 0; i < images; ++i) {
      const int h = rng.uniform_int(2, 7), w = rng.uniform_int(2, 7);
      Tensor map({h, w}), mask({h, w});
      for (std::size_t p = 0; p < map.numel(); ++p) {
        map.data[p] = static_cast<float>(rng.uniform_int(0, 5)) / 2.f;
        mask.data[p] = rng.uniform() < 0.4 ? 1.f : 0.f;
      }
      maps.push_back(std::move(map));
      masks.push_back(std::move(mask));
    }
    masks[0].data[0] = 0.f;
    masks[0].data[1] = 1.f;
    for (std::size_t i = 0; i < maps.size(); ++i)
      for (std::size_t p = 0; p < maps[i].numel(); ++p) {
        pooled_scores.push_back(maps[i].data[p]);
        pooled_labels.push_back(masks[i].data[p] > 0.5f ? 1 : 0);
      }
    if (pixel_roc_auc(maps, masks) != roc_auc(pooled_scores, pooled_labels))
      return fail("pooled pixel metric differs from the plain ranking metric");
  }

  const double sec = seconds_since(t0);
  if (sec >= kAucBudgetSec)
    return fail("took " + fmt(sec, "%.1f") + " s (budget " + fmt(kAucBudgetSec, "%.0f") + " s)");
  return pass("max |difference| " + fmt(worst) + " over 1000 instances (tol " + fmt(kAucTol) +
              "); pooled pixel metric exact on 50 instances; " + fmt(sec, "%.2f") + " s");
}

// ---------------------------------------------------------------------------
// Criterion 2: region-overlap score against an exhaustive threshold sweep.

std::vector<Tensor> flood_fill_components(const Tensor& mask) {
  const int h = mask.dim(0), w = mask.dim(1);
  std::vector<int> label(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), -1);
  std::vector<Tensor> out;
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      if (mask.at2(sy, sx) < 0.5f || label[static_cast<std::size_t>(sy) * w + sx] >= 0) continue;
      const int id = static_cast<int>(out.size());
      out.emplace_back(std::vector<int>{h, w});
      std::deque<std::pair<int, int>> queue{{sy, sx}};
      label[static_cast<std::size_t>(sy) * w + sx] = id;
      while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        out[static_cast<std::size_t>(id)].at2(y, x) = 1.f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            if (mask.at2(ny, nx) < 0.5f || label[static_cast<std::size_t>(ny) * w + nx] >= 0)
              continue;
            label[static_cast<std::size_t>(ny) * w + nx] = id;
            queue.emplace_back(ny, nx);
          }
      }
    }
  return out;
}

double sweep_pro_oracle(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks,
                        float fpr_limit) {
  std::vector<std::vector<Tensor>> components(masks.size());
  long total_components = 0, normal_total = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    components[i] = flood_fill_components(masks[i]);
    total_components += static_cast<long>(components[i].size());
    for (float v : masks[i].data) normal_total += v < 0.5f ? 1 : 0;
  }
  std::set<float> values;
  for (const auto& m : maps)
    for (float v : m.data) values.insert(v);

  std::vector<std::pair<double, double>> points{{0.0, 0.0}};
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    const float thr = *it;
    long false_pos = 0;
    double overlap_sum = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (std::size_t p = 0; p < maps[i].numel(); ++p)
        if (masks[i].data[p] < 0.5f && maps[i].data[p] >= thr) ++false_pos;
      for (const auto& comp : components[i]) {
        long inside = 0, hit = 0;
        for (std::size_t p = 0; p < comp.numel(); ++p)
          if (comp.data[p] >= 0.5f) {
            ++inside;
            if (maps[i].data[p] >= thr) ++hit;
          }
        overlap_sum += static_cast<double>(hit) / static_cast<double>(inside);
      }
    }
    points.emplace_back(static_cast<double>(false_pos) / static_cast<double>(normal_total),
                        overlap_sum / static_cast<double>(total_components));
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  double area = 0.0;
  for (std::size_t k = 1; k < points.size(); ++k) {
    auto [f0, p0] = points[k - 1];
    auto [f1, p1] = points[k];
    if (f1 <= f0) continue;
    if (f0 >= fpr_limit) break;
    if (f1 > fpr_limit) {
      const double t = (fpr_limit - f0) / (f1 - f0);
      p1 = p0 + t * (p1 - p0);
      f1 = fpr_limit;
    }
    area += 0.5 * (p0 + p1) * (f1 - f0);
  }
  return std::clamp(area / static_cast<double>(fpr_limit), 0.0, 1.0);
}

Outcome criterion_pro() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double worst_oracle = 0.0, worst_steps = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor> maps, masks;
    for (int i = 0; i < 2; ++i) {
      Tensor map({8, 8}), mask({8, 8});
      for (auto& v : map.data) v = static_cast<float>(rng.uniform());
      const int y0 = rng.uniform_int(0, 6), x0 = rng.uniform_int(0, 6);
      const int y1 = rng.uniform_int(y0, std::min(6, y0 + 3));
      const int x1 = rng.uniform_int(x0, std::min(6, x0 + 3));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) mask.at2(y, x) = 1.f;
      for (std::size_t p = 0; p < map.numel(); ++p)
        if (mask.data[p] > 0.5f) map.data[p] = std::min(1.f, map.data[p] + 0.3f);
      maps.push_back(std::move(map));
      masks.push_back(std::move(mask));
    }

    ProOptions coarse;  // fpr_limit 0.3, 200 threshold steps
    ProOptions fine;
    fine.steps = 10000;
    const double got = pro_score(maps, masks, coarse);
    worst_oracle = std::max(worst_oracle,
                            std::abs(got - sweep_pro_oracle(maps, masks, coarse.fpr_limit)));
    worst_steps = std::max(worst_steps, std::abs(got - pro_score(maps, masks, fine)));
  }
  const double sec = seconds_since(t0);
  if (worst_oracle > kProTol)
    return fail("region overlap off by " + fmt(worst_oracle) + " from the sweep oracle (tol " +
                fmt(kProTol) + ")");
  if (worst_steps > kProTol)
    return fail("200-step and 10000-step sweeps disagree by " + fmt(worst_steps) + " (tol " +
                fmt(kProTol) + ")");
  if (sec >= kProBudgetSec)
    return fail("took " + fmt(sec, "%.1f") + " s (budget " + fmt(kProBudgetSec, "%.0f") + " s)");
  return pass("max |difference| " + fmt(worst_oracle) + " vs oracle, " + fmt(worst_steps) +
              " vs 10000-step sweep, over 100 instances (tol " + fmt(kProTol) + "); " +
              fmt(sec, "%.2f") + " s");
}

// ---------------------------------------------------------------------------
// Criterion 3: matching-loss bounds and analytic gradient vs central FD.

Tensor random_features(std::vector<int> shape, Rng& rng, bool non_negative) {
  Tensor t(std::move(shape));
  for (auto& v : t.data)
    v = static_cast<float>(non_negative ? rng.uniform(0.0, 2.0) : rng.uniform(-2.0, 2.0));
  return t;
}

// Per-position norms kept away from zero so central differences of the
// normalized objective stay well conditioned.
Tensor bounded_features(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) {
    const double mag = rng.uniform(0.3, 1.2);
    v = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

Outcome criterion_gradient() {
  Rng rng(303);

  float lo_seen = 0.f, hi_seen = 0.f, hi_nonneg = 0.f;
  for (int trial = 0; trial < 300; ++trial) {
    const int c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 5);
    const bool non_negative = trial % 2 == 1;
    const Tensor f_t = random_features({c, h, w}, rng, non_negative);
    const Tensor f_s = random_features({c, h, w}, rng, non_negative);
    const Tensor grid = position_loss_map(f_t, f_s);
    for (float v : grid.data) {
      lo_seen = std::min(lo_seen, v);
      hi_seen = std::max(hi_seen, v);
      if (non_negative) hi_nonneg = std::max(hi_nonneg, v);
      if (v < 0.f || v > 2.f)
        return fail("per-position loss " + fmt(v, "%.9g") + " escapes [0, 2]");
      if (non_negative && v > 1.f)
        return fail("per-position loss " + fmt(v, "%.9g") +
                    " exceeds 1 for non-negative features");
    }
  }

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    PyramidConfig config;
    config.block_ids = {1, 2};
    const std::vector<Tensor> taps_t = {bounded_features({2, 3, 2, 2}, rng),
                                        bounded_features({2, 4, 1, 1}, rng)};
    std::vector<Tensor> taps_s = {bounded_features({2, 3, 2, 2}, rng),
                                  bounded_features({2, 4, 1, 1}, rng)};

    std::vector<Tensor> grads;
    batch_loss_and_grad(taps_t, taps_s, config, grads);

    const float h = 1e-3f;
    double err_sq = 0.0, norm_sq = 0.0;
    for (std::size_t l = 0; l < taps_s.size(); ++l)
      for (std::size_t i = 0; i < taps_s[l].numel(); ++i) {
        const float orig = taps_s[l].data[i];
        const float hi = orig + h, lo = orig - h;
        std::vector<Tensor> scratch;
        taps_s[l].data[i] = hi;
        const double up = batch_loss_and_grad(taps_t, taps_s, config, scratch);
        taps_s[l].data[i] = lo;
        const double down = batch_loss_and_grad(taps_t, taps_s, config, scratch);
        taps_s[l].data[i] = orig;
        const double fd = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
        const double g = grads[l].data[i];
        err_sq += (fd - g) * (fd - g);
        norm_sq += g * g;
      }
    worst = std::max(worst, std::sqrt(err_sq) / std::max(std::sqrt(norm_sq), 1e-30));
  }
  if (worst > kGradTol)
    return fail("gradient relative error " + fmt(worst) + " vs central differences (tol " +
                fmt(kGradTol) + ")");
  return pass("losses stayed in [" + fmt(lo_seen, "%.2f") + ", " + fmt(hi_seen, "%.6f") +
              "], non-negative features in [0, " + fmt(hi_nonneg, "%.6f") +
              "]; max gradient relative error " + fmt(worst) + " over 50 pyramids (tol " +
              fmt(kGradTol) + ")");
}

// ---------------------------------------------------------------------------
// Criterion 4: map fusion against a per-pixel product oracle.

Outcome criterion_fusion() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int levels = rng.uniform_int(2, 4);
    const int h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
    std::vector<Tensor> maps;
    for (int l = 0; l < levels; ++l) {
      Tensor m({h, w});
      for (auto& v : m.data) v = static_cast<float>(rng.uniform(0.0, 2.0));
      maps.push_back(std::move(m));
    }
    const Tensor fused = fuse(maps);
    for (std::size_t p = 0; p < fused.numel(); ++p) {
      double product = 1.0;
      for (const auto& m : maps) product *= static_cast<double>(m.data[p]);
      worst = std::max(worst,
                       std::abs(static_cast<double>(fused.data[p]) -
                                static_cast<double>(static_cast<float>(product))));
    }
  }
  if (worst > kFuseTol)
    return fail("fused map off by " + fmt(worst) + " from the product oracle (tol " +
                fmt(kFuseTol) + ")");

  // Fusing one map is the identity.
  Tensor single({5, 7});
  for (auto& v : single.data) v = static_cast<float>(rng.uniform(-1.0, 3.0));
  const Tensor same = fuse({single});
  for (std::size_t p = 0; p < single.numel(); ++p)
    if (same.data[p] != single.data[p]) return fail("single-level fusion is not the identity");

  // Upsampling a constant grid must reproduce the constant exactly.
  for (const int src : {1, 2, 5}) {
    const Tensor grid = Tensor::full({src, src}, 0.37f);
    const Tensor up = upsample_bilinear(grid, 48, 31);
    if (up.dim(0) != 48 || up.dim(1) != 31) return fail("upsampled grid has the wrong shape");
    for (float v : up.data)
      if (v != 0.37f) return fail("upsampled constant drifted to " + fmt(v, "%.9g"));
  }
  return pass("max |difference| " + fmt(worst) + " over 200 fusions (tol " + fmt(kFuseTol) +
              "); single-level identity and constant upsampling exact");
}

// ---------------------------------------------------------------------------
// Shared desk-scale fixture: a deterministic synthetic category plus a small
// pretrained teacher, reused by criteria 5 and 8.

struct DeskFixture {
  fs::path root;
  CategorySet set;
  NetworkHandle teacher;
  std::vector<Tensor> train_pool;  // all training images, loaded once
  double build_seconds = 0.0;
};

const DeskFixture& desk_fixture() {
  static DeskFixture fx = [] {
    const auto t0 = std::chrono::steady_clock::now();
    DeskFixture f;
    f.root = fs::temp_directory_path() / "pyrad_acceptance";
    fs::remove_all(f.root);
    fs::create_directories(f.root);

    SynthSpec spec;  // 64 training images, 20 good + 20 defective test, 64 px
    spec.name = "desk";
    write_category(generate_synthetic(spec), f.root / "data");

    const Archive teacher_archive =
        pretrain_toy_teacher(builtin_texture_classes(spec.image_size, 5), 12, 5);
    const fs::path teacher_file = f.root / "teacher.fpwa";
    teacher_archive.save(teacher_file);

    PyramidConfig pyramid;  // default blocks {2,3,4}
    f.teacher = load_teacher(teacher_file, pyramid);
    f.teacher.input_size = spec.image_size;
    f.set = load_category(f.root / "data", spec.name, spec.image_size);
    for (const auto& file : f.set.train)
      f.train_pool.push_back(load_image_tensor(file, spec.image_size, f.teacher.norm));
    f.build_seconds = seconds_since(t0);
    return f;
  }();
  return fx;
}

// Splits the fixture's training pool, distills a fresh student, returns the
// best checkpoint's student and the evaluation report.
std::pair<EvalReport, Checkpoint> desk_run(const PyramidConfig& pyramid, int epochs,
                                           float train_fraction) {
  const DeskFixture& fx = desk_fixture();
  TrainConfig config;
  config.lr = 0.4f;
  config.epochs = epochs;
  config.batch_size = 8;
  config.input_size = fx.set.input_size;
  config.val_fraction = 0.2f;
  config.train_fraction = train_fraction;
  config.seed = 7;

  const auto [train_idx, val_idx] = split_indices(static_cast<int>(fx.train_pool.size()),
                                                  config.val_fraction, config.train_fraction,
                                                  config.seed);
  std::vector<Tensor> train_images, val_images;
  for (int i : train_idx) train_images.push_back(fx.train_pool[static_cast<std::size_t>(i)]);
  for (int i : val_idx) val_images.push_back(fx.train_pool[static_cast<std::size_t>(i)]);

  NetworkHandle student = init_student(fx.teacher, config.seed);
  Checkpoint ck = train(fx.teacher, student, train_images, val_images, pyramid, config, nullptr);
  NetworkHandle best = ck.to_student();
  EvalReport report = evaluate_category(fx.teacher, best, fx.set, pyramid);
  return {std::move(report), std::move(ck)};
}

// ---------------------------------------------------------------------------
// Criterion 5: desk-scale end-to-end detection quality.

Outcome criterion_desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  const DeskFixture& fx = desk_fixture();
  const auto [report, ck] = desk_run(PyramidConfig{}, 30, 1.f);
  const double sec = seconds_since(t0);

  std::string summary = "image AUC " + fmt(report.image_auc, "%.4f") + ", pixel AUC " +
                        fmt(report.pixel_auc, "%.4f") + ", region overlap " +
                        fmt(report.pro, "%.4f") + " on " + std::to_string(fx.set.train.size()) +
                        "+" + std::to_string(report.test_images) + " images, 30 epochs, " +
                        fmt(sec, "%.1f") + " s";
  if (report.image_auc < kDeskAuc || report.pixel_auc < kDeskAuc)
    return fail(summary + " (needs both AUCs >= " + fmt(kDeskAuc, "%.2f") + ")");
  if (sec >= kDeskBudgetSec)
    return fail(summary + " (budget " + fmt(kDeskBudgetSec, "%.0f") + " s)");
  return pass(summary + " (thresholds " + fmt(kDeskAuc, "%.2f") + ", budget " +
              fmt(kDeskBudgetSec, "%.0f") + " s)");
}

// ---------------------------------------------------------------------------
// Criterion 6: full-scale benchmark reproduction (not run here).

Outcome criterion_full_benchmark() {
  return skip(
      "needs the full industrial-inspection dataset and converted pretrained weights; "
      "follow the \"Full-scale benchmark\" recipe in README.md and compare against the "
      "published operating points");
}

// ---------------------------------------------------------------------------
// Criterion 7: training protocol invariants.

Outcome criterion_protocol() {
  const ArchSpec* arch = find_arch("minires");
  if (arch == nullptr) return fail("reference architecture missing");

  auto fresh_teacher = [&] {
    auto net = std::make_shared<Network>(*arch);
    net->init_params(11);
    NetworkHandle h;
    h.arch_id = "minires";
    h.input_size = 32;
    h.frozen = true;
    h.source_fingerprint = "protocol-fixture";
    h.net = std::move(net);
    return h;
  };

  Rng rng(707);
  std::vector<Tensor> pool;
  for (int i = 0; i < 12; ++i) {
    Tensor t({3, 32, 32});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    pool.push_back(std::move(t));
  }

  TrainConfig config;
  config.lr = 0.2f;
  config.epochs = 5;
  config.batch_size = 4;
  config.input_size = 32;
  config.seed = 3;
  PyramidConfig pyramid;

  auto one_run = [&](NetworkHandle& teacher) {
    const auto [train_idx, val_idx] =
        split_indices(static_cast<int>(pool.size()), config.val_fraction, config.train_fraction,
                      config.seed);
    std::vector<Tensor> train_images, val_images;
    for (int i : train_idx) train_images.push_back(pool[static_cast<std::size_t>(i)]);
    for (int i : val_idx) val_images.push_back(pool[static_cast<std::size_t>(i)]);
    NetworkHandle student = init_student(teacher, config.seed);
    return train(teacher, student, train_images, val_images, pyramid, config, nullptr);
  };

  NetworkHandle teacher = fresh_teacher();
  const uint64_t checksum_before = teacher.checksum();
  const Checkpoint first = one_run(teacher);
  if (teacher.checksum() != checksum_before)
    return fail("training mutated the frozen teacher (checksum changed)");

  if (first.log.size() != 5) return fail("expected one log record per epoch");
  float min_val = std::numeric_limits<float>::infinity();
  for (const auto& rec : first.log) min_val = std::min(min_val, rec.val_loss);
  if (first.val_loss != min_val)
    return fail("checkpoint validation loss " + fmt(first.val_loss, "%.8f") +
                " is not the minimum over epochs (" + fmt(min_val, "%.8f") + ")");

  // Identical seeds must reproduce the split and the loss trajectory.
  const auto split_a = split_indices(12, 0.2f, 1.f, 3);
  const auto split_b = split_indices(12, 0.2f, 1.f, 3);
  if (split_a != split_b) return fail("identical seeds produced different splits");

  const Checkpoint second = one_run(teacher);
  double worst = std::abs(static_cast<double>(first.val_loss) - second.val_loss);
  for (std::size_t i = 0; i < first.log.size(); ++i)
    worst = std::max({worst,
                      std::abs(static_cast<double>(first.log[i].val_loss) - second.log[i].val_loss),
                      std::abs(static_cast<double>(first.log[i].train_loss) -
                               second.log[i].train_loss)});
  if (worst > kSeedTol)
    return fail("identical seeds diverged by " + fmt(worst) + " in loss (tol " + fmt(kSeedTol) +
                ")");
  return pass("frozen teacher checksum stable; best checkpoint at the epoch-log minimum; "
              "identical seeds agree to " +
              fmt(worst) + " (tol " + fmt(kSeedTol) + ")");
}

// ---------------------------------------------------------------------------
// Criterion 8: ablation plumbing and train-fraction direction.

Outcome criterion_ablation() {
  const DeskFixture& fx = desk_fixture();
  const std::vector<std::vector<int>> grids = {{2}, {3}, {4}, {2, 3}, {2, 3, 4}};

  json rows = json::array();
  for (const auto& blocks : grids) {
    PyramidConfig pyramid;
    pyramid.block_ids = blocks;
    const auto [report, ck] = desk_run(pyramid, 5, 1.f);
    if (!(report.image_auc >= 0.f && report.image_auc <= 1.f) ||
        !(report.pixel_auc >= 0.f && report.pixel_auc <= 1.f) ||
        !(report.pro >= 0.f && report.pro <= 1.f))
      return fail("block-set run produced out-of-range metrics");
    rows.push_back({{"blocks", blocks},
                    {"image_auc", report.image_auc},
                    {"pixel_auc", report.pixel_auc},
                    {"pro", report.pro},
                    {"val_loss", ck.val_loss}});
  }

  const auto [full, full_ck] = desk_run(PyramidConfig{}, 10, 1.f);
  const auto [small, small_ck] = desk_run(PyramidConfig{}, 10, 0.05f);
  rows.push_back({{"train_fraction", 1.0}, {"image_auc", full.image_auc}});
  rows.push_back({{"train_fraction", 0.05}, {"image_auc", small.image_auc}});

  const fs::path report_file = fx.root / "ablation_report.json";
  std::ofstream(report_file) << rows.dump(2) << "\n";

  if (full.image_auc < small.image_auc)
    return fail("full training data scored image AUC " + fmt(full.image_auc, "%.4f") +
                " below the 5% subset's " + fmt(small.image_auc, "%.4f"));
  return pass(std::to_string(grids.size()) + " block-set runs and 2 train-fraction runs wrote " +
              report_file.string() + "; image AUC " + fmt(full.image_auc, "%.4f") +
              " (full) >= " + fmt(small.image_auc, "%.4f") + " (5% subset)");
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* label;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> entries = {
      {1, "image-score ranking metric vs pairwise oracle", criterion_auc},
      {2, "region-overlap score vs threshold-sweep oracle", criterion_pro},
      {3, "matching-loss bounds and gradient vs finite differences", criterion_gradient},
      {4, "map fusion vs per-pixel product oracle", criterion_fusion},
      {5, "desk-scale end-to-end detection quality", criterion_desk_scale},
      {6, "full-scale benchmark reproduction", criterion_full_benchmark},
      {7, "training protocol invariants", criterion_protocol},
      {8, "ablation plumbing and train-fraction direction", criterion_ablation},
  };

  bool any_fail = false;
  for (const auto& entry : entries) {
    Outcome outcome;
    try {
      outcome = entry.run();
    } catch (const std::exception& e) {
      outcome = fail(std::string("unexpected exception: ") + e.what());
    }
    const char* status = outcome.skip ? "SKIP" : outcome.pass ? "PASS" : "FAIL";
    std::printf("CRITERION %d: %s - %s: %s\n", entry.id, status, entry.label,
                outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass && !outcome.skip) any_fail = true;
  }
  return any_fail ? 1 : 0;
}
