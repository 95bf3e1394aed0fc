#include "pyrad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pyrad/error.hpp"

namespace pyrad {

namespace {

void check_binary_pair(const Tensor& map, const Tensor& mask) {
  if (!map.same_shape(mask))
    throw DimensionError("map/mask shapes differ: " + map.shape_str() + " vs " +
                         mask.shape_str());
  for (float v : mask.data)
    if (v != 0.f && v != 1.f) throw UsageError("ground-truth mask is not binary");
}

// Union-find with path halving.
struct UnionFind {
  std::vector<int> parent;

  explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
  }
};

// Component id per pixel (-1 = background), ids 0..count-1.
std::pair<std::vector<int>, int> label_components(const Tensor& mask) {
  const int h = mask.dim(0), w = mask.dim(1);
  UnionFind uf(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.at2(y, x) == 0.f) continue;
      const int p = y * w + x;
      // Link to already-visited 8-neighbours (previous row + left).
      if (x > 0 && mask.at2(y, x - 1) != 0.f) uf.unite(p, p - 1);
      if (y > 0) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          if (nx >= 0 && nx < w && mask.at2(y - 1, nx) != 0.f) uf.unite(p, p - w + dx);
        }
      }
    }
  std::vector<int> labels(static_cast<size_t>(h * w), -1);
  std::vector<int> remap(static_cast<size_t>(h * w), -1);
  int count = 0;
  for (int p = 0; p < h * w; ++p) {
    if (mask.data[static_cast<size_t>(p)] == 0.f) continue;
    const int root = uf.find(p);
    if (remap[static_cast<size_t>(root)] < 0) remap[static_cast<size_t>(root)] = count++;
    labels[static_cast<size_t>(p)] = remap[static_cast<size_t>(root)];
  }
  return {std::move(labels), count};
}

}  // namespace

double roc_auc(const std::vector<float>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw UsageError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score in roc_auc");
    (labels[i] == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0)
    throw MetricError("roc_auc undefined: need both classes, got " + std::to_string(pos) +
                      " positive / " + std::to_string(neg) + " negative");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tied groups; AUC from the positive rank sum.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<RocPoint> roc_curve(const std::vector<float>& scores, const std::vector<int>& labels) {
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw MetricError("roc_curve undefined: need both classes");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> out{{0.f, 0.f}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) (labels[idx[k]] == 1 ? tp : fp) += 1;
    out.push_back({static_cast<float>(static_cast<double>(fp) / static_cast<double>(neg)),
                   static_cast<float>(static_cast<double>(tp) / static_cast<double>(pos))});
    i = j + 1;
  }
  return out;
}

double pixel_roc_auc(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks) {
  if (maps.size() != masks.size() || maps.empty())
    throw UsageError("pixel_roc_auc needs equally many maps and masks");
  std::vector<float> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    check_binary_pair(maps[i], masks[i]);
    for (std::size_t p = 0; p < maps[i].numel(); ++p) {
      scores.push_back(maps[i].data[p]);
      labels.push_back(masks[i].data[p] != 0.f ? 1 : 0);
    }
  }
  return roc_auc(scores, labels);
}

std::vector<Tensor> connected_components(const Tensor& mask) {
  if (mask.ndim() != 2)
    throw DimensionError("connected_components expects [H,W], got " + mask.shape_str());
  auto [labels, count] = label_components(mask);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(count));
  for (int c = 0; c < count; ++c) out.emplace_back(mask.shape);
  for (std::size_t p = 0; p < labels.size(); ++p)
    if (labels[p] >= 0) out[static_cast<size_t>(labels[p])].data[p] = 1.f;
  return out;
}

std::vector<ProPoint> pro_curve(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks,
                                const ProOptions& options) {
  if (maps.size() != masks.size() || maps.empty())
    throw UsageError("pro_curve needs equally many maps and masks");
  if (!(options.fpr_limit > 0.f && options.fpr_limit <= 1.f))
    throw UsageError("fpr limit must lie in (0, 1]");
  if (options.steps < 2) throw UsageError("threshold sweep needs at least 2 steps");

  // Ground-truth components, flattened as (image, pixel list).
  struct Component {
    std::size_t image;
    std::vector<int> pixels;
  };
  std::vector<Component> components;
  std::vector<std::size_t> normal_count(maps.size(), 0);
  std::size_t total_normal = 0, total_pixels = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    check_binary_pair(maps[i], masks[i]);
    auto [labels, count] = label_components(masks[i]);
    const std::size_t first = components.size();
    for (int c = 0; c < count; ++c) components.push_back({i, {}});
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (labels[p] >= 0)
        components[first + static_cast<size_t>(labels[p])].pixels.push_back(static_cast<int>(p));
      else
        ++normal_count[i];
    }
    total_normal += normal_count[i];
    total_pixels += masks[i].numel();
  }
  if (components.empty())
    throw MetricError("pro undefined: ground truth contains no anomalous regions");
  if (total_normal == 0) throw MetricError("pro undefined: ground truth has no normal pixels");

  // Quantile thresholds over the pooled score distribution, descending.
  std::vector<float> pooled;
  pooled.reserve(total_pixels);
  for (const Tensor& m : maps) pooled.insert(pooled.end(), m.data.begin(), m.data.end());
  std::sort(pooled.begin(), pooled.end());
  std::vector<float> thresholds;
  for (int s = 0; s < options.steps; ++s) {
    const double q = static_cast<double>(s) / static_cast<double>(options.steps - 1);
    const std::size_t at = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(pooled.size() - 1)));
    thresholds.push_back(pooled[at]);
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<float>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<ProPoint> out{{0.f, 0.f}};  // virtual start: threshold above max
  for (float t : thresholds) {
    double overlap_sum = 0.0;
    for (const Component& comp : components) {
      std::size_t hit = 0;
      const Tensor& map = maps[comp.image];
      for (int p : comp.pixels)
        if (map.data[static_cast<size_t>(p)] >= t) ++hit;
      overlap_sum += static_cast<double>(hit) / static_cast<double>(comp.pixels.size());
    }
    const double pro = overlap_sum / static_cast<double>(components.size());

    double fpr;
    if (options.per_image_fpr) {
      double acc = 0.0;
      int images = 0;
      for (std::size_t i = 0; i < maps.size(); ++i) {
        if (normal_count[i] == 0) continue;
        std::size_t fp = 0;
        for (std::size_t p = 0; p < maps[i].numel(); ++p)
          if (masks[i].data[p] == 0.f && maps[i].data[p] >= t) ++fp;
        acc += static_cast<double>(fp) / static_cast<double>(normal_count[i]);
        ++images;
      }
      fpr = acc / static_cast<double>(images);
    } else {
      std::size_t fp = 0;
      for (std::size_t i = 0; i < maps.size(); ++i)
        for (std::size_t p = 0; p < maps[i].numel(); ++p)
          if (masks[i].data[p] == 0.f && maps[i].data[p] >= t) ++fp;
      fpr = static_cast<double>(fp) / static_cast<double>(total_normal);
    }
    out.push_back({static_cast<float>(fpr), static_cast<float>(pro)});
  }
  return out;
}

float pro_score(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks,
                const ProOptions& options) {
  const std::vector<ProPoint> curve = pro_curve(maps, masks, options);
  const double limit = options.fpr_limit;
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double f0 = curve[i - 1].fpr, p0 = curve[i - 1].pro;
    const double f1 = curve[i].fpr, p1 = curve[i].pro;
    if (f1 <= f0) continue;  // vertical step or duplicate sample
    if (f1 <= limit) {
      area += (f1 - f0) * 0.5 * (p0 + p1);
    } else {
      // Interpolate the curve at the integration boundary.
      const double p_at = p0 + (p1 - p0) * (limit - f0) / (f1 - f0);
      area += (limit - f0) * 0.5 * (p0 + p_at);
      break;
    }
  }
  return std::clamp(static_cast<float>(area / limit), 0.f, 1.f);
}

EvalReport evaluate_category(const NetworkHandle& teacher, const NetworkHandle& student,
                             const CategorySet& set, const PyramidConfig& config,
                             const ProOptions& pro_options, const ScoreOptions& score_options,
                             int batch_size) {
  if (set.test.empty()) throw DataError("category '" + set.name + "' has no test images");
  if (batch_size < 1) throw UsageError("batch size must be positive");

  std::vector<float> scores;
  std::vector<int> labels;
  std::vector<Tensor> maps, masks;
  for (std::size_t begin = 0; begin < set.test.size();
       begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(set.test.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> images;
    for (std::size_t i = begin; i < end; ++i) {
      auto [image, mask] = load_test_pair(set.test[i], set.input_size, teacher.norm);
      images.push_back(std::move(image));
      masks.push_back(std::move(mask));
      labels.push_back(set.test[i].is_defective() ? 1 : 0);
    }
    std::vector<int> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    const Tensor batch = stack_images(images, order, 0, static_cast<int>(images.size()));
    for (auto& [map, score] : score_batch(teacher, student, batch, config, score_options)) {
      maps.push_back(std::move(map.scores));
      scores.push_back(score);
    }
  }

  EvalReport report;
  report.category = set.name;
  report.test_images = static_cast<int>(set.test.size());
  report.defective_images = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  report.image_auc = static_cast<float>(roc_auc(scores, labels));
  report.image_roc = roc_curve(scores, labels);
  report.pixel_auc = static_cast<float>(pixel_roc_auc(maps, masks));
  report.pro_points = pro_curve(maps, masks, pro_options);
  report.pro = pro_score(maps, masks, pro_options);
  return report;
}

EvalReport aggregate_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw UsageError("no reports to aggregate");
  EvalReport mean;
  mean.category = "mean";
  for (const EvalReport& r : reports) {
    mean.image_auc += r.image_auc;
    mean.pixel_auc += r.pixel_auc;
    mean.pro += r.pro;
    mean.test_images += r.test_images;
    mean.defective_images += r.defective_images;
  }
  const float n = static_cast<float>(reports.size());
  mean.image_auc /= n;
  mean.pixel_auc /= n;
  mean.pro /= n;
  return mean;
}

}  // namespace pyrad
