#include "pyrad/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "pyrad/backbone.hpp"
#include "pyrad/error.hpp"
#include "pyrad/rng.hpp"

namespace fs = std::filesystem;

namespace pyrad {

namespace {

constexpr float kPi = 3.14159265358979323846f;

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
         ext == ".tiff";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

cv::Mat read_color(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw DataError("cannot read image: " + file.string());
  return m;
}

cv::Mat read_gray(const fs::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DataError("cannot read mask: " + file.string());
  return m;
}

// BGR 8-bit Mat -> RGB [3,H,W] in [0,1].
Tensor mat_to_rgb01(const cv::Mat& m) {
  Tensor t({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      t.at3(0, y, x) = static_cast<float>(row[x][2]) / 255.f;
      t.at3(1, y, x) = static_cast<float>(row[x][1]) / 255.f;
      t.at3(2, y, x) = static_cast<float>(row[x][0]) / 255.f;
    }
  }
  return t;
}

cv::Mat resized(const cv::Mat& m, int size, int interpolation) {
  if (m.rows == size && m.cols == size) return m;
  cv::Mat out;
  cv::resize(m, out, cv::Size(size, size), 0, 0, interpolation);
  return out;
}

Tensor mask_from_gray(const cv::Mat& m) {
  Tensor t({m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) t.at2(y, x) = (static_cast<float>(row[x]) / 255.f >= 0.5f) ? 1.f : 0.f;
  }
  return t;
}

float quantize_u8(float v) {
  return std::round(std::clamp(v, 0.f, 1.f) * 255.f) / 255.f;
}

void validate_spec(const SynthSpec& s) {
  if (s.image_size < 8) throw UsageError("synthetic image size must be at least 8");
  if (s.train_count < 1) throw UsageError("synthetic spec needs at least 1 training image");
  if (s.test_good + s.test_defect < 1) throw UsageError("synthetic spec needs at least 1 test image");
  if (s.blob_count_min < 1 || s.blob_count_max < s.blob_count_min)
    throw UsageError("invalid blob count range");
  if (s.radius_min <= 0.f || s.radius_max < s.radius_min)
    throw UsageError("invalid blob radius range");
  if (2.f * s.radius_max + 2.f > static_cast<float>(s.image_size))
    throw UsageError("blob radius too large for the image size");
  if (s.pattern_amp < 0.f || s.noise_amp < 0.f || s.intensity_delta <= 0.f)
    throw UsageError("texture amplitudes must be non-negative and defect delta positive");
}

// Unquantized background for one image; the per-image seed drives phase
// jitter and the pixel noise stream.
Tensor synth_background(const SynthSpec& spec, uint64_t image_seed) {
  const int S = spec.image_size;
  Rng rng(image_seed);
  const float phase_u = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
  const float phase_v = static_cast<float>(rng.uniform(0.0, 2.0 * kPi));
  const float ca = std::cos(spec.angle), sa = std::sin(spec.angle);
  Tensor img({3, S, S});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        float v = 0.5f;
        if (!spec.noise_only) {
          const float u = (static_cast<float>(x) * ca + static_cast<float>(y) * sa) / S;
          const float w = (-static_cast<float>(x) * sa + static_cast<float>(y) * ca) / S;
          v += spec.pattern_amp *
               std::sin(2.f * kPi * spec.freq_u * u + phase_u + 0.9f * static_cast<float>(c)) *
               std::sin(2.f * kPi * spec.freq_v * w + phase_v + 0.4f * static_cast<float>(c));
        }
        v += static_cast<float>(rng.uniform(-spec.noise_amp, spec.noise_amp));
        img.at3(c, y, x) = v;
      }
  return img;
}

void quantize_image(Tensor& img) {
  for (float& v : img.data) v = quantize_u8(v);
}

SynthImage make_good(const SynthSpec& spec, uint64_t image_seed, const std::string& label) {
  SynthImage out;
  out.image = synth_background(spec, image_seed);
  quantize_image(out.image);
  out.mask = Tensor({spec.image_size, spec.image_size});
  out.defect_type = label;
  return out;
}

SynthImage make_defective(const SynthSpec& spec, uint64_t image_seed) {
  SynthImage out;
  out.image = synth_background(spec, image_seed);
  out.mask = Tensor({spec.image_size, spec.image_size});
  out.defect_type = "blob";
  Rng rng(mix_seed(image_seed, 0xD));
  const int count = rng.uniform_int(spec.blob_count_min, spec.blob_count_max);
  const int S = spec.image_size;
  for (int b = 0; b < count; ++b) {
    const float r = static_cast<float>(rng.uniform(spec.radius_min, spec.radius_max));
    const float cx = static_cast<float>(rng.uniform(r, static_cast<float>(S - 1) - r));
    const float cy = static_cast<float>(rng.uniform(r, static_cast<float>(S - 1) - r));
    const float delta = rng.uniform() < 0.5 ? spec.intensity_delta : -spec.intensity_delta;
    const Tensor disk = disk_mask(S, cx, cy, r);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        if (disk.at2(y, x) > 0.f) {
          out.mask.at2(y, x) = 1.f;
          for (int c = 0; c < 3; ++c) out.image.at3(c, y, x) += delta;
        }
  }
  quantize_image(out.image);
  return out;
}

void write_png_rgb(const fs::path& file, const Tensor& img) {
  const int h = img.dim(1), w = img.dim(2);
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      row[x][2] = static_cast<uint8_t>(std::lround(img.at3(0, y, x) * 255.f));
      row[x][1] = static_cast<uint8_t>(std::lround(img.at3(1, y, x) * 255.f));
      row[x][0] = static_cast<uint8_t>(std::lround(img.at3(2, y, x) * 255.f));
    }
  }
  if (!cv::imwrite(file.string(), m)) throw IoError("cannot write image: " + file.string());
}

void write_png_mask(const fs::path& file, const Tensor& mask) {
  const int h = mask.dim(0), w = mask.dim(1);
  cv::Mat m(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y) {
    uint8_t* row = m.ptr<uint8_t>(y);
    for (int x = 0; x < w; ++x) row[x] = mask.at2(y, x) > 0.f ? 255 : 0;
  }
  if (!cv::imwrite(file.string(), m)) throw IoError("cannot write mask: " + file.string());
}

std::string padded(int i) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

// Row-wise softmax cross-entropy; fills dlogits with d(mean loss)/dlogits.
double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor& dlogits) {
  const int n = logits.dim(0), k = logits.dim(1);
  dlogits = Tensor({n, k});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double m = logits.at2(i, 0);
    for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(logits.at2(i, j)));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(logits.at2(i, j)) - m);
    const int y = labels[static_cast<size_t>(i)];
    loss += -(static_cast<double>(logits.at2(i, y)) - m) + std::log(denom);
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(logits.at2(i, j)) - m) / denom;
      dlogits.at2(i, j) = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / n);
    }
  }
  return loss / n;
}

}  // namespace

CategorySet load_category(const fs::path& root, const std::string& name, int input_size) {
  if (input_size < 8) throw UsageError("input size must be at least 8");
  CategorySet set;
  set.name = name;
  set.dir = root / name;
  set.input_size = input_size;
  if (!fs::is_directory(set.dir))
    throw DataError("category directory not found: " + set.dir.string());

  const fs::path train_dir = set.dir / "train" / "good";
  const fs::path test_dir = set.dir / "test";
  if (!fs::is_directory(train_dir) || !fs::is_directory(test_dir))
    throw DataError("unknown layout under " + set.dir.string() +
                    " (expected train/good and test/<defect_type> directories)");

  set.train = sorted_images(train_dir);
  if (set.train.empty()) throw DataError("no training images in " + train_dir.string());

  for (const std::string& label : sorted_subdirs(test_dir)) {
    for (const fs::path& img : sorted_images(test_dir / label)) {
      TestItem item;
      item.image = img;
      item.defect_type = label;
      if (label != "good") {
        item.mask = set.dir / "ground_truth" / label / (img.stem().string() + "_mask.png");
        if (!fs::is_regular_file(item.mask))
          throw DataError("missing mask for defective image " + img.string() + " (expected " +
                          item.mask.string() + ")");
      }
      set.test.push_back(std::move(item));
    }
  }
  return set;
}

Tensor load_image_rgb01(const fs::path& file, int input_size) {
  return mat_to_rgb01(resized(read_color(file), input_size, cv::INTER_LINEAR));
}

Tensor normalize_image(const Tensor& rgb01, const NormParams& norm) {
  Tensor out(rgb01.shape);
  const int hw = rgb01.dim(1) * rgb01.dim(2);
  for (int c = 0; c < 3; ++c) {
    const float m = norm.mean[static_cast<size_t>(c)], s = norm.std[static_cast<size_t>(c)];
    const float* src = rgb01.ptr() + static_cast<std::size_t>(c) * hw;
    float* dst = out.ptr() + static_cast<std::size_t>(c) * hw;
    for (int i = 0; i < hw; ++i) dst[i] = (src[i] - m) / s;
  }
  return out;
}

Tensor load_image_tensor(const fs::path& file, int input_size, const NormParams& norm) {
  return normalize_image(load_image_rgb01(file, input_size), norm);
}

Tensor load_mask(const fs::path& file, int input_size) {
  return mask_from_gray(resized(read_gray(file), input_size, cv::INTER_NEAREST));
}

std::pair<Tensor, Tensor> load_test_pair(const TestItem& item, int input_size,
                                         const NormParams& norm) {
  const cv::Mat img = read_color(item.image);
  Tensor mask;
  if (item.is_defective()) {
    const cv::Mat m = read_gray(item.mask);
    if (m.rows != img.rows || m.cols != img.cols)
      throw DataError("mask dimensions " + std::to_string(m.cols) + "x" + std::to_string(m.rows) +
                      " do not match image " + std::to_string(img.cols) + "x" +
                      std::to_string(img.rows) + " for " + item.image.string());
    mask = mask_from_gray(resized(m, input_size, cv::INTER_NEAREST));
  } else {
    mask = Tensor({input_size, input_size});
  }
  Tensor image = normalize_image(mat_to_rgb01(resized(img, input_size, cv::INTER_LINEAR)), norm);
  return {std::move(image), std::move(mask)};
}

Tensor disk_mask(int size, float cx, float cy, float radius) {
  Tensor mask({size, size});
  const float r2 = radius * radius;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float dx = static_cast<float>(x) - cx, dy = static_cast<float>(y) - cy;
      if (dx * dx + dy * dy <= r2) mask.at2(y, x) = 1.f;
    }
  return mask;
}

SynthCategory generate_synthetic(const SynthSpec& spec) {
  validate_spec(spec);
  SynthCategory cat;
  cat.name = spec.name;
  cat.image_size = spec.image_size;
  for (int i = 0; i < spec.train_count; ++i)
    cat.train.push_back(make_good(spec, mix_seed(spec.seed, static_cast<uint64_t>(i)), "good"));
  // Defective items first: "blob" sorts before "good", matching the order
  // load_category enumerates the written layout in.
  for (int i = 0; i < spec.test_defect; ++i)
    cat.test.push_back(make_defective(spec, mix_seed(spec.seed, 2'000'000ull + static_cast<uint64_t>(i))));
  for (int i = 0; i < spec.test_good; ++i)
    cat.test.push_back(make_good(spec, mix_seed(spec.seed, 1'000'000ull + static_cast<uint64_t>(i)), "good"));
  return cat;
}

fs::path write_category(const SynthCategory& category, const fs::path& root) {
  const fs::path dir = root / category.name;
  std::error_code ec;
  fs::create_directories(dir / "train" / "good", ec);
  if (ec) throw IoError("cannot create " + (dir / "train" / "good").string() + ": " + ec.message());

  for (std::size_t i = 0; i < category.train.size(); ++i)
    write_png_rgb(dir / "train" / "good" / (padded(static_cast<int>(i)) + ".png"),
                  category.train[i].image);

  std::map<std::string, int> counters;
  for (const SynthImage& item : category.test) {
    const int i = counters[item.defect_type]++;
    const fs::path type_dir = dir / "test" / item.defect_type;
    fs::create_directories(type_dir, ec);
    if (ec) throw IoError("cannot create " + type_dir.string() + ": " + ec.message());
    write_png_rgb(type_dir / (padded(i) + ".png"), item.image);
    if (item.defect_type != "good") {
      const fs::path mask_dir = dir / "ground_truth" / item.defect_type;
      fs::create_directories(mask_dir, ec);
      if (ec) throw IoError("cannot create " + mask_dir.string() + ": " + ec.message());
      write_png_mask(mask_dir / (padded(i) + "_mask.png"), item.mask);
    }
  }
  return dir;
}

std::vector<SynthSpec> builtin_texture_classes(int image_size, uint64_t seed) {
  SynthSpec a;
  a.name = "texA";
  a.image_size = image_size;
  a.seed = mix_seed(seed, 101);
  a.freq_u = 2.f;
  a.freq_v = 3.f;
  a.angle = 0.f;
  a.pattern_amp = 0.35f;
  a.noise_amp = 0.04f;

  SynthSpec b = a;
  b.name = "texB";
  b.seed = mix_seed(seed, 102);
  b.freq_u = 6.f;
  b.freq_v = 5.f;
  b.angle = 0.6f;
  b.pattern_amp = 0.3f;

  SynthSpec c = a;
  c.name = "texC";
  c.seed = mix_seed(seed, 103);
  c.freq_u = 4.f;
  c.freq_v = 7.f;
  c.angle = 1.1f;
  c.pattern_amp = 0.4f;
  c.noise_amp = 0.05f;

  a.train_count = b.train_count = c.train_count = 48;
  a.test_good = b.test_good = c.test_good = 12;
  return {a, b, c};
}

Archive pretrain_toy_teacher(const std::vector<SynthSpec>& classes, int epochs, uint64_t seed) {
  if (classes.size() < 2)
    throw UsageError("teacher pretraining needs at least 2 texture classes, got " +
                     std::to_string(classes.size()));
  if (epochs < 1) throw UsageError("pretraining epochs must be positive");
  const int size = classes.front().image_size;
  for (const SynthSpec& s : classes)
    if (s.image_size != size) throw ConfigError("texture classes disagree on image size");

  std::vector<Tensor> train_x, hold_x;
  std::vector<int> train_y, hold_y;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const SynthSpec& s = classes[k];
    for (int i = 0; i < s.train_count; ++i) {
      Tensor img = synth_background(s, mix_seed(s.seed, 3'000'000ull + static_cast<uint64_t>(i)));
      quantize_image(img);
      train_x.push_back(std::move(img));
      train_y.push_back(static_cast<int>(k));
    }
    const int holdout = std::max(4, s.test_good);
    for (int i = 0; i < holdout; ++i) {
      Tensor img = synth_background(s, mix_seed(s.seed, 4'000'000ull + static_cast<uint64_t>(i)));
      quantize_image(img);
      hold_x.push_back(std::move(img));
      hold_y.push_back(static_cast<int>(k));
    }
  }

  // Channel statistics of the pretraining corpus become the archive's
  // normalization convention.
  NormParams norm;
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (const Tensor& t : train_x)
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = t.data[static_cast<std::size_t>(c) * hw + i];
        sum += v;
        sq += v * v;
      }
    const double count = static_cast<double>(train_x.size()) * static_cast<double>(hw);
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    norm.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    norm.std[static_cast<size_t>(c)] = std::max(1e-3f, static_cast<float>(std::sqrt(var)));
  }
  for (Tensor& t : train_x) t = normalize_image(t, norm);
  for (Tensor& t : hold_x) t = normalize_image(t, norm);

  ArchSpec spec = *find_arch("minires");
  spec.head_classes = static_cast<int>(classes.size());
  Network net(spec);
  net.init_params(seed);
  auto cache = net.make_cache();

  std::vector<ParamRef> params = net.params();
  std::vector<Tensor> velocity(params.size());
  const float lr = 0.05f, momentum = 0.9f, weight_decay = 1e-4f;
  const int batch = 16;

  std::vector<int> order(train_x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);

  for (int e = 0; e < epochs; ++e) {
    Rng rng(mix_seed(seed, 7'000'000ull + static_cast<uint64_t>(e)));
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const int end = static_cast<int>(std::min(order.size(), b + batch));
      Tensor x = stack_images(train_x, order, static_cast<int>(b), end);
      std::vector<int> y;
      for (int i = static_cast<int>(b); i < end; ++i)
        y.push_back(train_y[static_cast<size_t>(order[static_cast<size_t>(i)])]);

      net.zero_grads();
      const Tensor logits = net.forward_logits(x, /*train=*/true, cache.get());
      Tensor dlogits;
      const double loss = softmax_ce(logits, y, dlogits);
      if (!std::isfinite(loss))
        throw TrainError("pretraining loss diverged at epoch " + std::to_string(e + 1));
      net.backward_logits(dlogits, *cache);

      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& v = velocity[p];
        if (v.empty()) v = Tensor(params[p].value->shape);
        Tensor& g = *params[p].grad;
        Tensor& w = *params[p].value;
        if (g.empty()) continue;
        for (std::size_t i = 0; i < w.numel(); ++i) {
          v.data[i] = momentum * v.data[i] + g.data[i] + weight_decay * w.data[i];
          w.data[i] -= lr * v.data[i];
        }
      }
    }
  }

  int correct = 0;
  std::vector<int> hold_order(hold_x.size());
  for (std::size_t i = 0; i < hold_order.size(); ++i) hold_order[i] = static_cast<int>(i);
  for (std::size_t b = 0; b < hold_x.size(); b += batch) {
    const int end = static_cast<int>(std::min(hold_x.size(), b + batch));
    Tensor x = stack_images(hold_x, hold_order, static_cast<int>(b), end);
    const Tensor logits = net.forward_logits(x, /*train=*/false, nullptr);
    for (int i = 0; i < logits.dim(0); ++i) {
      int arg = 0;
      for (int j = 1; j < logits.dim(1); ++j)
        if (logits.at2(i, j) > logits.at2(i, arg)) arg = j;
      if (arg == hold_y[b + static_cast<size_t>(i)]) ++correct;
    }
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(hold_x.size());
  if (accuracy < 0.8)
    throw TrainError("pretraining holdout accuracy " + std::to_string(accuracy) +
                     " is below the 0.80 floor; use easier textures or more epochs");

  Archive archive;
  archive.meta.kind = "teacher";
  archive.meta.arch_id = "minires";
  archive.meta.input_size = size;
  archive.meta.norm = norm;
  archive.meta.extra = {{"pretrain_accuracy", accuracy},
                        {"pretrain_classes", classes.size()},
                        {"pretrain_epochs", epochs}};
  for (const StateRef& s : net.named_state())
    if (s.name.rfind("head.", 0) != 0) archive.tensors.emplace_back(s.name, *s.value);
  return archive;
}

}  // namespace pyrad
