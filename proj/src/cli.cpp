#include "pyrad/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "json.hpp"

#include "pyrad/archive.hpp"
#include "pyrad/backbone.hpp"
#include "pyrad/config.hpp"
#include "pyrad/datasets.hpp"
#include "pyrad/error.hpp"
#include "pyrad/metrics.hpp"
#include "pyrad/npy.hpp"
#include "pyrad/scorer.hpp"
#include "pyrad/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pyrad {
namespace {

// ---------------------------------------------------------------------------
// Option plumbing shared by the pipeline subcommands. Flags override the
// config file; the file overrides compiled defaults. All typed validation
// funnels through RunConfig::apply_json so there is one error path.

struct RunOptions {
  std::string config_file;
  std::string category, data_root, teacher, out_dir;
  std::vector<int> blocks;
  std::vector<float> level_weights;
  double lr = 0, val_fraction = 0, train_fraction = 0, momentum = 0;
  double weight_decay = 0, fpr_limit = 0, smooth_sigma = 0;
  int epochs = 0, batch_size = 0, input_size = 0, pro_steps = 0;
  uint64_t seed = 0;
  bool per_image_fpr = false;
  CLI::App* cmd = nullptr;

  void attach(CLI::App* sub) {
    cmd = sub;
    sub->add_option("--config", config_file, "JSON config file; flags override its values");
    sub->add_option("--category", category, "dataset category name");
    sub->add_option("--data-root", data_root, "dataset root directory")
        ->envname("PYRAD_DATA_ROOT");
    sub->add_option("--teacher", teacher, "teacher weights archive (.fpwa)");
    sub->add_option("--out-dir", out_dir, "directory for output artifacts");
    sub->add_option("--blocks", blocks, "pyramid block ids, e.g. 2,3,4")->delimiter(',');
    sub->add_option("--level-weights", level_weights, "per-level loss weights")->delimiter(',');
    sub->add_option("--lr", lr, "SGD learning rate");
    sub->add_option("--epochs", epochs, "training epochs");
    sub->add_option("--batch-size", batch_size, "minibatch size");
    sub->add_option("--input-size", input_size, "square input resolution");
    sub->add_option("--val-fraction", val_fraction, "fraction of training images held out");
    sub->add_option("--train-fraction", train_fraction, "fraction of the training split used");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--momentum", momentum, "SGD momentum");
    sub->add_option("--weight-decay", weight_decay, "SGD weight decay");
    sub->add_option("--fpr-limit", fpr_limit, "region-overlap integration limit");
    sub->add_option("--pro-steps", pro_steps, "region-overlap threshold count");
    sub->add_flag("--per-image-fpr", per_image_fpr,
                  "average the region-overlap FPR per image instead of pooling pixels");
    sub->add_option("--smooth-sigma", smooth_sigma, "Gaussian blur sigma for fused maps (0=off)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (cmd->count("--config") > 0) cfg = RunConfig::from_file(config_file);
    json o;
    if (cmd->count("--category") > 0) o["category"] = category;
    if (cmd->count("--data-root") > 0) o["data_root"] = data_root;
    if (cmd->count("--teacher") > 0) o["teacher"] = teacher;
    if (cmd->count("--out-dir") > 0) o["out_dir"] = out_dir;
    if (cmd->count("--blocks") > 0) o["blocks"] = blocks;
    if (cmd->count("--level-weights") > 0) o["level_weights"] = level_weights;
    if (cmd->count("--lr") > 0) o["lr"] = lr;
    if (cmd->count("--epochs") > 0) o["epochs"] = epochs;
    if (cmd->count("--batch-size") > 0) o["batch_size"] = batch_size;
    if (cmd->count("--input-size") > 0) o["input_size"] = input_size;
    if (cmd->count("--val-fraction") > 0) o["val_fraction"] = val_fraction;
    if (cmd->count("--train-fraction") > 0) o["train_fraction"] = train_fraction;
    if (cmd->count("--seed") > 0) o["seed"] = seed;
    if (cmd->count("--momentum") > 0) o["momentum"] = momentum;
    if (cmd->count("--weight-decay") > 0) o["weight_decay"] = weight_decay;
    if (cmd->count("--fpr-limit") > 0) o["fpr_limit"] = fpr_limit;
    if (cmd->count("--pro-steps") > 0) o["pro_steps"] = pro_steps;
    if (cmd->count("--per-image-fpr") > 0) o["per_image_fpr"] = true;
    if (cmd->count("--smooth-sigma") > 0) o["smooth_sigma"] = smooth_sigma;
    RunConfig out = cfg;
    out.apply_json(o);
    return out;
  }

  bool blocks_given() const { return cmd->count("--blocks") > 0; }
};

// Mirrors epoch lines to stdout while they land in the run log.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    int ra = a_->sputc(static_cast<char>(c));
    int rb = b_->sputc(static_cast<char>(c));
    return (ra == traits_type::eof() || rb == traits_type::eof()) ? traits_type::eof() : c;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + file.string());
  out << text;
  out.close();
  if (!out) throw IoError("write failed: " + file.string());
}

void write_json_file(const fs::path& file, const json& j) { write_text(file, j.dump(2) + "\n"); }

json read_manifest(const fs::path& file) {
  if (!fs::exists(file)) return json{{"categories", json::object()}};
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + file.string());
  try {
    json j = json::parse(in);
    if (!j.contains("categories") || !j["categories"].is_object())
      throw ConfigError("manifest has no category table: " + file.string());
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest " + file.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Image output helpers.

cv::Mat heat_bgr(const Tensor& grid) {
  const int h = grid.dim(0), w = grid.dim(1);
  const float mn = grid.min_value(), mx = grid.max_value();
  const float scale = mx > mn ? 255.f / (mx - mn) : 0.f;
  cv::Mat u8(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      u8.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround((grid.at2(y, x) - mn) * scale));
  cv::Mat color;
  cv::applyColorMap(u8, color, cv::COLORMAP_JET);
  return color;
}

cv::Mat rgb01_to_bgr8(const Tensor& rgb) {
  const int h = rgb.dim(1), w = rgb.dim(2);
  cv::Mat bgr(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto& px = bgr.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(rgb.at3(c, y, x), 0.f, 1.f);
        px[2 - c] = static_cast<uint8_t>(std::lround(v * 255.f));
      }
    }
  return bgr;
}

void draw_mask_outline(cv::Mat& bgr, const Tensor& mask) {
  cv::Mat m(mask.dim(0), mask.dim(1), CV_8UC1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) m.at<uint8_t>(y, x) = mask.at2(y, x) > 0.5f ? 255 : 0;
  std::vector<std::vector<cv::Point>> contours;
  cv::findContours(m, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
  cv::drawContours(bgr, contours, -1, cv::Scalar(0, 0, 255), 1);
}

void write_image(const fs::path& file, const cv::Mat& bgr) {
  if (!cv::imwrite(file.string(), bgr)) throw IoError("cannot write image: " + file.string());
}

// Output stems for a list of input images, unique even when basenames
// collide (test layouts reuse names like 000.png across label dirs).
std::vector<std::string> unique_stems(const std::vector<std::string>& files) {
  std::vector<std::string> stems;
  std::set<std::string> used;
  for (const auto& file : files) {
    const fs::path p(file);
    std::string stem = p.stem().string();
    if (used.count(stem) > 0 && p.has_parent_path())
      stem = p.parent_path().filename().string() + "_" + stem;
    for (int k = 2; used.count(stem) > 0; ++k)
      stem = p.stem().string() + "_" + std::to_string(k);
    used.insert(stem);
    stems.push_back(stem);
  }
  return stems;
}

// ---------------------------------------------------------------------------
// Checkpoint + teacher loading shared by eval/score/visualize/dump-features.

struct ScoringBundle {
  Checkpoint ck;
  NetworkHandle teacher;
  NetworkHandle student;
};

ScoringBundle load_bundle(const RunConfig& cfg, const fs::path& ck_file,
                          const std::vector<int>* explicit_blocks) {
  if (cfg.teacher.empty())
    throw ConfigError("a teacher archive is required (--teacher or config key \"teacher\")");
  if (!fs::exists(cfg.teacher))
    throw ConfigError("teacher archive not found: " + cfg.teacher.string());
  if (!fs::exists(ck_file)) throw ConfigError("checkpoint not found: " + ck_file.string());

  ScoringBundle b;
  b.ck = Checkpoint::load(ck_file);

  const std::string teacher_fp = Archive::fingerprint(cfg.teacher);
  if (!b.ck.teacher_fingerprint.empty() && b.ck.teacher_fingerprint != teacher_fp)
    throw ConfigError("teacher archive " + cfg.teacher.string() + " (fingerprint " + teacher_fp +
                      ") is not the one the checkpoint was trained against (" +
                      b.ck.teacher_fingerprint + ")");

  if (explicit_blocks != nullptr && *explicit_blocks != b.ck.pyramid.block_ids) {
    std::ostringstream msg;
    msg << "checkpoint was trained with blocks ";
    for (size_t i = 0; i < b.ck.pyramid.block_ids.size(); ++i)
      msg << (i ? "," : "") << b.ck.pyramid.block_ids[i];
    msg << "; scoring must use the same pyramid (drop --blocks or pass the matching ids)";
    throw ConfigError(msg.str());
  }

  // Scoring-semantics guard: the fused map only means what the training run
  // meant if blocks, weights and input size all agree.
  if (!b.ck.pyramid_fingerprint.empty()) {
    RunConfig g;
    g.pyramid = b.ck.pyramid;
    g.train.input_size = b.ck.input_size;
    if (g.pyramid_fingerprint() != b.ck.pyramid_fingerprint)
      throw ConfigError(
          "scoring configuration disagrees with the checkpoint (blocks, level weights "
          "and input size must match the training run)");
  }

  b.teacher = load_teacher(cfg.teacher, b.ck.pyramid);
  b.teacher.input_size = b.ck.input_size;
  b.student = b.ck.to_student();
  return b;
}

// ---------------------------------------------------------------------------
// Report rendering: metrics as rows, categories as columns.

std::string fmt_value(float v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

std::string render_report(const std::vector<EvalReport>& reports, const EvalReport* mean) {
  std::vector<const EvalReport*> cols;
  for (const auto& r : reports) cols.push_back(&r);
  if (mean != nullptr) cols.push_back(mean);

  std::vector<std::string> names{"metric"};
  for (const auto* r : cols) names.push_back(r->category);
  std::vector<size_t> width(names.size());
  for (size_t i = 0; i < names.size(); ++i) width[i] = std::max<size_t>(names[i].size(), 9);

  std::ostringstream out;
  auto row = [&](const std::string& label, auto value_of) {
    out << std::left << std::setw(static_cast<int>(width[0])) << label;
    for (size_t i = 0; i < cols.size(); ++i)
      out << "  " << std::right << std::setw(static_cast<int>(width[i + 1])) << value_of(*cols[i]);
    out << "\n";
  };
  row(names[0], [&](const EvalReport& r) { return r.category; });
  row("image-auc", [](const EvalReport& r) { return fmt_value(r.image_auc); });
  row("pixel-auc", [](const EvalReport& r) { return fmt_value(r.pixel_auc); });
  row("pro", [](const EvalReport& r) { return fmt_value(r.pro); });
  row("images", [](const EvalReport& r) { return std::to_string(r.test_images); });
  row("defective", [](const EvalReport& r) { return std::to_string(r.defective_images); });
  return out.str();
}

json report_to_json(const EvalReport& r) {
  return json{{"category", r.category},           {"image_auc", r.image_auc},
              {"pixel_auc", r.pixel_auc},         {"pro", r.pro},
              {"test_images", r.test_images},     {"defective_images", r.defective_images}};
}

// ---------------------------------------------------------------------------
// Subcommand bodies.

int cmd_train(const RunConfig& cfg) {
  if (cfg.teacher.empty())
    throw ConfigError("train needs a teacher archive (--teacher or config key \"teacher\")");
  if (!fs::exists(cfg.teacher))
    throw ConfigError("teacher archive not found: " + cfg.teacher.string());
  cfg.train.validate();

  NetworkHandle teacher = load_teacher(cfg.teacher, cfg.pyramid);
  teacher.input_size = cfg.train.input_size;

  CategorySet set = load_category(cfg.data_root, cfg.category, cfg.train.input_size);
  auto [train_idx, val_idx] =
      split_indices(static_cast<int>(set.train.size()), cfg.train.val_fraction,
                    cfg.train.train_fraction, cfg.train.seed);

  std::vector<Tensor> train_images, val_images;
  train_images.reserve(train_idx.size());
  val_images.reserve(val_idx.size());
  for (int i : train_idx)
    train_images.push_back(load_image_tensor(set.train[i], cfg.train.input_size, teacher.norm));
  for (int i : val_idx)
    val_images.push_back(load_image_tensor(set.train[i], cfg.train.input_size, teacher.norm));

  NetworkHandle student = init_student(teacher, cfg.train.seed);

  const fs::path dir = cfg.out_dir / cfg.category;
  fs::create_directories(dir);
  std::ofstream log_file(dir / "run_log.jsonl", std::ios::binary);
  if (!log_file) throw IoError("cannot open run log: " + (dir / "run_log.jsonl").string());
  log_file << json{{"category", cfg.category},
                   {"train_images", train_images.size()},
                   {"val_images", val_images.size()},
                   {"config_fingerprint", cfg.fingerprint()}}
                  .dump()
           << "\n";

  std::cout << "training " << cfg.category << ": " << train_images.size() << " train / "
            << val_images.size() << " val images, " << cfg.train.epochs << " epochs\n";

  TeeBuf tee_buf(log_file.rdbuf(), std::cout.rdbuf());
  std::ostream tee(&tee_buf);
  Checkpoint ck = train(teacher, student, train_images, val_images, cfg.pyramid, cfg.train, &tee);
  ck.config_fingerprint = cfg.fingerprint();
  ck.pyramid_fingerprint = cfg.pyramid_fingerprint();

  const fs::path ck_file = dir / "checkpoint.fpwa";
  ck.save(ck_file);

  json snapshot = cfg.to_json();
  snapshot["teacher_fingerprint"] = ck.teacher_fingerprint;
  snapshot["config_fingerprint"] = ck.config_fingerprint;
  snapshot["pyramid_fingerprint"] = ck.pyramid_fingerprint;
  snapshot["train_images"] = train_images.size();
  snapshot["val_images"] = val_images.size();
  write_json_file(dir / "config.json", snapshot);

  const fs::path manifest_file = cfg.out_dir / "manifest.json";
  json manifest = read_manifest(manifest_file);
  manifest["categories"][cfg.category] = {
      {"checkpoint", (fs::path(cfg.category) / "checkpoint.fpwa").generic_string()},
      {"epoch", ck.epoch},
      {"val_loss", ck.val_loss},
      {"config_fingerprint", ck.config_fingerprint},
      {"pyramid_fingerprint", ck.pyramid_fingerprint},
      {"teacher_fingerprint", ck.teacher_fingerprint}};
  write_json_file(manifest_file, manifest);

  std::cout << "checkpoint: " << ck_file.string() << " (best epoch " << ck.epoch << ", val loss "
            << ck.val_loss << ")\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const RunOptions& ro, const std::string& checkpoint,
             const std::string& run_dir) {
  struct Target {
    std::string category;
    fs::path checkpoint;
  };
  std::vector<Target> targets;
  if (!run_dir.empty()) {
    const fs::path manifest_file = fs::path(run_dir) / "manifest.json";
    if (!fs::exists(manifest_file))
      throw ConfigError("no manifest under run dir: " + manifest_file.string());
    json manifest = read_manifest(manifest_file);
    for (const auto& [cat, entry] : manifest["categories"].items())
      targets.push_back({cat, fs::path(run_dir) / entry.at("checkpoint").get<std::string>()});
    if (targets.empty()) throw ConfigError("manifest lists no categories: " + manifest_file.string());
  } else if (!checkpoint.empty()) {
    targets.push_back({cfg.category, checkpoint});
  } else {
    throw ConfigError("eval needs --checkpoint or --run-dir");
  }

  std::vector<int> blocks = cfg.pyramid.block_ids;
  const std::vector<int>* explicit_blocks = ro.blocks_given() ? &blocks : nullptr;

  std::vector<EvalReport> reports;
  json curves = json::array();
  for (const auto& target : targets) {
    ScoringBundle b = load_bundle(cfg, target.checkpoint, explicit_blocks);
    CategorySet set = load_category(cfg.data_root, target.category, b.ck.input_size);
    ScoreOptions score_options;
    score_options.smooth_sigma = cfg.smooth_sigma;
    EvalReport r =
        evaluate_category(b.teacher, b.student, set, b.ck.pyramid, cfg.pro, score_options);
    r.category = target.category;
    std::cout << target.category << ": image-auc " << fmt_value(r.image_auc) << ", pixel-auc "
              << fmt_value(r.pixel_auc) << ", pro " << fmt_value(r.pro) << "\n";
    reports.push_back(std::move(r));
  }

  EvalReport mean;
  const bool has_mean = reports.size() > 1;
  if (has_mean) mean = aggregate_reports(reports);

  fs::create_directories(cfg.out_dir);
  json out{{"categories", json::array()}};
  for (const auto& r : reports) out["categories"].push_back(report_to_json(r));
  if (has_mean) out["mean"] = report_to_json(mean);
  write_json_file(cfg.out_dir / "report.json", out);

  std::ostringstream csv;
  csv << "category,curve,x,y\n";
  for (const auto& r : reports) {
    for (const auto& p : r.image_roc)
      csv << r.category << ",roc," << p.fpr << "," << p.tpr << "\n";
    for (const auto& p : r.pro_points)
      csv << r.category << ",pro," << p.fpr << "," << p.pro << "\n";
  }
  write_text(cfg.out_dir / "curves.csv", csv.str());

  const std::string table = render_report(reports, has_mean ? &mean : nullptr);
  write_text(cfg.out_dir / "report.txt", table);
  std::cout << "\n" << table;
  std::cout << "report: " << (cfg.out_dir / "report.txt").string() << "\n";
  return kExitOk;
}

int cmd_score(const RunConfig& cfg, const RunOptions& ro, const std::string& checkpoint,
              const std::vector<std::string>& images) {
  std::vector<int> blocks = cfg.pyramid.block_ids;
  ScoringBundle b = load_bundle(cfg, checkpoint, ro.blocks_given() ? &blocks : nullptr);
  fs::create_directories(cfg.out_dir);

  ScoreOptions options;
  options.smooth_sigma = cfg.smooth_sigma;

  const std::vector<std::string> stems = unique_stems(images);
  json lines = json::array();
  for (size_t i = 0; i < images.size(); ++i) {
    const std::string& file = images[i];
    Tensor image = load_image_tensor(file, b.ck.input_size, b.ck.norm);
    auto [map, score] = score_image(b.teacher, b.student, image, b.ck.pyramid, options);
    const std::string& stem = stems[i];
    write_npy(cfg.out_dir / (stem + "_map.npy"), map.scores);
    write_image(cfg.out_dir / (stem + "_heat.png"), heat_bgr(map.scores));
    json line{{"image", file}, {"score", score}};
    std::cout << line.dump() << "\n";
    lines.push_back(std::move(line));
  }
  write_json_file(cfg.out_dir / "scores.json", lines);
  return kExitOk;
}

int cmd_visualize(const RunConfig& cfg, const RunOptions& ro, const std::string& checkpoint,
                  const std::vector<std::string>& images, const std::vector<std::string>& masks) {
  if (!masks.empty() && masks.size() != images.size())
    throw UsageError("--mask count must match --image count");
  std::vector<int> blocks = cfg.pyramid.block_ids;
  ScoringBundle b = load_bundle(cfg, checkpoint, ro.blocks_given() ? &blocks : nullptr);
  fs::create_directories(cfg.out_dir);

  ScoreOptions options;
  options.keep_level_maps = true;
  options.smooth_sigma = cfg.smooth_sigma;

  const std::vector<std::string> stems = unique_stems(images);
  for (size_t i = 0; i < images.size(); ++i) {
    Tensor rgb = load_image_rgb01(images[i], b.ck.input_size);
    Tensor normalized = normalize_image(rgb, b.ck.norm);
    auto [map, score] = score_image(b.teacher, b.student, normalized, b.ck.pyramid, options);

    const std::string& stem = stems[i];
    cv::Mat input = rgb01_to_bgr8(rgb);
    if (!masks.empty()) draw_mask_outline(input, load_mask(masks[i], b.ck.input_size));
    write_image(cfg.out_dir / (stem + "_input.png"), input);
    for (size_t l = 0; l < map.per_level.size(); ++l) {
      const std::string name = stem + "_block" + std::to_string(b.ck.pyramid.block_ids[l]) + ".png";
      write_image(cfg.out_dir / name, heat_bgr(map.per_level[l]));
    }
    write_image(cfg.out_dir / (stem + "_fused.png"), heat_bgr(map.scores));
    std::cout << json{{"image", images[i]}, {"score", score}}.dump() << "\n";
  }
  std::cout << "wrote visualizations to " << cfg.out_dir.string() << "\n";
  return kExitOk;
}

int cmd_dump_features(const RunConfig& cfg, const RunOptions& ro, const std::string& checkpoint,
                      const std::string& image, const std::string& out_csv) {
  std::vector<int> blocks = cfg.pyramid.block_ids;
  ScoringBundle b = load_bundle(cfg, checkpoint, ro.blocks_given() ? &blocks : nullptr);
  Tensor tensor = load_image_tensor(image, b.ck.input_size, b.ck.norm);
  fs::path out = out_csv.empty() ? cfg.out_dir / "features.csv" : fs::path(out_csv);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  dump_features(b.teacher, b.student, tensor, b.ck.pyramid, out);
  std::cout << "features: " << out.string() << "\n";
  return kExitOk;
}

int cmd_synth_generate(const SynthSpec& spec, const std::string& out_root) {
  SynthCategory category = generate_synthetic(spec);
  fs::path dir = write_category(category, out_root);
  std::cout << "wrote " << category.train.size() << " train / " << category.test.size()
            << " test images to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_fetch_teacher(bool toy, bool random_init, const std::string& url, const std::string& arch,
                      int input_size, uint64_t seed, int epochs, const std::string& out_file) {
  const int modes = int(toy) + int(random_init) + int(!url.empty());
  if (modes != 1) throw UsageError("pick exactly one of --toy, --random-init, --url");
  fs::path out = out_file;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());

  if (toy) {
    const int size = input_size > 0 ? input_size : 64;
    Archive archive = pretrain_toy_teacher(builtin_texture_classes(size, seed), epochs, seed);
    archive.save(out);
    std::cout << "toy teacher: " << out.string() << " (holdout accuracy "
              << archive.meta.extra.value("pretrain_accuracy", 0.f) << ", fingerprint "
              << Archive::fingerprint(out) << ")\n";
    return kExitOk;
  }

  if (random_init) {
    const ArchSpec* spec = find_arch(arch);
    if (spec == nullptr) throw ConfigError("unknown architecture: " + arch);
    Network net(*spec);
    net.init_params(seed);
    Archive archive;
    archive.meta.kind = "teacher";
    archive.meta.arch_id = spec->id;
    archive.meta.input_size = input_size > 0 ? input_size : (arch == "resnet18" ? 256 : 64);
    if (arch == "resnet18") {
      // Large-corpus channel statistics, the convention pretrained residual
      // networks are distributed with.
      archive.meta.norm.mean = {0.485f, 0.456f, 0.406f};
      archive.meta.norm.std = {0.229f, 0.224f, 0.225f};
    }
    archive.meta.extra = json{{"note", "randomly initialized; for pipeline testing only"}};
    archive.tensors = snapshot_state(net);
    archive.save(out);
    std::cout << "random-init teacher: " << out.string() << " (fingerprint "
              << Archive::fingerprint(out) << ")\n";
    return kExitOk;
  }

  std::ostringstream cmd;
  cmd << "curl -fsSL -o " << std::quoted(out.string()) << " " << std::quoted(url);
  const int rc = std::system(cmd.str().c_str());
  if (rc != 0) throw IoError("download failed (curl exit " + std::to_string(rc) + "): " + url);
  Archive archive = Archive::load(out);  // validates the payload
  std::cout << "fetched teacher: " << out.string() << " (arch " << archive.meta.arch_id
            << ", fingerprint " << Archive::fingerprint(out) << ")\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"student-teacher feature-pyramid anomaly detection"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "distill a student against a frozen teacher");
  RunOptions train_ro;
  train_ro.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "compute detection metrics for a checkpoint");
  RunOptions eval_ro;
  eval_ro.attach(eval_cmd);
  std::string eval_checkpoint, eval_run_dir;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint archive to evaluate");
  eval_cmd->add_option("--run-dir", eval_run_dir, "training output dir; evaluates every category");

  // score
  auto* score_cmd = app.add_subcommand("score", "anomaly maps and scores for single images");
  RunOptions score_ro;
  score_ro.attach(score_cmd);
  std::string score_checkpoint;
  std::vector<std::string> score_images;
  score_cmd->add_option("--checkpoint", score_checkpoint, "checkpoint archive")->required();
  score_cmd->add_option("--image", score_images, "image file (repeatable)")->required();

  // visualize
  auto* vis_cmd = app.add_subcommand("visualize", "input, per-level and fused heatmap images");
  RunOptions vis_ro;
  vis_ro.attach(vis_cmd);
  std::string vis_checkpoint;
  std::vector<std::string> vis_images, vis_masks;
  vis_cmd->add_option("--checkpoint", vis_checkpoint, "checkpoint archive")->required();
  vis_cmd->add_option("--image", vis_images, "image file (repeatable)")->required();
  vis_cmd->add_option("--mask", vis_masks, "ground-truth mask outlined on the input (repeatable)");

  // dump-features
  auto* dump_cmd = app.add_subcommand("dump-features", "per-position normalized features as CSV");
  RunOptions dump_ro;
  dump_ro.attach(dump_cmd);
  std::string dump_checkpoint, dump_image, dump_out;
  dump_cmd->add_option("--checkpoint", dump_checkpoint, "checkpoint archive")->required();
  dump_cmd->add_option("--image", dump_image, "image file")->required();
  dump_cmd->add_option("--out", dump_out, "output CSV path (default <out-dir>/features.csv)");

  // synth-generate
  auto* synth_cmd = app.add_subcommand("synth-generate", "write a synthetic texture category");
  SynthSpec synth_spec;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "dataset root to write into")->required();
  synth_cmd->add_option("--name", synth_spec.name, "category name");
  synth_cmd->add_option("--size", synth_spec.image_size, "image size in pixels");
  synth_cmd->add_option("--seed", synth_spec.seed, "random seed");
  synth_cmd->add_option("--train-count", synth_spec.train_count, "defect-free training images");
  synth_cmd->add_option("--test-good", synth_spec.test_good, "defect-free test images");
  synth_cmd->add_option("--test-defect", synth_spec.test_defect, "defective test images");
  synth_cmd->add_option("--freq-u", synth_spec.freq_u, "texture cycles, first axis");
  synth_cmd->add_option("--freq-v", synth_spec.freq_v, "texture cycles, second axis");
  synth_cmd->add_option("--angle", synth_spec.angle, "texture rotation in radians");
  synth_cmd->add_option("--pattern-amp", synth_spec.pattern_amp, "texture amplitude");
  synth_cmd->add_option("--noise-amp", synth_spec.noise_amp, "per-pixel noise amplitude");
  synth_cmd->add_flag("--noise-only", synth_spec.noise_only, "drop the pattern, keep the noise");
  synth_cmd->add_option("--blob-min", synth_spec.blob_count_min, "min defects per image");
  synth_cmd->add_option("--blob-max", synth_spec.blob_count_max, "max defects per image");
  synth_cmd->add_option("--radius-min", synth_spec.radius_min, "min defect radius");
  synth_cmd->add_option("--radius-max", synth_spec.radius_max, "max defect radius");
  synth_cmd->add_option("--delta", synth_spec.intensity_delta, "defect intensity shift");

  // fetch-teacher
  auto* fetch_cmd = app.add_subcommand("fetch-teacher", "produce or download a teacher archive");
  bool fetch_toy = false, fetch_random = false;
  std::string fetch_url, fetch_arch = "minires", fetch_out;
  int fetch_input = 0, fetch_epochs = 12;
  uint64_t fetch_seed = 0;
  fetch_cmd->add_option("--out", fetch_out, "archive file to write")->required();
  fetch_cmd->add_flag("--toy", fetch_toy, "pretrain a small teacher on synthetic textures");
  fetch_cmd->add_flag("--random-init", fetch_random, "random weights (pipeline testing only)");
  fetch_cmd->add_option("--url", fetch_url, "download an existing archive");
  fetch_cmd->add_option("--arch", fetch_arch, "architecture id for --random-init");
  fetch_cmd->add_option("--input-size", fetch_input, "expected input resolution");
  fetch_cmd->add_option("--seed", fetch_seed, "random seed");
  fetch_cmd->add_option("--epochs", fetch_epochs, "pretraining epochs for --toy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints help or the parse error
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_ro.resolve());
    if (eval_cmd->parsed()) return cmd_eval(eval_ro.resolve(), eval_ro, eval_checkpoint, eval_run_dir);
    if (score_cmd->parsed())
      return cmd_score(score_ro.resolve(), score_ro, score_checkpoint, score_images);
    if (vis_cmd->parsed())
      return cmd_visualize(vis_ro.resolve(), vis_ro, vis_checkpoint, vis_images, vis_masks);
    if (dump_cmd->parsed())
      return cmd_dump_features(dump_ro.resolve(), dump_ro, dump_checkpoint, dump_image, dump_out);
    if (synth_cmd->parsed()) return cmd_synth_generate(synth_spec, synth_out);
    if (fetch_cmd->parsed())
      return cmd_fetch_teacher(fetch_toy, fetch_random, fetch_url, fetch_arch, fetch_input,
                               fetch_seed, fetch_epochs, fetch_out);
    return kExitConfig;  // unreachable: require_subcommand(1)
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitTrain;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kExitMetric;
  } catch (const LoadError& e) {
    std::cerr << "archive error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace pyrad
