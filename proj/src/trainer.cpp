#include "pyrad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "pyrad/distill.hpp"
#include "pyrad/error.hpp"
#include "pyrad/rng.hpp"

namespace pyrad {

void TrainConfig::validate() const {
  if (lr <= 0.f) throw UsageError("learning rate must be positive");
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  if (input_size < 8) throw UsageError("input size must be at least 8");
  if (!(val_fraction > 0.f && val_fraction < 1.f))
    throw UsageError("validation fraction must lie in (0, 1)");
  if (!(train_fraction > 0.f && train_fraction <= 1.f))
    throw UsageError("train fraction must lie in (0, 1]");
  if (momentum < 0.f || momentum >= 1.f) throw UsageError("momentum must lie in [0, 1)");
  if (weight_decay < 0.f) throw UsageError("weight decay must be non-negative");
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int count, float val_fraction,
                                                            float train_fraction, uint64_t seed) {
  if (count < 2) throw UsageError("need at least 2 images to split, got " + std::to_string(count));
  if (!(val_fraction > 0.f && val_fraction < 1.f))
    throw UsageError("validation fraction must lie in (0, 1)");
  if (!(train_fraction > 0.f && train_fraction <= 1.f))
    throw UsageError("train fraction must lie in (0, 1]");

  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5117));
  rng.shuffle(order);

  int val_count = static_cast<int>(std::lround(static_cast<double>(count) * val_fraction));
  val_count = std::clamp(val_count, 1, count - 1);
  std::vector<int> val(order.begin(), order.begin() + val_count);

  const int pool = count - val_count;
  // The 1e-6 slack keeps float representation noise in the fraction (e.g.
  // 0.05f being slightly above 1/20) from bumping the ceiling one step up.
  const int train_count = std::max(
      1, static_cast<int>(std::ceil(static_cast<double>(pool) * train_fraction - 1e-6)));
  std::vector<int> train(order.begin() + val_count, order.begin() + val_count + train_count);
  return {std::move(train), std::move(val)};
}

namespace {

std::vector<int> identity_order(std::size_t n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

struct SgdState {
  std::vector<Tensor> velocity;

  void step(std::vector<ParamRef>& params, float lr, float momentum, float weight_decay) {
    if (velocity.empty()) velocity.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& g = *params[p].grad;
      if (g.empty()) continue;  // parameter untouched by this backward
      Tensor& w = *params[p].value;
      Tensor& v = velocity[p];
      if (v.empty()) v = Tensor(w.shape);
      for (std::size_t i = 0; i < w.numel(); ++i) {
        v.data[i] = momentum * v.data[i] + g.data[i] + weight_decay * w.data[i];
        w.data[i] -= lr * v.data[i];
      }
    }
  }
};

void check_compatible(const NetworkHandle& teacher, const NetworkHandle& student) {
  if (!teacher.net || !student.net) throw UsageError("invalid network handle");
  if (teacher.arch_id != student.arch_id)
    throw ConfigError("teacher architecture '" + teacher.arch_id + "' does not match student '" +
                      student.arch_id + "'");
}

}  // namespace

float validate_loss(const NetworkHandle& teacher, const NetworkHandle& student,
                    const std::vector<Tensor>& val_images, const PyramidConfig& pyramid,
                    int batch_size) {
  check_compatible(teacher, student);
  if (val_images.empty()) throw UsageError("validation set is empty");
  const std::vector<int> order = identity_order(val_images.size());
  double sum = 0.0;
  for (std::size_t b = 0; b < val_images.size(); b += static_cast<std::size_t>(batch_size)) {
    const int end = static_cast<int>(std::min(val_images.size(), b + static_cast<std::size_t>(batch_size)));
    const Tensor batch = stack_images(val_images, order, static_cast<int>(b), end);
    const std::vector<Tensor> taps_t =
        teacher.net->forward_pyramid(batch, pyramid.block_ids, false, nullptr);
    const std::vector<Tensor> taps_s =
        student.net->forward_pyramid(batch, pyramid.block_ids, false, nullptr);
    for (int i = 0; i < batch.dim(0); ++i) {
      std::vector<Tensor> pyr_t, pyr_s;
      for (std::size_t l = 0; l < taps_t.size(); ++l) {
        pyr_t.push_back(image_slice(taps_t[l], i));
        pyr_s.push_back(image_slice(taps_s[l], i));
      }
      sum += total_loss(pyr_t, pyr_s, pyramid).total;
    }
  }
  return static_cast<float>(sum / static_cast<double>(val_images.size()));
}

Checkpoint train(const NetworkHandle& teacher, NetworkHandle& student,
                 const std::vector<Tensor>& train_images, const std::vector<Tensor>& val_images,
                 const PyramidConfig& pyramid, const TrainConfig& config, std::ostream* log) {
  config.validate();
  check_compatible(teacher, student);
  if (!teacher.frozen) throw UsageError("teacher handle must be frozen");
  if (train_images.empty()) throw UsageError("training set is empty");
  if (val_images.empty()) throw UsageError("validation set is empty");
  pyramid.validate(teacher.net->num_groups());

  auto cache = student.net->make_cache();
  std::vector<ParamRef> params = student.net->params();
  SgdState sgd;

  Checkpoint best;
  best.arch_id = student.arch_id;
  best.input_size = config.input_size;
  best.norm = teacher.norm;
  best.pyramid = pyramid;
  best.teacher_fingerprint = teacher.source_fingerprint;
  best.val_loss = std::numeric_limits<float>::infinity();

  std::vector<int> order = identity_order(train_images.size());
  for (int e = 1; e <= config.epochs; ++e) {
    Rng rng(mix_seed(config.seed, static_cast<uint64_t>(e)));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const int end = static_cast<int>(
          std::min(order.size(), b + static_cast<std::size_t>(config.batch_size)));
      const Tensor batch = stack_images(train_images, order, static_cast<int>(b), end);

      const std::vector<Tensor> taps_t =
          teacher.net->forward_pyramid(batch, pyramid.block_ids, false, nullptr);
      const std::vector<Tensor> taps_s =
          student.net->forward_pyramid(batch, pyramid.block_ids, true, cache.get());

      std::vector<Tensor> dtaps;
      const double loss = batch_loss_and_grad(taps_t, taps_s, pyramid, dtaps);
      if (!std::isfinite(loss))
        throw TrainError("training loss diverged at epoch " + std::to_string(e));
      epoch_loss += loss;
      ++batches;

      student.net->zero_grads();
      student.net->backward_taps(dtaps, pyramid.block_ids, *cache);
      sgd.step(params, config.lr, config.momentum, config.weight_decay);
    }

    EpochRecord rec;
    rec.epoch = e;
    rec.train_loss = static_cast<float>(epoch_loss / static_cast<double>(batches));
    rec.val_loss = validate_loss(teacher, student, val_images, pyramid, config.batch_size);
    if (!std::isfinite(rec.val_loss))
      throw TrainError("validation loss diverged at epoch " + std::to_string(e));
    best.log.push_back(rec);
    if (log) {
      nlohmann::json line = {
          {"epoch", rec.epoch}, {"train_loss", rec.train_loss}, {"val_loss", rec.val_loss}};
      *log << line.dump() << "\n";
    }

    if (rec.val_loss < best.val_loss) {
      best.val_loss = rec.val_loss;
      best.epoch = e;
      best.student_state = snapshot_state(*student.net);
    }
  }
  return best;
}

void Checkpoint::save(const std::filesystem::path& file) const {
  Archive archive;
  archive.meta.kind = "checkpoint";
  archive.meta.arch_id = arch_id;
  archive.meta.input_size = input_size;
  archive.meta.norm = norm;
  nlohmann::json log_json = nlohmann::json::array();
  for (const EpochRecord& r : log) log_json.push_back({r.epoch, r.train_loss, r.val_loss});
  archive.meta.extra = {{"epoch", epoch},
                        {"val_loss", val_loss},
                        {"config_fingerprint", config_fingerprint},
                        {"pyramid_fingerprint", pyramid_fingerprint},
                        {"teacher_fingerprint", teacher_fingerprint},
                        {"blocks", pyramid.block_ids},
                        {"level_weights", pyramid.level_weights},
                        {"log", log_json}};
  archive.tensors = student_state;
  archive.save(file);
}

Checkpoint Checkpoint::load(const std::filesystem::path& file) {
  const Archive archive = Archive::load(file);
  if (archive.meta.kind != "checkpoint")
    throw LoadError("archive " + file.string() + " is a '" + archive.meta.kind +
                    "', not a checkpoint");
  Checkpoint ck;
  ck.arch_id = archive.meta.arch_id;
  ck.input_size = archive.meta.input_size;
  ck.norm = archive.meta.norm;
  ck.student_state = archive.tensors;
  const nlohmann::json& x = archive.meta.extra;
  try {
    ck.epoch = x.at("epoch").get<int>();
    ck.val_loss = x.at("val_loss").get<float>();
    ck.config_fingerprint = x.at("config_fingerprint").get<std::string>();
    ck.pyramid_fingerprint = x.at("pyramid_fingerprint").get<std::string>();
    ck.teacher_fingerprint = x.at("teacher_fingerprint").get<std::string>();
    ck.pyramid.block_ids = x.at("blocks").get<std::vector<int>>();
    ck.pyramid.level_weights = x.at("level_weights").get<std::vector<float>>();
    for (const auto& row : x.at("log"))
      ck.log.push_back({row.at(0).get<int>(), row.at(1).get<float>(), row.at(2).get<float>()});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint " + file.string() + " has malformed metadata: " + e.what());
  }
  return ck;
}

NetworkHandle Checkpoint::to_student() const {
  const ArchSpec* spec = find_arch(arch_id);
  if (!spec) throw LoadError("checkpoint references unknown architecture '" + arch_id + "'");
  NetworkHandle h;
  h.arch_id = arch_id;
  h.input_size = input_size;
  h.norm = norm;
  h.frozen = false;
  h.net = std::make_shared<Network>(*spec);
  restore_state(*h.net, student_state);
  return h;
}

void dump_features(const NetworkHandle& teacher, const NetworkHandle& student,
                   const Tensor& image, const PyramidConfig& pyramid,
                   const std::filesystem::path& out_csv) {
  check_compatible(teacher, student);
  pyramid.validate(teacher.net->num_groups());
  if (image.ndim() != 3)
    throw DimensionError("dump_features expects a [C,H,W] image, got " + image.shape_str());

  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  batch.data = image.data;

  std::ofstream out(out_csv);
  if (!out) throw IoError("cannot open " + out_csv.string() + " for writing");

  auto write_rows = [&out, &pyramid](const char* which, const std::vector<Tensor>& taps) {
    for (std::size_t l = 0; l < taps.size(); ++l) {
      const Tensor norm = normalize_positions(image_slice(taps[l], 0));
      const int c = norm.dim(0), h = norm.dim(1), w = norm.dim(2);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          out << which << ',' << pyramid.block_ids[l] << ',' << y << ',' << x;
          for (int ci = 0; ci < c; ++ci) out << ',' << norm.at3(ci, y, x);
          out << '\n';
        }
    }
  };
  out << "network,block,y,x,features...\n";
  write_rows("teacher", teacher.net->forward_pyramid(batch, pyramid.block_ids, false, nullptr));
  write_rows("student", student.net->forward_pyramid(batch, pyramid.block_ids, false, nullptr));
  out.close();
  if (!out) throw IoError("failed writing " + out_csv.string());
}

}  // namespace pyrad
