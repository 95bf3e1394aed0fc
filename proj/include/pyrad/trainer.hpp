#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pyrad/archive.hpp"
#include "pyrad/backbone.hpp"

namespace pyrad {

// Optimization protocol. The defaults are the reference recipe: SGD at
// learning rate 0.4 for 100 epochs, batch 32, 256x256 inputs, 80/20
// train/validation split; momentum and weight decay follow the usual
// residual-network convention.
struct TrainConfig {
  float lr = 0.4f;
  int epochs = 100;
  int batch_size = 32;
  int input_size = 256;
  float val_fraction = 0.2f;
  float train_fraction = 1.f;  // of the post-split training portion
  uint64_t seed = 0;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;

  void validate() const;  // UsageError on out-of-range fields
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  float train_loss = 0.f;
  float val_loss = 0.f;
};

// Best-validation snapshot of a training run, serializable as a weights
// archive with kind "checkpoint".
struct Checkpoint {
  std::string arch_id;
  int input_size = 0;
  NormParams norm;
  PyramidConfig pyramid;
  std::vector<std::pair<std::string, Tensor>> student_state;
  int epoch = 0;  // 1-based epoch the snapshot was taken at
  float val_loss = 0.f;
  std::string config_fingerprint;
  std::string pyramid_fingerprint;
  std::string teacher_fingerprint;
  std::vector<EpochRecord> log;

  void save(const std::filesystem::path& file) const;
  static Checkpoint load(const std::filesystem::path& file);

  // Trainable handle holding the stored student parameters.
  NetworkHandle to_student() const;
};

// Deterministic shuffled split of [0, count), returned as {train, val}.
// Validation takes the first val_fraction of the shuffled order (rounded,
// at least 1, at most count-1); training takes train_fraction of the rest
// (rounded up, at least 1). The two lists never overlap.
std::pair<std::vector<int>, std::vector<int>> split_indices(int count, float val_fraction,
                                                            float train_fraction, uint64_t seed);

// Mean per-image loss over the validation images, eval mode, no updates.
float validate_loss(const NetworkHandle& teacher, const NetworkHandle& student,
                    const std::vector<Tensor>& val_images, const PyramidConfig& pyramid,
                    int batch_size);

// Minibatch gradient descent of the student against the frozen teacher.
// Returns the checkpoint with the lowest validation loss across epochs.
// Writes one JSON line per epoch to `log` when given.
Checkpoint train(const NetworkHandle& teacher, NetworkHandle& student,
                 const std::vector<Tensor>& train_images, const std::vector<Tensor>& val_images,
                 const PyramidConfig& pyramid, const TrainConfig& config,
                 std::ostream* log = nullptr);

// Writes every per-position normalized feature vector of both networks at
// every pyramid level as CSV rows (network, block, y, x, v0, v1, ...).
void dump_features(const NetworkHandle& teacher, const NetworkHandle& student,
                   const Tensor& image, const PyramidConfig& pyramid,
                   const std::filesystem::path& out_csv);

}  // namespace pyrad
