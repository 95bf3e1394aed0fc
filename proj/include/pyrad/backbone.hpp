#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pyrad/archive.hpp"
#include "pyrad/tensor.hpp"

namespace pyrad {

// Which layer groups feed the pyramid and how much each level weighs in the
// total loss. Defaults follow the usual three-middle-blocks setup with unit
// weights.
struct PyramidConfig {
  std::vector<int> block_ids{2, 3, 4};
  std::vector<float> level_weights;  // empty means all ones

  std::vector<float> weights_or_default() const;
  int levels() const { return static_cast<int>(block_ids.size()); }
  // Throws ConfigError unless ids are strictly increasing within
  // [1, max_block_id] and weights (if given) are non-negative and match.
  void validate(int max_block_id) const;
};

// One stage of stride-2-or-1 basic residual blocks.
struct StageSpec {
  int blocks = 1;
  int channels = 0;
  int stride = 1;
};

// A member of the residual family: stem conv (+ optional max-pool handoff)
// followed by basic-block stages. Group ids: 1 = stem output, 2..G = stages.
struct ArchSpec {
  std::string id;
  int in_channels = 3;
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  int stem_pad = 3;
  bool pool_after_stem = true;
  std::vector<StageSpec> stages;
  int head_classes = 0;  // >0 adds GAP+FC for classification pretraining

  int num_groups() const { return 1 + static_cast<int>(stages.size()); }
};

// nullptr if the id is unknown. Known ids: "resnet18", "minires".
const ArchSpec* find_arch(const std::string& id);

// Forward activations recorded for backprop, one slot per layer. Field
// meaning is layer-specific (conv: input; bn: normalized input + inverse
// std; relu: output; pool: argmax indices).
struct LayerSlot {
  Tensor a;
  Tensor b;
  std::vector<int32_t> idx;
  std::vector<int> in_shape;
};
struct Cache {
  std::vector<LayerSlot> slots;
};

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;  // lazily sized by backward
};
struct StateRef {
  std::string name;
  Tensor* value;  // trainable params plus batch-norm running stats
};

class Network {
 public:
  explicit Network(const ArchSpec& spec);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const ArchSpec& spec() const;
  int num_groups() const;

  void init_params(uint64_t seed);

  // Runs groups 1..max(block_ids) and returns the tap outputs in block-id
  // order, one [N,C,H,W] tensor per level. train=false is read-only and safe
  // to call concurrently; train=true updates batch-norm running stats and
  // needs `cache` for a later backward.
  std::vector<Tensor> forward_pyramid(const Tensor& x, const std::vector<int>& block_ids,
                                      bool train, Cache* cache);

  // Full trunk + classifier head; requires head_classes > 0.
  Tensor forward_logits(const Tensor& x, bool train, Cache* cache);

  // Injects dL/d(tap output) per level and accumulates parameter gradients.
  void backward_taps(const std::vector<Tensor>& dtaps, const std::vector<int>& block_ids,
                     Cache& cache);
  void backward_logits(const Tensor& dlogits, Cache& cache);

  void zero_grads();
  std::vector<ParamRef> params();
  std::vector<StateRef> named_state();  // fixed order, shared by archives
  uint64_t state_checksum() const;

  std::unique_ptr<Cache> make_cache() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// A constructed network plus the bookkeeping the rest of the pipeline needs:
// preprocessing convention, expected input size, and the frozen/trainable
// contract (a frozen handle is never mutated; the student has a single
// writer during training).
struct NetworkHandle {
  std::string arch_id;
  int input_size = 0;
  NormParams norm;
  bool frozen = false;
  std::string source_fingerprint;  // archive file fingerprint, if loaded
  std::shared_ptr<Network> net;

  uint64_t checksum() const { return net->state_checksum(); }
  std::vector<std::pair<std::string, std::vector<int>>> layer_shapes() const;
};

// Builds the architecture named in the archive metadata and loads every
// tensor strictly: a missing, extra, or mis-shaped tensor is a LoadError
// naming the offender. The returned handle is frozen.
NetworkHandle load_teacher(const std::filesystem::path& archive_file, const PyramidConfig& config);

// Same architecture, freshly seeded parameters, trainable.
NetworkHandle init_student(const NetworkHandle& teacher, uint64_t seed);

// Read-only feature extraction. Batch must be [N, C, input_size, input_size].
std::vector<Tensor> extract_pyramid(const NetworkHandle& handle, const Tensor& batch,
                                    const PyramidConfig& config);

// Handle whose network holds the given state (used by checkpoint loading and
// the random-init fetch path).
NetworkHandle make_handle_from_archive(const Archive& archive, bool frozen,
                                       const std::string& fingerprint);

// Snapshot of a network's named state as archive tensors.
std::vector<std::pair<std::string, Tensor>> snapshot_state(Network& net);
void restore_state(Network& net, const std::vector<std::pair<std::string, Tensor>>& state);

}  // namespace pyrad
