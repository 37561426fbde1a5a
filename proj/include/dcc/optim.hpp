#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcc/data.hpp"
#include "dcc/params.hpp"
#include "dcc/topology.hpp"

namespace dcc {

struct Schedule {
  double lr0 = 0.1;
  int total_epochs = 200;
};

// lr0 * (1 + cos(pi t / T)) / 2 for 0 <= t <= T. With T == 0 the rate stays lr0.
double cosine_lr(int t, const Schedule& sched);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// One momentum buffer per trainable parameter, keyed by parameter name.
template <typename T>
struct SgdState {
  SgdConfig cfg;
  std::vector<std::string> names;
  std::vector<ParamId> ids;
  std::vector<std::vector<T>> velocity;

  static SgdState init(const ParamStore<T>& params, const SgdConfig& cfg);
};

// g' = g + wd * w (conv/fc weights only), v = mu * v + g', w -= lr * v.
// Gradients are read from each tensor's grad(); a tensor without one is
// treated as having a zero gradient.
template <typename T>
void sgd_step(ParamStore<T>& params, SgdState<T>& state, double lr);

struct TrainLogRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;

  bool operator==(const TrainLogRow&) const = default;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  bool operator==(const TrainLog&) const = default;
};

inline constexpr const char* kTrainLogHeader = "epoch,lr,train_loss,train_acc,val_acc";

struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 128;
  Schedule schedule{0.1, 200};
  SgdConfig sgd;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  std::size_t eval_workers = 1;
};

// Mini-batch SGD over shuffled epochs with BN in train mode. The learning
// rate of epoch e (0-based) is cosine_lr(e, schedule). train_acc is the
// running accuracy over the epoch's training batches. Deterministic given
// the seed. Throws NumericError naming the epoch and batch on a non-finite
// loss.
template <typename T>
TrainLog train(Model<T>& model, const LabeledImageSet& train_set, const LabeledImageSet* val_set,
               const TrainConfig& cfg);

}  // namespace dcc
