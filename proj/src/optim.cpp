#include "dcc/optim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "dcc/metrics.hpp"

namespace dcc {

double cosine_lr(int t, const Schedule& sched) {
  if (sched.total_epochs < 0) throw HyperparameterError("cosine_lr: total_epochs must be >= 0");
  if (t < 0 || t > sched.total_epochs) {
    throw HyperparameterError("cosine_lr: epoch " + std::to_string(t) + " outside [0, " +
                              std::to_string(sched.total_epochs) + "]");
  }
  if (sched.total_epochs == 0) return sched.lr0;
  return sched.lr0 * (1.0 + std::cos(std::numbers::pi * t / sched.total_epochs)) / 2.0;
}

template <typename T>
SgdState<T> SgdState<T>::init(const ParamStore<T>& params, const SgdConfig& cfg) {
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw HyperparameterError("sgd: momentum must be in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw HyperparameterError("sgd: weight_decay must be >= 0");
  SgdState s;
  s.cfg = cfg;
  for (ParamId id = 0; id < params.size(); ++id) {
    if (!is_trainable(params.kind(id))) continue;
    s.names.push_back(params.name(id));
    s.ids.push_back(id);
    s.velocity.emplace_back(params.tensor(id).size(), T(0));
  }
  return s;
}

template <typename T>
void sgd_step(ParamStore<T>& params, SgdState<T>& state, double lr) {
  std::size_t trainable = 0;
  for (ParamId id = 0; id < params.size(); ++id) trainable += is_trainable(params.kind(id));
  if (trainable != state.ids.size()) throw Error("sgd: optimizer state does not match the parameter registry");
  const T mu = static_cast<T>(state.cfg.momentum);
  const T step = static_cast<T>(lr);
  for (std::size_t k = 0; k < state.ids.size(); ++k) {
    const ParamId id = state.ids[k];
    if (params.name(id) != state.names[k] || params.tensor(id).size() != state.velocity[k].size()) {
      throw Error("sgd: optimizer state does not match parameter '" + state.names[k] + "'");
    }
    Tensor<T>& w = params.tensor(id);
    const T wd = is_decayed(params.kind(id)) ? static_cast<T>(state.cfg.weight_decay) : T(0);
    const std::vector<T>& g = w.grad();
    std::vector<T>& v = state.velocity[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = (g.empty() ? T(0) : g[i]) + wd * w[i];
      v[i] = mu * v[i] + gi;
      w[i] -= step * v[i];
    }
  }
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = std::string(kTrainLogHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fixed(r.lr) + "," + fixed(r.train_loss) + "," + fixed(r.train_acc) + "," +
           (r.val_acc ? fixed(*r.val_acc) : std::string()) + "\n";
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << to_csv();
}

template <typename T>
TrainLog train(Model<T>& model, const LabeledImageSet& train_set, const LabeledImageSet* val_set,
               const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw HyperparameterError("train: epochs must be >= 0");
  if (cfg.batch_size == 0) throw HyperparameterError("train: batch_size must be >= 1");
  if (train_set.size() == 0) throw DataError("train: empty training set");
  cfg.augment.validate();

  TrainLog log;
  SgdState<T> state = SgdState<T>::init(model.params(), cfg.sgd);
  const Rng root(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.schedule);
    Rng shuffle = root.split(streams::kShuffle).split(static_cast<std::uint64_t>(epoch));
    const Rng aug_root = root.split(streams::kAugment).split(static_cast<std::uint64_t>(epoch));
    Rng drop = root.split(streams::kDropout).split(static_cast<std::uint64_t>(epoch));
    const auto order = shuffled_indices(train_set.size(), shuffle);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Batch batch = make_batch(train_set, idx, &cfg.augment, &aug_root);

      Tape<T> tape;
      Var<T> x;
      if constexpr (std::is_same_v<T, float>) {
        x = tape.constant(std::move(batch.images));
      } else {
        x = tape.constant(batch.images.template cast<T>());
      }
      const auto out = model.forward(tape, x, Mode::kTrain, &drop);
      const Var<T> loss = model.loss(out, batch.labels);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_index + 1));
      }
      model.params().zero_grad();
      tape.backward(loss);
      sgd_step(model.params(), state, lr);

      loss_sum += lv * static_cast<double>(idx.size());
      const auto pred = argmax_rows(out.logits.value());
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    TrainLogRow row;
    row.epoch = epoch + 1;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(train_set.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (val_set) row.val_acc = accuracy(model, *val_set, 256, cfg.eval_workers);
    log.rows.push_back(row);
  }
  model.params().zero_grad();
  return log;
}

template struct SgdState<float>;
template struct SgdState<double>;
template void sgd_step(ParamStore<float>&, SgdState<float>&, double);
template void sgd_step(ParamStore<double>&, SgdState<double>&, double);
template TrainLog train(Model<float>&, const LabeledImageSet&, const LabeledImageSet*, const TrainConfig&);
template TrainLog train(Model<double>&, const LabeledImageSet&, const LabeledImageSet*, const TrainConfig&);

}  // namespace dcc
