#include "dcc/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace dcc {

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_rows: expected [N,K], got " + shape_str(scores.shape()));
  const std::size_t N = scores.dim(0), K = scores.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (scores[n * K + k] > scores[n * K + best]) best = k;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
Classifier classifier_of(const Model<T>& model) {
  return [&model](const Tensor<float>& images) {
    if constexpr (std::is_same_v<T, float>) {
      return argmax_rows(model.logits(images));
    } else {
      return argmax_rows(model.logits(images.template cast<T>()));
    }
  };
}

void parallel_chunks(std::size_t n, std::size_t chunk, std::size_t workers,
                     const std::function<void(std::size_t, std::size_t)>& fn) {
  if (chunk == 0) throw Error("parallel_chunks: chunk size must be positive");
  const std::size_t chunks = (n + chunk - 1) / chunk;
  workers = std::max<std::size_t>(1, std::min(workers, chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < chunks; c = next++) {
        try {
          fn(c * chunk, std::min(n, (c + 1) * chunk));
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<int> predict(const Classifier& classify, const LabeledImageSet& set, std::size_t batch_size,
                         std::size_t workers) {
  std::vector<int> out(set.size());
  parallel_chunks(set.size(), batch_size, workers, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    const auto pred = classify(make_batch(set, idx).images);
    std::copy(pred.begin(), pred.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw Error("accuracy: prediction/label count mismatch");
  if (labels.empty()) throw Error("accuracy: empty dataset");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);
template Classifier classifier_of(const Model<float>&);
template Classifier classifier_of(const Model<double>&);

}  // namespace dcc
