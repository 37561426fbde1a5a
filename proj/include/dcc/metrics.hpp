#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dcc/data.hpp"
#include "dcc/topology.hpp"

namespace dcc {

// Row-wise argmax of [N,K] scores; ties go to the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores);

// Maps a batch of [0,1] images to class predictions.
using Classifier = std::function<std::vector<int>(const Tensor<float>& images)>;

template <typename T>
Classifier classifier_of(const Model<T>& model);

// Eval-mode predictions for every sample, batch by batch. With workers > 1,
// batches are spread over threads; every batch is computed independently, so
// the result does not depend on the worker count.
std::vector<int> predict(const Classifier& classify, const LabeledImageSet& set, std::size_t batch_size = 256,
                         std::size_t workers = 1);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

template <typename T>
double accuracy(const Model<T>& model, const LabeledImageSet& set, std::size_t batch_size = 256,
                std::size_t workers = 1) {
  const auto pred = predict(classifier_of(model), set, batch_size, workers);
  return accuracy(pred, set.labels);
}

// Runs fn(begin, end) over [0, n) in chunks of `chunk`, on up to `workers`
// threads. Chunk boundaries do not depend on the worker count.
void parallel_chunks(std::size_t n, std::size_t chunk, std::size_t workers,
                     const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace dcc
