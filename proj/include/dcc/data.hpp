#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcc/rng.hpp"
#include "dcc/tensor.hpp"

namespace dcc {

// Images are [N,C,H,W] in [0,1]. Stored in single precision; F64 models cast
// per batch.
struct LabeledImageSet {
  Tensor<float> images;
  std::vector<int> labels;
  int class_count = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_size() const { return channels() * height() * width(); }

  // Throws DataError unless N >= 1, labels are in range and pixels in [0,1].
  void check() const;

  LabeledImageSet subset(std::span<const std::size_t> indices) const;
};

// ---------------------------------------------------------------- CIFAR binary

// Record = label_bytes label bytes, then channels*height*width pixel bytes
// (plane by plane, row-major). The class label is byte `label_index`.
struct CifarFormat {
  std::size_t label_bytes = 1;
  std::size_t label_index = 0;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  int num_classes = 10;

  std::size_t record_size() const { return label_bytes + channels * height * width; }

  static CifarFormat cifar10(std::size_t size = 32) { return {1, 0, 3, size, size, 10}; }
  // Coarse label first, fine label second; the fine label is exposed.
  static CifarFormat cifar100(std::size_t size = 32) { return {2, 1, 3, size, size, 100}; }
};

LabeledImageSet read_cifar_file(const std::filesystem::path& path, const CifarFormat& fmt, const std::string& split);
// Pixels are written as round(255 * v); other label bytes are written as 0.
void write_cifar_file(const std::filesystem::path& path, const LabeledImageSet& set, const CifarFormat& fmt);

// data_batch_1..5.bin and test_batch.bin.
std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::filesystem::path& dir);
// train.bin and test.bin.
std::pair<LabeledImageSet, LabeledImageSet> load_cifar100(const std::filesystem::path& dir);

// ---------------------------------------------------------------- synthetic

enum class Difficulty { kSeparable, kNoisy };
std::string to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& s);

// Class-conditional 3-channel images: an oriented intensity gradient plus a
// blob at a class-specific position and a class tint. Sample i has label
// i % classes. Pixels are quantized to multiples of 1/255 so the set survives
// a CIFAR-format round trip exactly.
LabeledImageSet synthetic_dataset(std::size_t n, int classes, std::size_t size, Difficulty difficulty,
                                  std::uint64_t seed);

// ---------------------------------------------------------------- augmentation

struct AugmentConfig {
  bool enabled = true;
  int crop_padding = 4;
  double flip_prob = 0.5;
  double rotation_degrees = 15.0;

  void validate() const;
};

// Single image [C,H,W] helpers.
Tensor<float> reflect_pad_crop(const Tensor<float>& img, int padding, int dy, int dx);
Tensor<float> hflip(const Tensor<float>& img);
// Bilinear rotation about the image centre, zero fill outside the source.
Tensor<float> rotate(const Tensor<float>& img, double degrees);

// crop -> flip -> rotate, then clamp to [0,1]. Identity when disabled.
Tensor<float> augment(const Tensor<float>& img, const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------- normalization

// (x - mean[c]) / std[c] over an [N,C,H,W] tensor.
Tensor<float> normalize(const Tensor<float>& x, std::span<const double> mean, std::span<const double> stddev);
Tensor<float> denormalize(const Tensor<float>& x, std::span<const double> mean, std::span<const double> stddev);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ChannelStats channel_stats(const LabeledImageSet& set);

// ---------------------------------------------------------------- batching

Tensor<float> image_at(const LabeledImageSet& set, std::size_t i);

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

// Gathers samples `indices`. With `augment_cfg` enabled, sample j is
// augmented with a stream split from `rng_root` by its dataset index, so the
// result does not depend on batch composition or evaluation order.
Batch make_batch(const LabeledImageSet& set, std::span<const std::size_t> indices,
                 const AugmentConfig* augment_cfg = nullptr, const Rng* rng_root = nullptr);

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace dcc
