#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcc/data.hpp"
#include "dcc/metrics.hpp"

namespace dcc {

enum class CorruptionKind { kGaussianNoise, kGaussianBlur, kContrast, kFog };

inline constexpr int kSeverities = 5;

std::string to_string(CorruptionKind k);
// Throws for unknown names and for the registered but unimplemented kinds.
CorruptionKind corruption_kind_from_string(const std::string& s);
const std::vector<CorruptionKind>& all_corruptions();
// Remaining benchmark kinds, recognised by name only.
const std::vector<std::string>& unimplemented_corruptions();

// Per-kind parameter for severities 1..5, loaded from a key-value text file:
//   version = 1
//   gaussian_noise.sigma = s1 s2 s3 s4 s5
//   gaussian_blur.sigma = ...
//   contrast.factor = ...
//   fog.t = ...
// Strength must strictly increase with severity (contrast factor strictly
// decreases); violations are rejected at load.
class CorruptionTable {
 public:
  static CorruptionTable parse(const std::string& text, const std::string& source = "<string>");
  static CorruptionTable load(const std::filesystem::path& path);
  // The table shipped in the repository's data directory.
  static CorruptionTable builtin();
  static std::filesystem::path builtin_path();

  double param(CorruptionKind kind, int severity) const;
  const std::array<double, kSeverities>& row(CorruptionKind kind) const { return rows_.at(kind); }

  // Copy with one row multiplied by `factor` (no monotonicity re-check).
  CorruptionTable scaled(CorruptionKind kind, double factor) const;

 private:
  std::map<CorruptionKind, std::array<double, kSeverities>> rows_;
};

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 1;
  std::uint64_t seed = 0;
};

// --- parameterized primitives on one [C,H,W] image; outputs clipped to [0,1].
Tensor<float> gaussian_noise(const Tensor<float>& img, double sigma, Rng& rng);
// Separable normalized Gaussian, radius ceil(3 sigma), reflect padding.
Tensor<float> gaussian_blur(const Tensor<float>& img, double sigma);
// (x - mean) * factor + mean, mean over the whole image.
Tensor<float> contrast(const Tensor<float>& img, double factor);
// Diamond-square plasma normalized to [0,1], one field for all channels.
Tensor<float> plasma_field(std::size_t height, std::size_t width, Rng& rng);
Tensor<float> fog(const Tensor<float>& img, double t, Rng& rng);

// Applies spec with the table's parameter; the image's stream is
// Rng(spec.seed).split(kCorruption).
Tensor<float> corrupt(const Tensor<float>& img, const CorruptionSpec& spec, const CorruptionTable& table);

// Corrupts every image of a set (image i uses a stream split by i) and
// quantizes pixels to multiples of 1/255, the on-disk cache resolution.
LabeledImageSet corrupt_set(const LabeledImageSet& clean, CorruptionKind kind, int severity,
                            const CorruptionTable& table, std::uint64_t seed);

// Like corrupt_set, but reuses or fills a CIFAR-format cache file in
// `cache_dir`. The file name carries a digest of the inputs, so a stale cache
// is never read.
LabeledImageSet cached_corrupt_set(const LabeledImageSet& clean, CorruptionKind kind, int severity,
                                   const CorruptionTable& table, std::uint64_t seed,
                                   const std::filesystem::path& cache_dir);

struct CorruptionResult {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  std::array<double, kSeverities> errors{};  // top-1 error per severity
  double ce = 0.0;                           // sum of errors
};

CorruptionResult corruption_error(const Classifier& classify, const LabeledImageSet& clean, CorruptionKind kind,
                                  const CorruptionTable& table, std::uint64_t seed,
                                  const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                                  std::size_t workers = 1);

// 100 * mean over kinds of model / baseline.
double mce(const std::map<CorruptionKind, double>& model_ce, const std::map<CorruptionKind, double>& baseline_ce);

}  // namespace dcc
