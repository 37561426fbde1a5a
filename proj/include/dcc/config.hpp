#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dcc {

enum class Architecture { kDccEcnn, kStandardCnn, kEnsembleCnn, kSingleDenseNet };

// How ensemble members are fused into one prediction.
enum class EnsembleFusion { kProbability, kLogit };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);
std::string to_string(EnsembleFusion f);
EnsembleFusion fusion_from_string(const std::string& s);

struct DccConfig {
  int num_paths = 3;
  int blocks_per_path = 2;
  // [path][block] dense layer counts.
  std::vector<std::vector<int>> layers_per_block{{4, 4}, {4, 4}, {4, 4}};
  int growth_rate = 12;
  int stem_channels = 24;
  double compression = 0.5;
  double dropout_rate = 0.2;
  int num_classes = 10;
  std::array<int, 3> input_shape{3, 32, 32};
  std::uint64_t seed = 0;
  // One stem feeding every path instead of one stem per path.
  bool shared_stem = false;
  // Baseline ensembles only.
  EnsembleFusion ensemble_fusion = EnsembleFusion::kProbability;
  // Fixed input normalization, applied inside the model so callers (and
  // attacks) work on [0,1] pixels.
  std::vector<double> input_mean{0.0, 0.0, 0.0};
  std::vector<double> input_std{1.0, 1.0, 1.0};

  // Successor of 0-based path p under the cyclic cross-connection shift.
  int successor(int p) const { return (p + 1) % num_paths; }
};

// Throws ConfigError with a "/model/<field>" path for the first violation.
// `min_paths` is 2 for the cross-connected network; single-path baselines pass 1.
void validate(const DccConfig& cfg, int min_paths = 2);

// Small configuration used by tests and the toy experiments: k=2, C0=4,
// one layer per block, two classes, 3x16x16 inputs.
DccConfig tiny_config();

}  // namespace dcc
