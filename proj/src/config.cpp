#include "dcc/config.hpp"

#include <cmath>

#include "dcc/error.hpp"

namespace dcc {

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kDccEcnn: return "dcc_ecnn";
    case Architecture::kStandardCnn: return "standard_cnn";
    case Architecture::kEnsembleCnn: return "ensemble_cnn";
    case Architecture::kSingleDenseNet: return "single_densenet";
  }
  return "unknown";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "dcc_ecnn") return Architecture::kDccEcnn;
  if (s == "standard_cnn") return Architecture::kStandardCnn;
  if (s == "ensemble_cnn") return Architecture::kEnsembleCnn;
  if (s == "single_densenet") return Architecture::kSingleDenseNet;
  throw ConfigError("/model/arch", "unknown architecture '" + s + "'");
}

std::string to_string(EnsembleFusion f) { return f == EnsembleFusion::kProbability ? "probability" : "logit"; }

EnsembleFusion fusion_from_string(const std::string& s) {
  if (s == "probability") return EnsembleFusion::kProbability;
  if (s == "logit") return EnsembleFusion::kLogit;
  throw ConfigError("/model/ensemble_fusion", "unknown fusion '" + s + "'");
}

void validate(const DccConfig& cfg, int min_paths) {
  if (cfg.num_paths < min_paths) {
    throw ConfigError("/model/num_paths", "must be >= " + std::to_string(min_paths));
  }
  if (cfg.blocks_per_path < 1) throw ConfigError("/model/blocks_per_path", "must be >= 1");
  if (cfg.layers_per_block.size() != static_cast<std::size_t>(cfg.num_paths)) {
    throw ConfigError("/model/layers_per_block", "needs one row per path (" + std::to_string(cfg.num_paths) + ")");
  }
  for (std::size_t p = 0; p < cfg.layers_per_block.size(); ++p) {
    const auto& row = cfg.layers_per_block[p];
    const std::string row_path = "/model/layers_per_block/" + std::to_string(p);
    if (row.size() != static_cast<std::size_t>(cfg.blocks_per_path)) {
      throw ConfigError(row_path, "needs one entry per block (" + std::to_string(cfg.blocks_per_path) + ")");
    }
    for (std::size_t b = 0; b < row.size(); ++b) {
      if (row[b] < 1) throw ConfigError(row_path + "/" + std::to_string(b), "must be >= 1");
    }
  }
  if (cfg.growth_rate < 1) throw ConfigError("/model/growth_rate", "must be >= 1");
  if (cfg.stem_channels < 1) throw ConfigError("/model/stem_channels", "must be >= 1");
  if (!(cfg.compression > 0.0 && cfg.compression <= 1.0)) {
    throw ConfigError("/model/compression", "must be in (0, 1]");
  }
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw ConfigError("/model/dropout_rate", "must be in [0, 1)");
  }
  if (cfg.num_classes < 2) throw ConfigError("/model/num_classes", "must be >= 2");
  for (std::size_t i = 0; i < 3; ++i) {
    if (cfg.input_shape[i] < 1) throw ConfigError("/model/input_shape/" + std::to_string(i), "must be >= 1");
  }
  const auto channels = static_cast<std::size_t>(cfg.input_shape[0]);
  if (cfg.input_mean.size() != channels) throw ConfigError("/model/input_mean", "needs one value per input channel");
  if (cfg.input_std.size() != channels) throw ConfigError("/model/input_std", "needs one value per input channel");
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(cfg.input_std[c] > 0.0) || !std::isfinite(cfg.input_std[c])) {
      throw ConfigError("/model/input_std/" + std::to_string(c), "must be positive");
    }
  }
}

DccConfig tiny_config() {
  DccConfig cfg;
  cfg.num_paths = 3;
  cfg.blocks_per_path = 2;
  cfg.layers_per_block = {{1, 1}, {1, 1}, {1, 1}};
  cfg.growth_rate = 2;
  cfg.stem_channels = 4;
  cfg.compression = 0.5;
  cfg.dropout_rate = 0.2;
  cfg.num_classes = 2;
  cfg.input_shape = {3, 16, 16};
  return cfg;
}

}  // namespace dcc
