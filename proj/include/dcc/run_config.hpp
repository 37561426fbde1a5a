#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcc/attacks.hpp"
#include "dcc/config.hpp"
#include "dcc/corruptions.hpp"
#include "dcc/data.hpp"
#include "dcc/optim.hpp"
#include "dcc/tensor.hpp"

namespace dcc {

// Text of schema/run_config.schema.json, embedded at build time.
extern const char* const kRunConfigSchema;
const nlohmann::json& run_config_schema();

// Validates `doc` against a JSON-schema subset (type, properties, required,
// additionalProperties, items, minItems, maxItems, enum, minimum, maximum,
// exclusiveMinimum, exclusiveMaximum). Throws ConfigError whose path is the
// JSON pointer of the first offending value.
void validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema);

// Fills missing object members that declare a "default", recursively.
void apply_schema_defaults(nlohmann::json& doc, const nlohmann::json& schema);

// Every documented key as a dotted path ("model.growth_rate",
// "attack.attacks[].epsilon"), with its type, default and description.
struct SchemaKey {
  std::string path;
  std::string type;
  std::string default_value;  // empty when none
  std::string description;
};
std::vector<SchemaKey> schema_keys(const nlohmann::json& schema);

struct DataSection {
  std::string source = "synthetic";
  std::string path;
  std::size_t train_size = 200;
  std::size_t test_size = 200;
  Difficulty difficulty = Difficulty::kSeparable;
};

struct AttackSection {
  std::size_t max_samples = 0;
  std::vector<AttackParams> attacks;
};

struct CorruptionSection {
  std::vector<CorruptionKind> kinds;
  std::string table;
  Architecture baseline_arch = Architecture::kStandardCnn;
  std::string baseline_checkpoint;
};

struct GradcheckSection {
  std::size_t batch = 2;
  std::size_t max_elements_per_group = 0;
  double tolerance = 1e-3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  std::optional<std::string> output_dir;
  Architecture arch = Architecture::kDccEcnn;
  DccConfig model;
  DataSection data;
  TrainConfig train;
  AttackSection attack;
  CorruptionSection corruption;
  GradcheckSection gradcheck;

  // Canonical (defaults applied) JSON; its FNV-1a digest is the config hash.
  nlohmann::json canonical;
  std::string hash() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace dcc
