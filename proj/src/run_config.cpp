#include "dcc/run_config.hpp"

#include <fstream>
#include <sstream>

#include "dcc/error.hpp"
#include "dcc/hash.hpp"

namespace dcc {

using nlohmann::json;

const json& run_config_schema() {
  static const json schema = json::parse(kRunConfigSchema);
  return schema;
}

namespace {

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

std::string type_name(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return "null";
}

bool has_type(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  throw Error("schema: unsupported type '" + type + "'");
}

void validate_at(const json& v, const json& s, const std::string& path) {
  const std::string where = path.empty() ? "/" : path;
  if (s.contains("type") && !has_type(v, s["type"].get<std::string>())) {
    throw ConfigError(where, "expected " + s["type"].get<std::string>() + ", got " + type_name(v));
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == v;
    if (!found) throw ConfigError(where, "value " + v.dump() + " is not one of " + s["enum"].dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) {
      throw ConfigError(where, "value " + v.dump() + " is below the minimum " + s["minimum"].dump());
    }
    if (s.contains("maximum") && x > s["maximum"].get<double>()) {
      throw ConfigError(where, "value " + v.dump() + " is above the maximum " + s["maximum"].dump());
    }
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) {
      throw ConfigError(where, "value " + v.dump() + " must be greater than " + s["exclusiveMinimum"].dump());
    }
    if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) {
      throw ConfigError(where, "value " + v.dump() + " must be less than " + s["exclusiveMaximum"].dump());
    }
  }
  if (v.is_object()) {
    const json props = s.value("properties", json::object());
    if (s.contains("required")) {
      for (const auto& r : s["required"]) {
        if (!v.contains(r.get<std::string>())) {
          throw ConfigError(path + "/" + escape_pointer(r.get<std::string>()), "required key is missing");
        }
      }
    }
    for (const auto& [key, child] : v.items()) {
      const std::string child_path = path + "/" + escape_pointer(key);
      if (props.contains(key)) {
        validate_at(child, props[key], child_path);
      } else if (!s.value("additionalProperties", true)) {
        throw ConfigError(child_path, "unknown key");
      }
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
      throw ConfigError(where, "needs at least " + s["minItems"].dump() + " items");
    }
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
      throw ConfigError(where, "allows at most " + s["maxItems"].dump() + " items");
    }
    if (s.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) validate_at(v[i], s["items"], path + "/" + std::to_string(i));
    }
  }
}

void collect_keys(const json& s, const std::string& prefix, std::vector<SchemaKey>& out) {
  const json props = s.value("properties", json::object());
  for (const auto& [key, child] : props.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    SchemaKey k;
    k.path = path;
    k.type = child.value("type", "");
    if (child.contains("enum")) {
      std::string alts;
      for (const auto& e : child["enum"]) alts += (alts.empty() ? "" : "|") + (e.is_string() ? e.get<std::string>() : e.dump());
      k.type += " " + alts;
    }
    if (child.contains("default") && !(k.type == "object")) k.default_value = child["default"].dump();
    k.description = child.value("description", "");
    out.push_back(k);
    if (child.value("type", "") == "object") collect_keys(child, path, out);
    if (child.value("type", "") == "array" && child.contains("items") && child["items"].value("type", "") == "object") {
      collect_keys(child["items"], path + "[]", out);
    }
  }
}

}  // namespace

void validate_against_schema(const json& doc, const json& schema) { validate_at(doc, schema, ""); }

void apply_schema_defaults(json& doc, const json& schema) {
  if (doc.is_object()) {
    const json props = schema.value("properties", json::object());
    for (const auto& [key, child] : props.items()) {
      if (!doc.contains(key) && child.contains("default")) doc[key] = child["default"];
      if (doc.contains(key)) apply_schema_defaults(doc[key], child);
    }
  } else if (doc.is_array() && schema.contains("items")) {
    for (auto& item : doc) apply_schema_defaults(item, schema["items"]);
  }
}

std::vector<SchemaKey> schema_keys(const json& schema) {
  std::vector<SchemaKey> out;
  collect_keys(schema, "", out);
  return out;
}

std::string RunConfig::hash() const { return Fnv1a().text(canonical.dump()).hex(); }

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON: ") + e.what());
  }
  const json& schema = run_config_schema();
  validate_against_schema(doc, schema);
  apply_schema_defaults(doc, schema);
  validate_against_schema(doc, schema);

  RunConfig rc;
  rc.canonical = doc;
  rc.seed = doc["seed"].get<std::uint64_t>();
  rc.precision = doc["precision"] == "f64" ? Precision::kF64 : Precision::kF32;
  if (doc.contains("output_dir")) rc.output_dir = doc["output_dir"].get<std::string>();

  const json& m = doc["model"];
  rc.arch = architecture_from_string(m["arch"].get<std::string>());
  DccConfig& c = rc.model;
  c.num_paths = m["num_paths"].get<int>();
  c.blocks_per_path = m["blocks_per_path"].get<int>();
  c.layers_per_block = m["layers_per_block"].get<std::vector<std::vector<int>>>();
  c.growth_rate = m["growth_rate"].get<int>();
  c.stem_channels = m["stem_channels"].get<int>();
  c.compression = m["compression"].get<double>();
  c.dropout_rate = m["dropout_rate"].get<double>();
  c.num_classes = m["num_classes"].get<int>();
  const auto shape = m["input_shape"].get<std::vector<int>>();
  c.input_shape = {shape[0], shape[1], shape[2]};
  c.shared_stem = m["shared_stem"].get<bool>();
  c.ensemble_fusion = fusion_from_string(m["ensemble_fusion"].get<std::string>());
  c.input_mean = m["input_mean"].get<std::vector<double>>();
  c.input_std = m["input_std"].get<std::vector<double>>();
  c.seed = rc.seed;
  const bool multi_path = rc.arch == Architecture::kDccEcnn || rc.arch == Architecture::kEnsembleCnn;
  validate(c, multi_path ? 2 : 1);

  const json& d = doc["data"];
  rc.data.source = d["source"].get<std::string>();
  rc.data.path = d["path"].get<std::string>();
  rc.data.train_size = d["synthetic"]["train_size"].get<std::size_t>();
  rc.data.test_size = d["synthetic"]["test_size"].get<std::size_t>();
  rc.data.difficulty = difficulty_from_string(d["synthetic"]["difficulty"].get<std::string>());
  if (rc.data.source != "synthetic" && rc.data.path.empty()) throw ConfigError("/data/path", "required for CIFAR data");
  if (rc.data.source == "synthetic") {
    if (c.input_shape[0] != 3) throw ConfigError("/model/input_shape/0", "synthetic data has 3 channels");
    if (c.input_shape[1] != c.input_shape[2]) throw ConfigError("/model/input_shape", "synthetic images are square");
    if (rc.data.train_size < static_cast<std::size_t>(c.num_classes)) {
      throw ConfigError("/data/synthetic/train_size", "must be >= model.num_classes");
    }
    if (rc.data.test_size < static_cast<std::size_t>(c.num_classes)) {
      throw ConfigError("/data/synthetic/test_size", "must be >= model.num_classes");
    }
  } else {
    const int classes = rc.data.source == "cifar10" ? 10 : 100;
    if (c.num_classes != classes) {
      throw ConfigError("/model/num_classes", "must be " + std::to_string(classes) + " for " + rc.data.source);
    }
    if (c.input_shape != std::array<int, 3>{3, 32, 32}) throw ConfigError("/model/input_shape", "CIFAR images are [3,32,32]");
  }

  const json& t = doc["train"];
  rc.train.epochs = t["epochs"].get<int>();
  rc.train.batch_size = t["batch_size"].get<std::size_t>();
  rc.train.schedule = {t["lr0"].get<double>(), rc.train.epochs};
  rc.train.sgd = {t["momentum"].get<double>(), t["weight_decay"].get<double>()};
  const json& a = t["augment"];
  rc.train.augment = {a["enabled"].get<bool>(), a["crop_padding"].get<int>(), a["flip_prob"].get<double>(),
                      a["rotation_degrees"].get<double>()};
  rc.train.seed = rc.seed;

  rc.attack.max_samples = doc["attack"]["max_samples"].get<std::size_t>();
  const json& atks = doc["attack"]["attacks"];
  for (std::size_t i = 0; i < atks.size(); ++i) {
    const json& j = atks[i];
    AttackParams p;
    p.kind = attack_kind_from_string(j["kind"].get<std::string>());
    p.epsilon = j["epsilon"].get<double>();
    p.steps = j["steps"].get<int>();
    if (j.contains("step_size")) p.step_size = j["step_size"].get<double>();
    p.random_start = j["random_start"].get<bool>();
    p.seed = rc.seed;
    rc.attack.attacks.push_back(p);
  }

  const json& cr = doc["corruption"];
  for (const auto& k : cr["kinds"]) rc.corruption.kinds.push_back(corruption_kind_from_string(k.get<std::string>()));
  rc.corruption.table = cr["table"].get<std::string>();
  rc.corruption.baseline_arch = architecture_from_string(cr["baseline_arch"].get<std::string>());
  rc.corruption.baseline_checkpoint = cr["baseline_checkpoint"].get<std::string>();

  const json& g = doc["gradcheck"];
  rc.gradcheck.batch = g["batch"].get<std::size_t>();
  rc.gradcheck.max_elements_per_group = g["max_elements_per_group"].get<std::size_t>();
  rc.gradcheck.tolerance = g["tolerance"].get<double>();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("/", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace dcc
