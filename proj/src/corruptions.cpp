#include "dcc/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dcc/error.hpp"
#include "dcc/hash.hpp"

namespace dcc {

namespace {

struct KindInfo {
  CorruptionKind kind;
  const char* name;
  const char* key;  // table key
};

constexpr KindInfo kKinds[] = {
    {CorruptionKind::kGaussianNoise, "gaussian_noise", "gaussian_noise.sigma"},
    {CorruptionKind::kGaussianBlur, "gaussian_blur", "gaussian_blur.sigma"},
    {CorruptionKind::kContrast, "contrast", "contrast.factor"},
    {CorruptionKind::kFog, "fog", "fog.t"},
};

const KindInfo& info(CorruptionKind k) {
  for (const auto& i : kKinds) {
    if (i.kind == k) return i;
  }
  throw Error("unknown corruption kind");
}

float quantize(float v) { return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f; }

void check_image(const Tensor<float>& img) {
  if (img.rank() != 3) throw ShapeError("corruption: expected a [C,H,W] image, got " + shape_str(img.shape()));
}

void clip01(Tensor<float>& t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

std::string to_string(CorruptionKind k) { return info(k).name; }

CorruptionKind corruption_kind_from_string(const std::string& s) {
  for (const auto& i : kKinds) {
    if (s == i.name) return i.kind;
  }
  const auto& later = unimplemented_corruptions();
  if (std::find(later.begin(), later.end(), s) != later.end()) {
    throw Error("corruption '" + s + "' is a registered extension point without an implementation");
  }
  throw Error("unknown corruption '" + s + "'");
}

const std::vector<CorruptionKind>& all_corruptions() {
  static const std::vector<CorruptionKind> kinds{CorruptionKind::kGaussianNoise, CorruptionKind::kGaussianBlur,
                                                 CorruptionKind::kContrast, CorruptionKind::kFog};
  return kinds;
}

const std::vector<std::string>& unimplemented_corruptions() {
  static const std::vector<std::string> names{"shot_noise",       "impulse_noise", "defocus_blur", "glass_blur",
                                              "motion_blur",      "zoom_blur",     "snow",         "frost",
                                              "brightness",       "elastic_transform", "pixelate", "jpeg_compression"};
  return names;
}

// ---------------------------------------------------------------- table

CorruptionTable CorruptionTable::parse(const std::string& text, const std::string& source) {
  CorruptionTable table;
  bool have_version = false;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    return DataError("corruption table " + source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw fail("expected 'key = values'");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    std::istringstream vals(line.substr(eq + 1));
    if (key == "version") {
      int v = 0;
      if (!(vals >> v) || v != 1) throw fail("unsupported table version");
      have_version = true;
      continue;
    }
    const KindInfo* kind = nullptr;
    for (const auto& i : kKinds) {
      if (key == i.key) kind = &i;
    }
    if (!kind) throw fail("unknown key '" + key + "'");
    std::array<double, kSeverities> row{};
    for (int s = 0; s < kSeverities; ++s) {
      if (!(vals >> row[s])) throw fail(key + " needs " + std::to_string(kSeverities) + " values");
    }
    std::string extra;
    if (vals >> extra) throw fail(key + " has more than " + std::to_string(kSeverities) + " values");
    for (int s = 0; s < kSeverities; ++s) {
      if (!std::isfinite(row[s]) || row[s] < 0) throw fail(key + " values must be finite and >= 0");
      if (s == 0) continue;
      const bool stronger = kind->kind == CorruptionKind::kContrast ? row[s] < row[s - 1] : row[s] > row[s - 1];
      if (!stronger) {
        throw fail(key + " is not strictly monotone in severity (severity " + std::to_string(s + 1) + ")");
      }
    }
    if (kind->kind == CorruptionKind::kContrast && row[0] > 1.0) throw fail("contrast.factor must be <= 1");
    if (kind->kind == CorruptionKind::kFog && row[kSeverities - 1] > 1.0) throw fail("fog.t must be <= 1");
    table.rows_[kind->kind] = row;
  }
  if (!have_version) throw DataError("corruption table " + source + ": missing version");
  for (const auto& i : kKinds) {
    if (!table.rows_.count(i.kind)) throw DataError("corruption table " + source + ": missing " + i.key);
  }
  return table;
}

CorruptionTable CorruptionTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("corruption table: cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::filesystem::path CorruptionTable::builtin_path() {
#ifdef DCC_DATA_DIR
  return std::filesystem::path(DCC_DATA_DIR) / "corruption_table.txt";
#else
  return "data/corruption_table.txt";
#endif
}

CorruptionTable CorruptionTable::builtin() { return load(builtin_path()); }

double CorruptionTable::param(CorruptionKind kind, int severity) const {
  if (severity < 1 || severity > kSeverities) {
    throw HyperparameterError("corruption severity " + std::to_string(severity) + " outside [1, 5]");
  }
  return rows_.at(kind)[static_cast<std::size_t>(severity - 1)];
}

CorruptionTable CorruptionTable::scaled(CorruptionKind kind, double factor) const {
  CorruptionTable t = *this;
  for (auto& v : t.rows_.at(kind)) v *= factor;
  return t;
}

// ---------------------------------------------------------------- primitives

Tensor<float> gaussian_noise(const Tensor<float>& img, double sigma, Rng& rng) {
  check_image(img);
  if (sigma == 0.0) return img;
  Tensor<float> out = img;
  for (auto& v : out.values()) v = static_cast<float>(v + rng.normal(0.0, sigma));
  clip01(out);
  return out;
}

Tensor<float> gaussian_blur(const Tensor<float>& img, double sigma) {
  check_image(img);
  if (sigma <= 0.0) return img;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-static_cast<double>(i * i) / (2 * sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;

  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  std::vector<double> tmp(img.size());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d) {
          const long sx = reflect(static_cast<long>(x) + d, static_cast<long>(W));
          acc += kernel[static_cast<std::size_t>(d + radius)] * img[(c * H + y) * W + static_cast<std::size_t>(sx)];
        }
        tmp[(c * H + y) * W + x] = acc;
      }
    }
  }
  Tensor<float> out(img.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long d = -radius; d <= radius; ++d) {
          const long sy = reflect(static_cast<long>(y) + d, static_cast<long>(H));
          acc += kernel[static_cast<std::size_t>(d + radius)] * tmp[(c * H + static_cast<std::size_t>(sy)) * W + x];
        }
        out[(c * H + y) * W + x] = static_cast<float>(acc);
      }
    }
  }
  clip01(out);
  return out;
}

Tensor<float> contrast(const Tensor<float>& img, double factor) {
  check_image(img);
  if (factor == 1.0) return img;
  double mean = 0.0;
  for (float v : img.values()) mean += v;
  mean /= static_cast<double>(img.size());
  Tensor<float> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>((img[i] - mean) * factor + mean);
  clip01(out);
  return out;
}

Tensor<float> plasma_field(std::size_t height, std::size_t width, Rng& rng) {
  std::size_t n = 2;
  while (n + 1 < std::max(height, width)) n *= 2;
  const std::size_t size = n + 1;
  std::vector<double> g(size * size, 0.0);
  auto at = [&](std::size_t y, std::size_t x) -> double& { return g[y * size + x]; };
  at(0, 0) = rng.uniform();
  at(0, n) = rng.uniform();
  at(n, 0) = rng.uniform();
  at(n, n) = rng.uniform();
  double scale = 1.0;
  for (std::size_t step = n; step > 1; step /= 2, scale *= 0.5) {
    const std::size_t half = step / 2;
    for (std::size_t y = half; y < size; y += step) {
      for (std::size_t x = half; x < size; x += step) {
        const double avg = (at(y - half, x - half) + at(y - half, x + half) + at(y + half, x - half) +
                            at(y + half, x + half)) / 4;
        at(y, x) = avg + rng.uniform(-scale, scale) / 2;
      }
    }
    for (std::size_t y = 0; y < size; y += half) {
      for (std::size_t x = (y + half) % step; x < size; x += step) {
        double sum = 0.0;
        int count = 0;
        if (y >= half) sum += at(y - half, x), ++count;
        if (y + half < size) sum += at(y + half, x), ++count;
        if (x >= half) sum += at(y, x - half), ++count;
        if (x + half < size) sum += at(y, x + half), ++count;
        at(y, x) = sum / count + rng.uniform(-scale, scale) / 2;
      }
    }
  }
  double lo = at(0, 0), hi = at(0, 0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      lo = std::min(lo, at(y, x));
      hi = std::max(hi, at(y, x));
    }
  }
  Tensor<float> out({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out[y * width + x] = hi > lo ? static_cast<float>((at(y, x) - lo) / (hi - lo)) : 0.5f;
    }
  }
  return out;
}

Tensor<float> fog(const Tensor<float>& img, double t, Rng& rng) {
  check_image(img);
  if (t == 0.0) return img;
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const Tensor<float> field = plasma_field(H, W, rng);
  Tensor<float> out(img.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < H * W; ++p) {
      out[c * H * W + p] = static_cast<float>(img[c * H * W + p] * (1.0 - t) + t * field[p]);
    }
  }
  clip01(out);
  return out;
}

Tensor<float> corrupt(const Tensor<float>& img, const CorruptionSpec& spec, const CorruptionTable& table) {
  const double p = table.param(spec.kind, spec.severity);
  Rng rng = Rng(spec.seed).split(streams::kCorruption);
  switch (spec.kind) {
    case CorruptionKind::kGaussianNoise: return gaussian_noise(img, p, rng);
    case CorruptionKind::kGaussianBlur: return gaussian_blur(img, p);
    case CorruptionKind::kContrast: return contrast(img, p);
    case CorruptionKind::kFog: return fog(img, p, rng);
  }
  throw Error("unknown corruption kind");
}

// ---------------------------------------------------------------- sets

LabeledImageSet corrupt_set(const LabeledImageSet& clean, CorruptionKind kind, int severity,
                            const CorruptionTable& table, std::uint64_t seed) {
  LabeledImageSet out = clean;
  out.split = clean.split + "+" + to_string(kind) + "@" + std::to_string(severity);
  const std::size_t sz = clean.image_size();
  // Per-image seeds so image i's corruption does not depend on the others.
  const Rng root = Rng(seed).split(static_cast<std::uint64_t>(kind) * 16 + static_cast<std::uint64_t>(severity));
  for (std::size_t i = 0; i < clean.size(); ++i) {
    CorruptionSpec spec{kind, severity, root.split(i).next_u64()};
    const Tensor<float> img = corrupt(image_at(clean, i), spec, table);
    for (std::size_t j = 0; j < sz; ++j) out.images[i * sz + j] = quantize(img[j]);
  }
  return out;
}

LabeledImageSet cached_corrupt_set(const LabeledImageSet& clean, CorruptionKind kind, int severity,
                                   const CorruptionTable& table, std::uint64_t seed,
                                   const std::filesystem::path& cache_dir) {
  Fnv1a h;
  h.text(to_string(kind)).value(severity).value(table.param(kind, severity)).value(seed);
  h.value(clean.size()).value(clean.channels()).value(clean.height()).value(clean.width());
  h.bytes(clean.images.values().data(), clean.images.size() * sizeof(float));
  h.bytes(clean.labels.data(), clean.labels.size() * sizeof(int));
  const auto file = cache_dir / (to_string(kind) + "_s" + std::to_string(severity) + "_" + h.hex() + ".bin");

  CifarFormat fmt = CifarFormat::cifar10(clean.height());
  fmt.width = clean.width();
  fmt.channels = clean.channels();
  fmt.num_classes = clean.class_count;
  if (clean.class_count > 256) throw DataError("corruption cache: too many classes for one label byte");
  if (std::filesystem::exists(file)) {
    LabeledImageSet cached = read_cifar_file(file, fmt, clean.split + "+" + to_string(kind) + "@" +
                                                            std::to_string(severity));
    if (cached.labels != clean.labels) throw DataError("corruption cache: " + file.string() + " is inconsistent");
    return cached;
  }
  LabeledImageSet fresh = corrupt_set(clean, kind, severity, table, seed);
  std::filesystem::create_directories(cache_dir);
  write_cifar_file(file, fresh, fmt);
  return fresh;
}

CorruptionResult corruption_error(const Classifier& classify, const LabeledImageSet& clean, CorruptionKind kind,
                                  const CorruptionTable& table, std::uint64_t seed,
                                  const std::optional<std::filesystem::path>& cache_dir, std::size_t workers) {
  if (clean.size() == 0) throw DataError("corruption_error: empty dataset");
  CorruptionResult r;
  r.kind = kind;
  for (int s = 1; s <= kSeverities; ++s) {
    const LabeledImageSet set = cache_dir ? cached_corrupt_set(clean, kind, s, table, seed, *cache_dir)
                                          : corrupt_set(clean, kind, s, table, seed);
    const double err = 1.0 - accuracy(predict(classify, set, 256, workers), set.labels);
    r.errors[static_cast<std::size_t>(s - 1)] = err;
    r.ce += err;
  }
  return r;
}

double mce(const std::map<CorruptionKind, double>& model_ce, const std::map<CorruptionKind, double>& baseline_ce) {
  if (model_ce.empty()) throw Error("mce: no corruption kinds");
  if (model_ce.size() != baseline_ce.size()) throw Error("mce: model and baseline cover different kinds");
  double sum = 0.0;
  for (const auto& [kind, ce] : model_ce) {
    const auto it = baseline_ce.find(kind);
    if (it == baseline_ce.end()) throw Error("mce: baseline lacks kind " + to_string(kind));
    if (!(it->second > 0.0)) {
      throw NumericError("mce: baseline CE for " + to_string(kind) + " is zero (degenerate perfect baseline)");
    }
    sum += ce / it->second;
  }
  return 100.0 * sum / static_cast<double>(model_ce.size());
}

}  // namespace dcc
