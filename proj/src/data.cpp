#include "dcc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "dcc/error.hpp"

namespace dcc {

namespace {

float pixel_from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

std::uint8_t byte_from_pixel(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void read_records(const std::filesystem::path& path, const CifarFormat& fmt, std::vector<float>& pixels,
                  std::vector<int>& labels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cifar: missing file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::size_t rec = fmt.record_size();
  if (bytes.size() % rec != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % rec;
    throw DataError("cifar: short read in " + path.string() + ": partial record at byte offset " +
                    std::to_string(offset) + " (" + std::to_string(bytes.size()) + " bytes, record size " +
                    std::to_string(rec) + ")");
  }
  const std::size_t n = bytes.size() / rec;
  const std::size_t img = rec - fmt.label_bytes;
  pixels.reserve(pixels.size() + n * img);
  labels.reserve(labels.size() + n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * rec;
    const int label = static_cast<std::uint8_t>(bytes[base + fmt.label_index]);
    if (label >= fmt.num_classes) {
      throw DataError("cifar: label " + std::to_string(label) + " out of range in " + path.string() +
                      " at byte offset " + std::to_string(base + fmt.label_index));
    }
    labels.push_back(label);
    for (std::size_t i = 0; i < img; ++i) {
      pixels.push_back(pixel_from_byte(static_cast<std::uint8_t>(bytes[base + fmt.label_bytes + i])));
    }
  }
}

LabeledImageSet assemble(std::vector<float> pixels, std::vector<int> labels, const CifarFormat& fmt,
                         const std::string& split, const std::string& what) {
  if (labels.empty()) throw DataError("cifar: " + what + " contains no records");
  LabeledImageSet set;
  set.images = Tensor<float>({labels.size(), fmt.channels, fmt.height, fmt.width}, std::move(pixels));
  set.labels = std::move(labels);
  set.class_count = fmt.num_classes;
  set.split = split;
  return set;
}

}  // namespace

void LabeledImageSet::check() const {
  if (labels.empty()) throw DataError("dataset '" + split + "' is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DataError("dataset '" + split + "': image tensor " + shape_str(images.shape()) + " does not match " +
                    std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw DataError("dataset '" + split + "': label " + std::to_string(labels[i]) + " of sample " +
                      std::to_string(i) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
  for (float v : images.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("dataset '" + split + "': pixel outside [0,1]");
  }
}

LabeledImageSet LabeledImageSet::subset(std::span<const std::size_t> indices) const {
  LabeledImageSet out;
  const std::size_t sz = image_size();
  std::vector<float> px;
  px.reserve(indices.size() * sz);
  for (auto i : indices) {
    const auto src = images.data().subspan(i * sz, sz);
    px.insert(px.end(), src.begin(), src.end());
    out.labels.push_back(labels.at(i));
  }
  out.images = Tensor<float>({indices.size(), channels(), height(), width()}, std::move(px));
  out.class_count = class_count;
  out.split = split;
  return out;
}

// ---------------------------------------------------------------- CIFAR binary

LabeledImageSet read_cifar_file(const std::filesystem::path& path, const CifarFormat& fmt, const std::string& split) {
  std::vector<float> pixels;
  std::vector<int> labels;
  read_records(path, fmt, pixels, labels);
  return assemble(std::move(pixels), std::move(labels), fmt, split, path.string());
}

void write_cifar_file(const std::filesystem::path& path, const LabeledImageSet& set, const CifarFormat& fmt) {
  if (set.channels() != fmt.channels || set.height() != fmt.height || set.width() != fmt.width) {
    throw DataError("cifar: image shape " + shape_str(set.images.shape()) + " does not match the record layout");
  }
  std::vector<char> bytes(set.size() * fmt.record_size(), 0);
  const std::size_t sz = set.image_size();
  for (std::size_t r = 0; r < set.size(); ++r) {
    const std::size_t base = r * fmt.record_size();
    if (set.labels[r] < 0 || set.labels[r] >= fmt.num_classes || set.labels[r] > 255) {
      throw DataError("cifar: label " + std::to_string(set.labels[r]) + " cannot be written");
    }
    bytes[base + fmt.label_index] = static_cast<char>(set.labels[r]);
    for (std::size_t i = 0; i < sz; ++i) {
      bytes[base + fmt.label_bytes + i] = static_cast<char>(byte_from_pixel(set.images[r * sz + i]));
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cifar: cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("cifar: write failed for " + path.string());
}

std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::filesystem::path& dir) {
  const auto fmt = CifarFormat::cifar10();
  std::vector<float> pixels;
  std::vector<int> labels;
  for (int b = 1; b <= 5; ++b) {
    read_records(dir / ("data_batch_" + std::to_string(b) + ".bin"), fmt, pixels, labels);
  }
  auto train = assemble(std::move(pixels), std::move(labels), fmt, "train", dir.string());
  return {std::move(train), read_cifar_file(dir / "test_batch.bin", fmt, "test")};
}

std::pair<LabeledImageSet, LabeledImageSet> load_cifar100(const std::filesystem::path& dir) {
  const auto fmt = CifarFormat::cifar100();
  return {read_cifar_file(dir / "train.bin", fmt, "train"), read_cifar_file(dir / "test.bin", fmt, "test")};
}

// ---------------------------------------------------------------- synthetic

std::string to_string(Difficulty d) { return d == Difficulty::kSeparable ? "separable" : "noisy"; }

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "separable") return Difficulty::kSeparable;
  if (s == "noisy") return Difficulty::kNoisy;
  throw Error("unknown difficulty '" + s + "' (expected separable or noisy)");
}

LabeledImageSet synthetic_dataset(std::size_t n, int classes, std::size_t size, Difficulty difficulty,
                                  std::uint64_t seed) {
  if (classes < 2) throw Error("synthetic_dataset: need at least 2 classes");
  if (n < static_cast<std::size_t>(classes)) throw Error("synthetic_dataset: n must be >= classes");
  if (size < 4) throw Error("synthetic_dataset: image size must be >= 4");

  const bool noisy = difficulty == Difficulty::kNoisy;
  const double grad_amp = noisy ? 0.10 : 0.20;
  const double blob_amp = noisy ? 0.20 : 0.35;
  const double jitter = noisy ? 0.12 : 0.04;  // fraction of the image size
  const double noise = noisy ? 0.15 : 0.03;

  const double s = static_cast<double>(size);
  const double blob_sigma = 0.12 * s;
  Rng root = Rng(seed).split(streams::kData);
  std::vector<float> px(n * 3 * size * size);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    labels[i] = c;
    Rng rng = root.split(i);
    const double phase = static_cast<double>(c) / classes;
    const double theta = std::numbers::pi * phase;
    const double cy = s / 2 + 0.28 * s * std::sin(2 * std::numbers::pi * phase) + rng.uniform(-jitter, jitter) * s;
    const double cx = s / 2 + 0.28 * s * std::cos(2 * std::numbers::pi * phase) + rng.uniform(-jitter, jitter) * s;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double tint = 0.5 + 0.5 * std::cos(2 * std::numbers::pi * (phase + static_cast<double>(ch) / 3));
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double u = (static_cast<double>(x) + 0.5) / s - 0.5;
          const double v = (static_cast<double>(y) + 0.5) / s - 0.5;
          const double ramp = u * std::cos(theta) + v * std::sin(theta);
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double blob = std::exp(-(dx * dx + dy * dy) / (2 * blob_sigma * blob_sigma));
          double val = 0.5 + grad_amp * ramp * 2 + blob_amp * blob * (tint - 0.3) + rng.normal(0.0, noise);
          px[((i * 3 + ch) * size + y) * size + x] = pixel_from_byte(byte_from_pixel(static_cast<float>(val)));
        }
      }
    }
  }
  LabeledImageSet set;
  set.images = Tensor<float>({n, 3, size, size}, std::move(px));
  set.labels = std::move(labels);
  set.class_count = classes;
  set.split = "synthetic";
  return set;
}

// ---------------------------------------------------------------- augmentation

void AugmentConfig::validate() const {
  if (crop_padding < 0) throw Error("augment: crop_padding must be >= 0");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw Error("augment: flip_prob must be in [0,1]");
  if (!(rotation_degrees >= 0.0) || !std::isfinite(rotation_degrees)) {
    throw Error("augment: rotation_degrees must be >= 0");
  }
}

Tensor<float> reflect_pad_crop(const Tensor<float>& img, int padding, int dy, int dx) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Tensor<float> out(img.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      const long sy = reflect(static_cast<long>(y) + dy - padding, static_cast<long>(H));
      for (std::size_t x = 0; x < W; ++x) {
        const long sx = reflect(static_cast<long>(x) + dx - padding, static_cast<long>(W));
        out[(c * H + y) * W + x] = img[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
      }
    }
  }
  return out;
}

Tensor<float> hflip(const Tensor<float>& img) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
    }
  }
  return out;
}

Tensor<float> rotate(const Tensor<float>& img, double degrees) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(H) - 1) / 2, cx = (static_cast<double>(W) - 1) / 2;
  Tensor<float> out(img.shape());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      // Inverse map output pixel to source coordinates.
      const double ox = static_cast<double>(x) - cx, oy = static_cast<double>(y) - cy;
      const double sx = cs * ox + sn * oy + cx;
      const double sy = -sn * ox + cs * oy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t c = 0; c < C; ++c) {
        auto at = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) return 0.0;
          return img[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)];
        };
        double v = (1 - ay) * ((1 - ax) * at(y0, x0) + (ax > 0 ? ax * at(y0, x0 + 1) : 0.0));
        if (ay > 0) v += ay * ((1 - ax) * at(y0 + 1, x0) + (ax > 0 ? ax * at(y0 + 1, x0 + 1) : 0.0));
        out[(c * H + y) * W + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& img, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return img;
  Tensor<float> out = img;
  if (cfg.crop_padding > 0) {
    const int span = 2 * cfg.crop_padding + 1;
    const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    out = reflect_pad_crop(out, cfg.crop_padding, dy, dx);
  }
  if (rng.uniform() < cfg.flip_prob) out = hflip(out);
  if (cfg.rotation_degrees > 0) out = rotate(out, rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees));
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

// ---------------------------------------------------------------- normalization

namespace {

void check_stats(const Tensor<float>& x, std::span<const double> mean, std::span<const double> stddev) {
  if (x.rank() != 4) throw ShapeError("normalize: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (mean.size() != x.dim(1) || stddev.size() != x.dim(1)) {
    throw ShapeError("normalize: need one mean and std per channel");
  }
  for (double s : stddev) {
    if (s == 0.0) throw HyperparameterError("normalize: zero standard deviation");
  }
}

}  // namespace

Tensor<float> normalize(const Tensor<float>& x, std::span<const double> mean, std::span<const double> stddev) {
  check_stats(x, mean, stddev);
  Tensor<float> out(x.shape());
  const std::size_t C = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i / hw) % C;
    out[i] = static_cast<float>((x[i] - mean[c]) / stddev[c]);
  }
  return out;
}

Tensor<float> denormalize(const Tensor<float>& x, std::span<const double> mean, std::span<const double> stddev) {
  check_stats(x, mean, stddev);
  Tensor<float> out(x.shape());
  const std::size_t C = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = (i / hw) % C;
    out[i] = static_cast<float>(x[i] * stddev[c] + mean[c]);
  }
  return out;
}

ChannelStats channel_stats(const LabeledImageSet& set) {
  const std::size_t C = set.channels(), hw = set.height() * set.width();
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const std::size_t c = (i / hw) % C;
    sum[c] += set.images[i];
    sq[c] += static_cast<double>(set.images[i]) * set.images[i];
  }
  const double count = static_cast<double>(set.size() * hw);
  ChannelStats st;
  for (std::size_t c = 0; c < C; ++c) {
    const double m = sum[c] / count;
    st.mean.push_back(m);
    st.stddev.push_back(std::sqrt(std::max(0.0, sq[c] / count - m * m)));
  }
  return st;
}

// ---------------------------------------------------------------- batching

Tensor<float> image_at(const LabeledImageSet& set, std::size_t i) {
  const std::size_t sz = set.image_size();
  const auto src = set.images.data().subspan(i * sz, sz);
  return Tensor<float>({set.channels(), set.height(), set.width()}, std::vector<float>(src.begin(), src.end()));
}

Batch make_batch(const LabeledImageSet& set, std::span<const std::size_t> indices, const AugmentConfig* augment_cfg,
                 const Rng* rng_root) {
  const bool aug = augment_cfg && augment_cfg->enabled;
  if (aug && !rng_root) throw Error("make_batch: augmentation needs a random stream");
  const std::size_t sz = set.image_size();
  std::vector<float> px;
  px.reserve(indices.size() * sz);
  Batch b;
  for (auto i : indices) {
    if (i >= set.size()) throw Error("make_batch: sample index out of range");
    if (aug) {
      Rng rng = rng_root->split(i);
      const Tensor<float> img = augment(image_at(set, i), *augment_cfg, rng);
      px.insert(px.end(), img.values().begin(), img.values().end());
    } else {
      const auto src = set.images.data().subspan(i * sz, sz);
      px.insert(px.end(), src.begin(), src.end());
    }
    b.labels.push_back(set.labels[i]);
  }
  b.images = Tensor<float>({indices.size(), set.channels(), set.height(), set.width()}, std::move(px));
  return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace dcc
