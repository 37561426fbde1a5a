#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "dcc/data.hpp"

using namespace dcc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dcc_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  return {std::istreambuf_iterator<char>(is), {}};
}

bool same_tensor(const Tensor<float>& a, const Tensor<float>& b, float tol) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("all-zero CIFAR record gives an all-zero image") {
  const auto dir = scratch_dir("zero");
  std::vector<unsigned char> rec(3073, 0);
  rec[0] = 7;
  write_bytes(dir / "one.bin", rec);
  const auto set = read_cifar_file(dir / "one.bin", CifarFormat::cifar10(), "train");
  REQUIRE(set.size() == 1);
  CHECK(set.labels[0] == 7);
  CHECK(set.images.shape() == Shape{1, 3, 32, 32});
  for (float v : set.images.values()) CHECK(v == 0.0f);
}

TEST_CASE("CIFAR record layout is plane by plane") {
  const auto dir = scratch_dir("layout");
  std::vector<unsigned char> rec(3073, 0);
  rec[0] = 1;
  rec[1 + 0] = 255;                 // R(0,0)
  rec[1 + 1024 + 33] = 51;          // G(1,1)
  rec[1 + 2048 + 1023] = 102;       // B(31,31)
  write_bytes(dir / "r.bin", rec);
  const auto set = read_cifar_file(dir / "r.bin", CifarFormat::cifar10(), "train");
  CHECK(set.images.at(0, 0, 0, 0) == 1.0f);
  CHECK(set.images.at(0, 1, 1, 1) == 51.0f / 255.0f);
  CHECK(set.images.at(0, 2, 31, 31) == 102.0f / 255.0f);
}

TEST_CASE("CIFAR format errors carry byte offsets") {
  const auto dir = scratch_dir("errors");
  write_bytes(dir / "short.bin", std::vector<unsigned char>(3073 + 100, 0));
  try {
    read_cifar_file(dir / "short.bin", CifarFormat::cifar10(), "train");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("short read") != std::string::npos);
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  std::vector<unsigned char> bad(2 * 3073, 0);
  bad[3073] = 10;
  write_bytes(dir / "label.bin", bad);
  try {
    read_cifar_file(dir / "label.bin", CifarFormat::cifar10(), "train");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("label 10") != std::string::npos);
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  CHECK_THROWS_AS(read_cifar_file(dir / "missing.bin", CifarFormat::cifar10(), "train"), DataError);
  CHECK_THROWS_AS(load_cifar10(dir), DataError);
}

TEST_CASE("CIFAR-10 round trip is bit-exact") {
  const auto dir = scratch_dir("roundtrip");
  const auto set = synthetic_dataset(50, 10, 32, Difficulty::kNoisy, 3);
  write_cifar_file(dir / "data.bin", set, CifarFormat::cifar10());
  CHECK(fs::file_size(dir / "data.bin") == 50 * 3073);
  const auto back = read_cifar_file(dir / "data.bin", CifarFormat::cifar10(), set.split);
  CHECK(back.images == set.images);
  CHECK(back.labels == set.labels);
  write_cifar_file(dir / "again.bin", back, CifarFormat::cifar10());
  CHECK(read_text(dir / "data.bin") == read_text(dir / "again.bin"));
}

TEST_CASE("CIFAR-10 directory loader preserves order") {
  const auto dir = scratch_dir("dir10");
  std::vector<LabeledImageSet> parts;
  for (int b = 1; b <= 5; ++b) {
    parts.push_back(synthetic_dataset(10, 10, 32, Difficulty::kSeparable, static_cast<std::uint64_t>(b)));
    write_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), parts.back(), CifarFormat::cifar10());
  }
  const auto test = synthetic_dataset(10, 10, 32, Difficulty::kSeparable, 99);
  write_cifar_file(dir / "test_batch.bin", test, CifarFormat::cifar10());
  const auto [train, held] = load_cifar10(dir);
  REQUIRE(train.size() == 50);
  CHECK(held.images == test.images);
  for (int b = 0; b < 5; ++b) {
    for (std::size_t i = 0; i < 10; ++i) CHECK(train.labels[b * 10 + i] == parts[b].labels[i]);
  }
  CHECK(std::equal(parts[4].images.values().begin(), parts[4].images.values().end(),
                   train.images.values().begin() + 40 * 3072));
}

TEST_CASE("CIFAR-100 exposes the fine label") {
  const auto dir = scratch_dir("c100");
  std::vector<unsigned char> rec(3074, 0);
  rec[0] = 3;
  rec[1] = 87;
  write_bytes(dir / "train.bin", rec);
  write_bytes(dir / "test.bin", rec);
  const auto [train, test] = load_cifar100(dir);
  CHECK(train.labels == std::vector<int>{87});
  CHECK(train.class_count == 100);
  const auto set = synthetic_dataset(20, 20, 32, Difficulty::kSeparable, 1);
  write_cifar_file(dir / "rt.bin", set, CifarFormat::cifar100());
  CHECK(read_cifar_file(dir / "rt.bin", CifarFormat::cifar100(), "x").images == set.images);
}

TEST_CASE("synthetic set is balanced, deterministic and valid") {
  const auto a = synthetic_dataset(200, 2, 16, Difficulty::kSeparable, 5);
  const auto b = synthetic_dataset(200, 2, 16, Difficulty::kSeparable, 5);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(std::count(a.labels.begin(), a.labels.end(), 0) == 100);
  CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 100);
  CHECK_NOTHROW(a.check());
  for (float v : a.images.values()) CHECK(std::round(v * 255.0f) / 255.0f == v);
  const auto c = synthetic_dataset(200, 2, 16, Difficulty::kSeparable, 6);
  CHECK_FALSE(a.images == c.images);
  CHECK_THROWS(synthetic_dataset(3, 4, 16, Difficulty::kSeparable, 0));
  CHECK(difficulty_from_string(to_string(Difficulty::kNoisy)) == Difficulty::kNoisy);
}

TEST_CASE("linear probe on raw pixels separates the separable set") {
  const auto train = synthetic_dataset(200, 2, 16, Difficulty::kSeparable, 11);
  const auto test = synthetic_dataset(200, 2, 16, Difficulty::kSeparable, 12);
  const std::size_t D = train.image_size();
  // Logistic regression by full-batch gradient descent.
  std::vector<double> w(D, 0.0);
  double bias = 0.0;
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gw(D, 0.0);
    double gb = 0.0;
    for (std::size_t n = 0; n < train.size(); ++n) {
      double z = bias;
      for (std::size_t d = 0; d < D; ++d) z += w[d] * train.images[n * D + d];
      const double err = 1.0 / (1.0 + std::exp(-z)) - train.labels[n];
      for (std::size_t d = 0; d < D; ++d) gw[d] += err * train.images[n * D + d];
      gb += err;
    }
    for (std::size_t d = 0; d < D; ++d) w[d] -= 0.05 * gw[d] / train.size();
    bias -= 0.05 * gb / train.size();
  }
  std::size_t correct = 0;
  for (std::size_t n = 0; n < test.size(); ++n) {
    double z = bias;
    for (std::size_t d = 0; d < D; ++d) z += w[d] * test.images[n * D + d];
    correct += (z > 0) == (test.labels[n] == 1);
  }
  CHECK(static_cast<double>(correct) / test.size() > 0.8);
}

TEST_CASE("augmentation identities") {
  const auto set = synthetic_dataset(4, 2, 16, Difficulty::kNoisy, 7);
  const auto img = image_at(set, 1);
  AugmentConfig off;
  off.enabled = false;
  Rng rng(1);
  CHECK(augment(img, off, rng) == img);
  CHECK(hflip(hflip(img)) == img);
  CHECK_FALSE(hflip(img) == img);
  CHECK(same_tensor(rotate(img, 0.0), img, 1e-6f));
  CHECK(reflect_pad_crop(img, 4, 4, 4) == img);
  AugmentConfig always_flip;
  always_flip.crop_padding = 0;
  always_flip.flip_prob = 1.0;
  always_flip.rotation_degrees = 0.0;
  CHECK(augment(img, always_flip, rng) == hflip(img));
  // reflect padding: shifting by one column reads the mirrored neighbour
  const auto shifted = reflect_pad_crop(img, 1, 1, 0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y) {
      CHECK(shifted[(c * 16 + y) * 16 + 0] == img[(c * 16 + y) * 16 + 1]);
      CHECK(shifted[(c * 16 + y) * 16 + 1] == img[(c * 16 + y) * 16 + 0]);
    }
}

TEST_CASE("augmentation preserves shape, range and labels") {
  const auto set = synthetic_dataset(32, 4, 16, Difficulty::kNoisy, 8);
  const AugmentConfig cfg;
  const Rng root(3);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = make_batch(set, idx, &cfg, &root);
  CHECK(batch.images.shape() == set.images.shape());
  CHECK(batch.labels == set.labels);
  for (float v : batch.images.values()) CHECK((v >= 0.0f && v <= 1.0f));
  // Per-sample streams: the same sample augments identically in any batch.
  const std::vector<std::size_t> sub{5, 17};
  const auto small = make_batch(set, sub, &cfg, &root);
  const std::size_t D = set.image_size();
  CHECK(std::equal(small.images.values().begin() + D, small.images.values().end(),
                   batch.images.values().begin() + 17 * D));
  AugmentConfig bad;
  bad.flip_prob = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("normalization") {
  const auto set = synthetic_dataset(8, 2, 16, Difficulty::kNoisy, 9);
  const std::vector<double> zero{0, 0, 0}, one{1, 1, 1};
  CHECK(normalize(set.images, zero, one) == set.images);
  const std::vector<double> mean{0.49, 0.48, 0.45}, sd{0.25, 0.24, 0.26};
  CHECK(same_tensor(denormalize(normalize(set.images, mean, sd), mean, sd), set.images, 1e-6f));
  const std::vector<double> bad_sd{0.2, 0.0, 0.2};
  CHECK_THROWS_AS(normalize(set.images, mean, bad_sd), HyperparameterError);
  const auto stats = channel_stats(set);
  const auto z = normalize(set.images, stats.mean, stats.stddev);
  double m = 0;
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t p = 0; p < 256; ++p) m += z[(n * 3 + 0) * 256 + p];
  CHECK(std::abs(m / (8 * 256)) < 1e-5);
}

TEST_CASE("CIFAR-10 channel means match the shipped config" * doctest::skip(std::getenv("DCC_CIFAR10_DIR") == nullptr)) {
  const auto [train, test] = load_cifar10(std::getenv("DCC_CIFAR10_DIR"));
  CHECK(train.size() == 50000);
  CHECK(test.size() == 10000);
  const auto cfg = nlohmann::json::parse(read_text(fs::path(DCC_SOURCE_DIR) / "configs" / "cifar10.json"));
  const auto cached = cfg.at("model").at("input_mean").get<std::vector<double>>();
  const auto stats = channel_stats(train);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(stats.mean[c] - cached[c]) < 1e-3);
}
