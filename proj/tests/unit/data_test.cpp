#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "ila/data.hpp"
#include "ila/io.hpp"

using namespace ila::data;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("ila_data_test_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::create_directories(p);
  return p;
}

// Record whose label is `label` and whose pixel p holds (p + salt) % 256.
std::vector<std::uint8_t> record(std::uint8_t label, int salt) {
  std::vector<std::uint8_t> r(3073);
  r[0] = label;
  for (std::size_t p = 0; p < 3072; ++p) r[1 + p] = static_cast<std::uint8_t>((p + salt) % 256);
  return r;
}

void write_records(const std::filesystem::path& path, int first, int count) {
  std::vector<std::uint8_t> bytes;
  for (int i = 0; i < count; ++i) {
    auto r = record(static_cast<std::uint8_t>((first + i) % 10), first + i);
    bytes.insert(bytes.end(), r.begin(), r.end());
  }
  ila::io::write_file(path, bytes);
}

// Fake CIFAR directory: 5 train files of 30 records, one test file of 20.
std::filesystem::path fake_cifar() {
  auto dir = temp_dir("cifar");
  for (int b = 1; b <= 5; ++b)
    write_records(dir / ("data_batch_" + std::to_string(b) + ".bin"), (b - 1) * 30, 30);
  write_records(dir / "test_batch.bin", 1000, 20);
  return dir;
}

// Multinomial logistic regression by full-batch gradient descent in double,
// written without the library. Returns accuracy on (test_x, test_y).
double linear_probe(const Dataset& train, const Dataset& test, int epochs = 60) {
  const std::size_t d = kPixels, k = 10, n = train.size();
  std::vector<double> w(k * d, 0.0), b(k, 0.0), gw(k * d), gb(k), z(k);
  auto scores = [&](const float* x) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += w[c * d + j] * (x[j] - 0.5);
      z[c] = s;
    }
  };
  const double lr = 0.5;
  for (int e = 0; e < epochs; ++e) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const float* x = train.images.data() + i * d;
      scores(x);
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (auto& v : z) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double g = z[c] / sum - (static_cast<int>(c) == train.labels[i] ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += g * (x[j] - 0.5);
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      b[c] -= lr * gb[c] / n;
      for (std::size_t j = 0; j < d; ++j) w[c * d + j] -= lr * gw[c * d + j] / n;
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    scores(test.images.data() + i * d);
    const auto pred = std::max_element(z.begin(), z.end()) - z.begin();
    correct += pred == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST(CifarRecords, RecordLayoutArithmetic) {
  EXPECT_EQ(kRecordBytes, 1u + 3u * 1024u);
  EXPECT_EQ(kRecordBytes, 3073u);
}

TEST(CifarRecords, PixelScalingAndPlaneOrder) {
  std::vector<std::uint8_t> r(3073, 0);
  r[0] = 7;
  r[1] = 255;            // red (0,0)
  r[1 + 1024 + 33] = 51;  // green (1,1)
  std::vector<float> px;
  std::vector<int> ys;
  parse_cifar_records(r, px, ys, std::nullopt, "mem");
  Tensor<float> img({1, 3, 32, 32}, px);
  EXPECT_EQ(ys, std::vector<int>{7});
  EXPECT_EQ(img.at(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(img.at(0, 0, 0, 1), 0.0f);
  EXPECT_FLOAT_EQ(img.at(0, 1, 1, 1), 0.2f);
}

TEST(CifarRecords, BadLengthAndLabelAreFormatErrors) {
  std::vector<float> px;
  std::vector<int> ys;
  std::vector<std::uint8_t> bytes(3073 * 2 + 5, 0);
  EXPECT_THROW(parse_cifar_records(bytes, px, ys, std::nullopt, "mem"), ila::FormatError);
  bytes.assign(3073 * 2, 0);
  bytes[3073] = 10;
  try {
    parse_cifar_records(bytes, px, ys, std::nullopt, "mem");
    FAIL();
  } catch (const ila::FormatError& e) {
    EXPECT_EQ(e.offset(), 3073u);
  }
}

TEST(CifarLoader, LimitTakesDeterministicPrefix) {
  const auto dir = fake_cifar();
  auto a = load_cifar10_binary(dir, Split::kTrain, 100);
  auto b = load_cifar10_binary(dir, Split::kTrain, 100);
  ASSERT_EQ(a.size(), 100u);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  auto all = load_cifar10_binary(dir, Split::kTrain);
  EXPECT_EQ(all.size(), 150u);
  EXPECT_EQ(all.slice(0, 100).images, a.images);
  EXPECT_EQ(a.labels[35], 35 % 10);  // crosses into the second file
  EXPECT_EQ(load_cifar10_binary(dir, Split::kTest).size(), 20u);
  EXPECT_NO_THROW(all.validate());
  std::filesystem::remove_all(dir);
}

TEST(CifarLoader, MissingFilesAreInputErrors) {
  const auto dir = temp_dir("empty");
  EXPECT_THROW(load_cifar10_binary(dir, Split::kTest), ila::InputError);
  EXPECT_FALSE(cifar_available(dir));
  std::filesystem::remove_all(dir);
}

TEST(CifarLoader, ExportRoundTrip) {
  const auto ds = synthetic_dataset(25, 3, 2.0);
  const auto dir = temp_dir("export");
  write_cifar_records(ds, dir / "s.bin");
  EXPECT_EQ(std::filesystem::file_size(dir / "s.bin"), 25u * 3073u);
  auto back = read_cifar_records(dir / "s.bin");
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_LE(max_abs_diff(back.images, ds.images), 0.5 / 255.0 + 1e-6);
  std::filesystem::remove_all(dir);
}

TEST(Synthetic, SameSeedSameData) {
  auto a = synthetic_dataset(50, 9, 3.0);
  auto b = synthetic_dataset(50, 9, 3.0);
  auto c = synthetic_dataset(50, 10, 3.0);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.images == c.images);
}

TEST(Synthetic, RangeAndLabels) {
  for (double sep : {0.0, 3.0, 50.0}) {
    auto ds = synthetic_dataset(40, 1, sep);
    EXPECT_NO_THROW(ds.validate());
    std::set<int> classes(ds.labels.begin(), ds.labels.end());
    EXPECT_EQ(classes.size(), 10u);
  }
}

TEST(Synthetic, ZeroSeparationIsChance) {
  auto train = synthetic_dataset(1000, 11, 0.0);
  auto test = synthetic_dataset(1000, 12, 0.0);
  const double acc = linear_probe(train, test, 30);
  EXPECT_NEAR(acc, 0.10, 0.05);
}

TEST(Synthetic, LargeSeparationIsLinearlySeparable) {
  auto train = synthetic_dataset(1000, 13, 8.0);
  const double acc = linear_probe(train, train, 30);
  EXPECT_GT(acc, 0.95);
}

TEST(Batching, PartitionArithmetic) {
  auto b = batch_indices(10, 4, std::nullopt);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
  std::size_t expect = 0;
  for (const auto& batch : b)
    for (std::size_t i : batch) EXPECT_EQ(i, expect++);
  EXPECT_THROW(batch_indices(10, 0, std::nullopt), ila::ConfigError);
}

TEST(Batching, SeededShuffleIsPermutationAndRepeatable) {
  auto a = batch_indices(97, 8, 5);
  auto b = batch_indices(97, 8, 5);
  EXPECT_EQ(a, b);
  std::vector<std::size_t> flat;
  for (const auto& batch : a) flat.insert(flat.end(), batch.begin(), batch.end());
  std::vector<std::size_t> sorted = flat;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(flat, sorted);
}

TEST(Batching, IteratorMaterializesBatches) {
  auto ds = synthetic_dataset(10, 2, 1.0);
  BatchIter it(ds, 4);
  std::vector<int> ys;
  while (!it.done()) {
    auto b = it.next();
    ys.insert(ys.end(), b.labels.begin(), b.labels.end());
  }
  EXPECT_EQ(ys, ds.labels);
  EXPECT_THROW(it.next(), ila::UsageError);
}

TEST(Augment, FlipOnlyMirrorsRows) {
  auto ds = synthetic_dataset(16, 4, 2.0);
  auto img = ds.images;
  std::mt19937_64 rng(1);
  augment(img, rng, {true, 0});
  std::size_t flipped = 0;
  for (std::size_t n = 0; n < 16; ++n) {
    const bool same = img.at(n, 0, 3, 5) == ds.images.at(n, 0, 3, 5) &&
                      img.at(n, 2, 30, 0) == ds.images.at(n, 2, 30, 0);
    if (!same) {
      ++flipped;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < 32; ++r)
          for (std::size_t q = 0; q < 32; ++q)
            ASSERT_EQ(img.at(n, c, r, q), ds.images.at(n, c, r, 31 - q));
    }
  }
  EXPECT_GT(flipped, 0u);
  EXPECT_LT(flipped, 16u);
}

TEST(Augment, CropKeepsRange) {
  auto ds = synthetic_dataset(16, 4, 2.0);
  std::mt19937_64 rng(2);
  augment(ds.images, rng, {true, 4});
  EXPECT_NO_THROW(ds.validate());
}
