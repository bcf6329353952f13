#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hsi/dataset.hpp"
#include "hsi/random.hpp"

using namespace hsi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  TempDir() {
    path = fs::temp_directory_path() / ("hsi_dataset_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

Dataset make_random(int n_samples, int n_channels, int n, std::uint64_t seed) {
  Dataset d(Grid(n, 1.0), n_channels, n_samples);
  RandomStream rng(seed);
  for (double& v : d.values) v = 0.7 * rng.normal() + 0.2;
  return d;
}

}  // namespace

TEST_CASE("dataset layout is [sample][channel][sensor]") {
  Dataset d(Grid(3, 1.0), 2, 2);
  for (std::size_t i = 0; i < d.values.size(); ++i)
    d.values[i] = static_cast<double>(i);
  CHECK(d.sample(1) - d.sample(0) == 2 * 3);
  CHECK(d.channel(0, 1) - d.channel(0, 0) == 3);
  CHECK(d.channel(1, 1)[2] == 11.0);
  GridFunction f = d.function(1, 0);
  CHECK(f.values == std::vector<double>{6.0, 7.0, 8.0});
  CHECK_THROWS_AS(d.function(2, 0), std::invalid_argument);
  CHECK_THROWS_AS(d.function(0, 5), std::invalid_argument);
  CHECK_THROWS_AS(Dataset(Grid(3, 1.0), 0, 1), std::invalid_argument);
}

TEST_CASE("normalization maps each channel to pooled mean 0 / std 1 and is invertible") {
  Dataset d = make_random(20, 2, 17, 5);
  const std::vector<double> original = d.values;
  normalize_dataset(d);

  const int n = d.grid.n();
  const std::size_t per_channel = static_cast<std::size_t>(d.n_samples) * n;
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < d.n_samples; ++i)
      for (int j = 0; j < n; ++j) mean += d.channel(i, c)[j];
    mean /= static_cast<double>(per_channel);
    for (int i = 0; i < d.n_samples; ++i)
      for (int j = 0; j < n; ++j) {
        const double v = d.channel(i, c)[j] - mean;
        var += v * v;
      }
    var /= static_cast<double>(per_channel);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(d.stats[c].std > 0.0);
  }
  // stats invert the transform
  for (int i = 0; i < d.n_samples; ++i)
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < n; ++j) {
        const double back = d.channel(i, c)[j] * d.stats[c].std + d.stats[c].mean;
        const double orig = original[(static_cast<std::size_t>(i) * 2 + c) * n + j];
        CHECK(back == doctest::Approx(orig).epsilon(1e-12));
      }
}

TEST_CASE("normalization rejects an essentially constant channel") {
  Dataset d(Grid(5, 1.0), 1, 3);
  for (double& v : d.values) v = 4.2;
  CHECK_THROWS_AS(normalize_dataset(d), std::invalid_argument);
}

TEST_CASE("channel swap exchanges values and stats") {
  Dataset d = make_random(4, 2, 9, 6);
  normalize_dataset(d);
  Dataset copy = d;
  d.swap_channels();
  CHECK(d.stats[0].mean == copy.stats[1].mean);
  CHECK(d.stats[1].std == copy.stats[0].std);
  for (int i = 0; i < d.n_samples; ++i)
    for (int j = 0; j < d.grid.n(); ++j) {
      CHECK(d.channel(i, 0)[j] == copy.channel(i, 1)[j]);
      CHECK(d.channel(i, 1)[j] == copy.channel(i, 0)[j]);
    }
  Dataset one(Grid(5, 1.0), 1, 2);
  CHECK_THROWS_AS(one.swap_channels(), std::invalid_argument);
}

TEST_CASE("dataset files round-trip bit-exactly") {
  TempDir tmp;
  Dataset d = make_random(7, 2, 13, 9);
  normalize_dataset(d);
  const std::string base = (tmp.path / "pairs").string();
  write_dataset(d, base);
  Dataset r = read_dataset(base);
  CHECK(r.n_samples == d.n_samples);
  CHECK(r.n_channels == d.n_channels);
  CHECK(r.grid.n() == d.grid.n());
  CHECK(r.grid.length == d.grid.length);
  REQUIRE(r.values.size() == d.values.size());
  for (std::size_t i = 0; i < d.values.size(); ++i) CHECK(r.values[i] == d.values[i]);
  for (int c = 0; c < 2; ++c) {
    CHECK(r.stats[c].mean == d.stats[c].mean);
    CHECK(r.stats[c].std == d.stats[c].std);
  }
}

TEST_CASE("reader rejects truncated or mismatched payloads") {
  TempDir tmp;
  Dataset d = make_random(3, 1, 8, 4);
  const std::string base = (tmp.path / "broken").string();
  write_dataset(d, base);

  SUBCASE("binary shorter than the sidecar shape") {
    fs::resize_file(base + ".bin", 8 * 8);
    CHECK_THROWS_AS(read_dataset(base), std::runtime_error);
  }
  SUBCASE("binary longer than the sidecar shape") {
    std::ofstream app(base + ".bin", std::ios::binary | std::ios::app);
    const double extra = 1.0;
    app.write(reinterpret_cast<const char*>(&extra), sizeof extra);
    app.close();
    CHECK_THROWS_AS(read_dataset(base), std::runtime_error);
  }
  SUBCASE("unsupported schema version") {
    std::ofstream meta(base + ".meta", std::ios::trunc);
    meta << "schema_version = 2\nn_samples = 3\nn_channels = 1\nn_points = 8\n"
            "domain_length = 1\nchannel_mean_0 = 0\nchannel_std_0 = 1\n";
    meta.close();
    CHECK_THROWS_AS(read_dataset(base), std::runtime_error);
  }
  SUBCASE("missing sidecar key") {
    std::ofstream meta(base + ".meta", std::ios::trunc);
    meta << "schema_version = 1\nn_samples = 3\n";
    meta.close();
    CHECK_THROWS_AS(read_dataset(base), std::runtime_error);
  }
}
