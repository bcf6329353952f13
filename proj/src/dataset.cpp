#include "hsi/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "hsi/errors.hpp"

namespace hsi {

Dataset::Dataset(Grid g, int n_channels_, int n_samples_)
    : grid(std::move(g)), n_channels(n_channels_), n_samples(n_samples_) {
  if (n_channels < 1 || n_samples < 1)
    throw std::invalid_argument("Dataset: channel and sample counts must be positive");
  values.assign(static_cast<std::size_t>(n_samples) * n_channels * grid.n(), 0.0);
  stats.assign(n_channels, NormalizationStats{});
}

GridFunction Dataset::function(int i, int c) const {
  if (i < 0 || i >= n_samples || c < 0 || c >= n_channels)
    throw std::invalid_argument("Dataset::function: index out of range");
  const double* p = channel(i, c);
  return GridFunction(grid, std::vector<double>(p, p + grid.n()));
}

void Dataset::swap_channels() {
  if (n_channels != 2)
    throw std::invalid_argument("Dataset::swap_channels: needs exactly 2 channels");
  const int n = grid.n();
  for (int i = 0; i < n_samples; ++i) {
    double* c0 = channel(i, 0);
    double* c1 = channel(i, 1);
    for (int j = 0; j < n; ++j) std::swap(c0[j], c1[j]);
  }
  std::swap(stats[0], stats[1]);
}

void normalize_dataset(Dataset& d) {
  const int n = d.grid.n();
  const std::size_t per_channel = static_cast<std::size_t>(d.n_samples) * n;
  for (int c = 0; c < d.n_channels; ++c) {
    double mean = 0.0;
    for (int i = 0; i < d.n_samples; ++i) {
      const double* p = d.channel(i, c);
      for (int j = 0; j < n; ++j) mean += p[j];
    }
    mean /= static_cast<double>(per_channel);
    double var = 0.0;
    for (int i = 0; i < d.n_samples; ++i) {
      const double* p = d.channel(i, c);
      for (int j = 0; j < n; ++j) var += (p[j] - mean) * (p[j] - mean);
    }
    var /= static_cast<double>(per_channel);
    double sd = std::sqrt(var);
    if (!(sd > 1e-300))
      throw std::invalid_argument("normalize_dataset: channel has zero variance");
    for (int i = 0; i < d.n_samples; ++i) {
      double* p = d.channel(i, c);
      for (int j = 0; j < n; ++j) p[j] = (p[j] - mean) / sd;
    }
    d.stats[c] = NormalizationStats{mean, sd};
  }
}

namespace {

std::uint64_t to_le_bits(double x) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(x);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  return u;
}

double from_le_bits(std::uint64_t u) {
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  return std::bit_cast<double>(u);
}

std::string fmt_full(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& d, const std::string& base_path) {
  {
    std::ofstream bin(base_path + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("write_dataset: cannot open " + base_path + ".bin");
    std::vector<std::uint64_t> buf(d.values.size());
    for (std::size_t i = 0; i < d.values.size(); ++i) buf[i] = to_le_bits(d.values[i]);
    bin.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(std::uint64_t)));
    if (!bin) throw std::runtime_error("write_dataset: short write to " + base_path + ".bin");
  }
  std::ofstream meta(base_path + ".meta", std::ios::trunc);
  if (!meta) throw std::runtime_error("write_dataset: cannot open " + base_path + ".meta");
  meta << "schema_version = 1\n";
  meta << "n_samples = " << d.n_samples << "\n";
  meta << "n_channels = " << d.n_channels << "\n";
  meta << "n_points = " << d.grid.n() << "\n";
  meta << "domain_length = " << fmt_full(d.grid.length) << "\n";
  for (int c = 0; c < d.n_channels; ++c) {
    meta << "channel_mean_" << c << " = " << fmt_full(d.stats[c].mean) << "\n";
    meta << "channel_std_" << c << " = " << fmt_full(d.stats[c].std) << "\n";
  }
  if (!meta) throw std::runtime_error("write_dataset: short write to " + base_path + ".meta");
}

Dataset read_dataset(const std::string& base_path) {
  std::ifstream meta(base_path + ".meta");
  if (!meta) throw std::runtime_error("read_dataset: cannot open " + base_path + ".meta");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("read_dataset: malformed sidecar line: " + line);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto want = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw std::runtime_error("read_dataset: sidecar missing key " + key);
    return it->second;
  };
  if (want("schema_version") != "1")
    throw std::runtime_error("read_dataset: unsupported schema_version");
  int n_samples = std::stoi(want("n_samples"));
  int n_channels = std::stoi(want("n_channels"));
  int n_points = std::stoi(want("n_points"));
  double length = std::stod(want("domain_length"));

  Dataset d(Grid(n_points, length), n_channels, n_samples);
  for (int c = 0; c < n_channels; ++c) {
    d.stats[c].mean = std::stod(want("channel_mean_" + std::to_string(c)));
    d.stats[c].std = std::stod(want("channel_std_" + std::to_string(c)));
  }

  std::ifstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("read_dataset: cannot open " + base_path + ".bin");
  std::vector<std::uint64_t> buf(d.values.size());
  bin.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(std::uint64_t)));
  if (bin.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(std::uint64_t)))
    throw std::runtime_error("read_dataset: binary payload size does not match sidecar shape");
  char probe;
  if (bin.read(&probe, 1))
    throw std::runtime_error("read_dataset: binary payload larger than sidecar shape");
  for (std::size_t i = 0; i < buf.size(); ++i) d.values[i] = from_le_bits(buf[i]);
  for (double x : d.values)
    if (!std::isfinite(x))
      throw std::runtime_error("read_dataset: payload contains non-finite values");
  return d;
}

}  // namespace hsi
