#pragma once

#include <string>
#include <vector>

#include "hsi/function_space.hpp"

namespace hsi {

struct NormalizationStats {
  double mean = 0.0;
  double std = 1.0;
};

// A set of same-shaped multichannel functions, stored flat as
// [sample][channel][sensor] (row-major). Per-channel pooled normalization
// stats travel with the data so consumers can map back to physical units.
struct Dataset {
  Dataset(Grid g, int n_channels, int n_samples);

  double* sample(int i) { return values.data() + static_cast<std::size_t>(i) * n_channels * grid.n(); }
  const double* sample(int i) const { return values.data() + static_cast<std::size_t>(i) * n_channels * grid.n(); }
  double* channel(int i, int c) { return sample(i) + static_cast<std::size_t>(c) * grid.n(); }
  const double* channel(int i, int c) const { return sample(i) + static_cast<std::size_t>(c) * grid.n(); }

  GridFunction function(int i, int c) const;
  void swap_channels();  // exchanges channel 0 and 1 (and their stats); needs n_channels == 2

  Grid grid;
  int n_channels;
  int n_samples;
  std::vector<double> values;
  std::vector<NormalizationStats> stats;  // one per channel
};

// Shift/scale every channel to pooled mean 0, std 1 (population std over all
// samples and sensors of that channel); records the stats used. Throws if a
// channel is essentially constant.
void normalize_dataset(Dataset& d);

// <base>.bin (raw little-endian doubles) + <base>.meta (text sidecar with
// shape and per-channel stats). Round-trips bit-exactly.
void write_dataset(const Dataset& d, const std::string& base_path);
Dataset read_dataset(const std::string& base_path);

}  // namespace hsi
