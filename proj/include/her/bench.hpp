#pragma once

#include "her/core_model.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace her {

struct BenchConfig {
  std::vector<std::pair<Index, Index>> grid = {{256, 1000}, {512, 2000}};  // (d, n)
  int repetitions = 5;
  Index chunk_size = 64;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

// Median wall times over the repetitions.
struct BenchRow {
  Index dim = 0;
  Index samples = 0;
  Index chunk_size = 0;
  int repetitions = 0;
  double batch_fit_seconds = 0.0;    // full refit on n + 2 samples
  double single_pair_seconds = 0.0;  // incremental update with one new pair
  double chunk_seconds = 0.0;        // incremental update with chunk_size samples
  double single_speedup = 0.0;       // batch / single pair
  double chunk_speedup = 0.0;        // batch / chunk
};

std::vector<BenchRow> run_bench(const BenchConfig& config);

double median(std::vector<double> values);

}  // namespace her
