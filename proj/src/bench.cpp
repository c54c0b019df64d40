#include "her/bench.hpp"

#include "her/error.hpp"
#include "her/incremental.hpp"

#include <algorithm>
#include <chrono>
#include <random>

namespace her {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Pairs of samples sharing an identity, labels first_id, first_id + 1, ...
FeatureMatrix random_pairs(Index dim, Index samples, IdentityId first_id, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix f;
  f.values.resize(dim, samples);
  for (Index j = 0; j < samples; ++j) {
    for (Index i = 0; i < dim; ++i) f.values(i, j) = normal(rng);
    f.labels.push_back(first_id + static_cast<IdentityId>(j / 2));
    f.views.push_back(j % 2 == 0 ? View::probe : View::gallery);
  }
  return f;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<BenchRow> run_bench(const BenchConfig& config) {
  if (config.repetitions < 1) fail(ErrorCode::invalid_parameter, "repetitions must be >= 1");
  if (config.chunk_size < 1) fail(ErrorCode::invalid_parameter, "chunk size must be >= 1");

  std::vector<BenchRow> rows;
  for (const auto& [dim, samples] : config.grid) {
    if (dim < 1 || samples < 2) fail(ErrorCode::invalid_parameter, "bench grid entries need d >= 1, n >= 2");
    std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(dim * 7919 + samples));
    const FeatureMatrix base = random_pairs(dim, samples, 1, rng);
    auto next_id = static_cast<IdentityId>(samples / 2 + 1);

    FitOptions incremental;
    incremental.incremental = true;
    incremental.allow_large_dim = true;
    HerModel model = fit_her_primal(base, config.lambda, incremental);

    BenchRow row;
    row.dim = dim;
    row.samples = samples;
    row.chunk_size = config.chunk_size;
    row.repetitions = config.repetitions;

    std::vector<double> batch, single, chunk;
    for (int r = 0; r < config.repetitions; ++r) {
      const FeatureMatrix pair = random_pairs(dim, 2, next_id, rng);
      const FeatureMatrix grown = FeatureMatrix::concat(base, pair);
      auto start = Clock::now();
      const HerModel refit = fit_her_primal(grown, config.lambda);
      batch.push_back(seconds_since(start));

      start = Clock::now();
      apply_update_policy(model, UpdateBatch{pair.values, pair.labels});
      single.push_back(seconds_since(start));
      next_id += 1;

      const FeatureMatrix block = random_pairs(dim, config.chunk_size, next_id, rng);
      next_id += static_cast<IdentityId>((config.chunk_size + 1) / 2);
      start = Clock::now();
      update_chunk(model, UpdateBatch{block.values, block.labels});
      chunk.push_back(seconds_since(start));
    }
    row.batch_fit_seconds = median(batch);
    row.single_pair_seconds = median(single);
    row.chunk_seconds = median(chunk);
    row.single_speedup = row.batch_fit_seconds / std::max(row.single_pair_seconds, 1e-12);
    row.chunk_speedup = row.batch_fit_seconds / std::max(row.chunk_seconds, 1e-12);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace her
