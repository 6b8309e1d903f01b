#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "paal/data.hpp"
#include "paal/metrics.hpp"
#include "paal/models.hpp"
#include "paal/query.hpp"

namespace paal::al {

struct TrainConfig {
  int max_epochs = 120;
  int early_stop_tolerance = 15;
  int silent_period = 5;            // epochs 1..silent_period train only the segmentation model
  int iq_patience = 10;             // non-improving epochs before a PAAL query
  int baseline_query_interval = 5;  // baselines query after every this many epochs
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 64;
  double lr = 1e-3;
  double lr_min = 1e-6;
  int warmup = 10;
  double weight_decay = 1e-4;

  void validate() const;
};

struct PoolState {
  std::vector<std::uint32_t> labeled;    // ascending
  std::vector<std::uint32_t> unlabeled;  // ascending
  std::size_t initial = 0;               // M, size of the seed set
  std::size_t budget = 0;                // B
  std::size_t iterations = 0;            // T
  std::size_t b = 1;
  std::size_t t = 1;
  std::size_t iq_counter = 0;
  double best_val = -std::numeric_limits<double>::infinity();

  std::size_t queried() const noexcept { return labeled.size() - initial; }
  /// No further query can happen.
  bool exhausted() const noexcept { return t > iterations || unlabeled.empty() || queried() + b > budget; }
};

/// M = ceil(init_ratio * N) ids drawn with `seed` form the labeled seed set;
/// b = max(1, floor(B / T)). Throws when B > N - M.
PoolState init_pool(std::span<const std::uint32_t> train_ids, double init_ratio, std::size_t budget,
                    std::size_t iterations, std::uint64_t seed);

struct EpochLosses {
  double seg = 0.0;
  std::optional<double> ap;  // absent during the silent period or without a predictor
};

/// One pass over `labeled` in shuffled mini-batches at learning rate `lr`.
/// The segmentation model is trained with Dice+CE; when `ap` is given and the
/// silent period is over, the predictor is trained with MSE against the
/// per-class DSC of the (detached) segmentation output.
EpochLosses train_epoch(models::SegModel& seg, models::APModel* ap, const data::Dataset& dataset,
                        std::span<const std::uint32_t> labeled, int epoch, const TrainConfig& cfg, double lr,
                        std::uint64_t seed);

struct Evaluation {
  metrics::ClassDSC per_class;  // mean over samples, per foreground class
  double mean = 0.0;            // mean over samples of the per-sample class mean
};

Evaluation evaluate(const models::SegModel& seg, const data::Dataset& dataset, std::span<const std::uint32_t> ids,
                    std::size_t batch_size = 64);

/// Strict improvement over the best validation score resets the counter and
/// records the new best; anything else increments it. Returns `improved`.
bool iq_update(PoolState& state, double val_mean);

struct QueryRecord {
  int epoch = 0;
  std::size_t iteration = 0;                 // t at the time of the query
  std::size_t iq_before = 0;                 // counter value that allowed the query
  std::vector<std::uint32_t> ids;
  std::vector<int> clusters;
  std::vector<double> weights;
  std::vector<std::size_t> label_counts;     // queried samples by highest label present (0 = background only)
  double wall_ms = 0.0;
};

/// Runs inference over the unlabeled pool, selects min(b, |D_u|) ids, moves
/// them into the labeled set and advances t. An empty pool yields a record
/// with no ids and leaves the state untouched.
QueryRecord query_step(PoolState& state, const models::SegModel& seg, const models::APModel* ap,
                       query::Strategy strategy, const data::Dataset& dataset, std::uint64_t seed,
                       std::size_t batch_size = 64);

/// Highest label present in a mask, 0 when it is background only.
std::uint8_t highest_label(std::span<const std::uint8_t> mask);

struct EpochRecord {
  int epoch = 0;
  std::size_t iteration = 0;
  std::size_t labeled_count = 0;
  double seg_loss = 0.0;
  std::optional<double> ap_loss;
  metrics::ClassDSC val_dsc;
  double val_mean = 0.0;
  bool improved = false;
  std::size_t iq_counter = 0;  // after the update, before any query
};

struct CalibrationRecord {
  std::uint32_t sample_id = 0;
  std::size_t cls = 0;  // 1-based foreground class
  double predicted = 0.0;
  double actual = 0.0;
};

struct RunConfig {
  TrainConfig train;
  double init_ratio = 0.05;
  std::size_t budget = 0;
  std::size_t iterations = 1;
  std::uint64_t seed = 0;
};

struct RunReport {
  std::size_t train_size = 0;
  std::size_t initial_labeled = 0;
  std::vector<EpochRecord> epochs;
  std::vector<QueryRecord> queries;
  std::vector<CalibrationRecord> calibration;  // predictor strategies only, over the final pool
  double final_dsc = 0.0;                      // best validation mean DSC of the run
};

/// Joint training and querying until the budget is spent and validation has
/// stalled for early_stop_tolerance epochs, or max_epochs is reached.
RunReport run_active_learning(const RunConfig& cfg, query::Strategy strategy, const data::Dataset& dataset,
                              const data::Fold& fold);

}  // namespace paal::al
