#include "paal/active_learning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "paal/random.hpp"

namespace paal::al {

namespace {

// Seed streams derived from a run seed.
enum Stream : std::uint64_t {
  kPoolStream = 1,
  kSegInitStream = 2,
  kApInitStream = 3,
  kShuffleStream = 1000,
  kQueryStream = 100000,
};

std::vector<std::uint8_t> gather_masks(const data::Dataset& dataset, std::span<const std::uint32_t> ids) {
  std::vector<std::uint8_t> out;
  out.reserve(ids.size() * dataset.pixels());
  for (auto id : ids) {
    const auto& m = dataset.samples.at(id).mask;
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

std::size_t num_classes_of(const data::Dataset& dataset) {
  return std::max<std::size_t>(2, std::size_t{dataset.max_label()} + 1);
}

struct PoolInference {
  Tensor probs;     // [N, C, H, W]
  Tensor features;  // [N, Dim]
  std::optional<Tensor> predicted;  // [N, C_fg]
};

PoolInference infer(const models::SegModel& seg, const models::APModel* ap, const data::Dataset& dataset,
                    std::span<const std::uint32_t> ids, std::size_t batch_size) {
  const std::size_t n = ids.size(), c = seg.num_classes();
  PoolInference out{Tensor({n, c, dataset.height, dataset.width}), Tensor({n, models::SegModel::kFeatureDim}), {}};
  if (ap) out.predicted = Tensor({n, ap->num_foreground()});
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(n, lo + batch_size);
    const auto batch_ids = ids.subspan(lo, hi - lo);
    const Tensor images = models::normalized_images(dataset, batch_ids);
    const auto o1 = models::seg_forward(seg, images);
    std::copy(o1.probs.data().begin(), o1.probs.data().end(), out.probs.ptr() + lo * o1.probs.slice_size());
    std::copy(o1.features.data().begin(), o1.features.data().end(),
              out.features.ptr() + lo * o1.features.slice_size());
    if (ap) {
      const Tensor o2 = models::ap_forward(*ap, images, o1.probs);
      std::copy(o2.data().begin(), o2.data().end(), out.predicted->ptr() + lo * o2.slice_size());
    }
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be positive");
  if (warmup < 0 || warmup >= max_epochs) throw std::invalid_argument("warmup must lie in [0, max_epochs)");
  if (silent_period < 0 || silent_period >= max_epochs) {
    throw std::invalid_argument("silent_period must lie in [0, max_epochs)");
  }
  if (early_stop_tolerance < 1) throw std::invalid_argument("early_stop_tolerance must be positive");
  if (iq_patience < 1) throw std::invalid_argument("iq_patience must be positive");
  if (baseline_query_interval < 1) throw std::invalid_argument("baseline_query_interval must be positive");
  if (batch_size == 0 || eval_batch_size == 0) throw std::invalid_argument("batch sizes must be positive");
  if (!(lr > 0.0) || !(lr_min >= 0.0) || lr_min > lr) throw std::invalid_argument("need 0 <= lr_min <= lr, lr > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
}

PoolState init_pool(std::span<const std::uint32_t> train_ids, double init_ratio, std::size_t budget,
                    std::size_t iterations, std::uint64_t seed) {
  if (!(init_ratio > 0.0 && init_ratio < 1.0)) throw std::invalid_argument("init_ratio must lie in (0, 1)");
  if (iterations == 0) throw std::invalid_argument("need at least one query iteration");
  const std::size_t n = train_ids.size();
  const auto m = static_cast<std::size_t>(std::ceil(init_ratio * static_cast<double>(n)));
  if (m == 0 || m > n) throw std::invalid_argument("initial labeled set is empty");
  if (budget > n - m) {
    throw std::invalid_argument("budget " + std::to_string(budget) + " exceeds the " + std::to_string(n - m) +
                                " unlabeled training samples");
  }

  std::vector<std::uint32_t> ids(train_ids.begin(), train_ids.end());
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  PoolState s;
  s.labeled.assign(ids.begin(), ids.begin() + static_cast<long>(m));
  s.unlabeled.assign(ids.begin() + static_cast<long>(m), ids.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  s.initial = m;
  s.budget = budget;
  s.iterations = iterations;
  s.b = std::max<std::size_t>(1, budget / iterations);
  return s;
}

EpochLosses train_epoch(models::SegModel& seg, models::APModel* ap, const data::Dataset& dataset,
                        std::span<const std::uint32_t> labeled, int epoch, const TrainConfig& cfg, double lr,
                        std::uint64_t seed) {
  if (labeled.empty()) throw std::invalid_argument("cannot train on an empty labeled set");
  std::vector<std::uint32_t> order(labeled.begin(), labeled.end());
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const bool train_ap = ap != nullptr && epoch > cfg.silent_period;
  const nn::AdamWOptions opts{.weight_decay = cfg.weight_decay};
  const std::size_t classes = seg.num_classes();
  const std::size_t seg_top = seg.net().layer_count() - 1;  // the loss gradient is taken at the logits
  const std::size_t pixels = dataset.pixels();

  EpochLosses out;
  double seg_sum = 0.0, ap_sum = 0.0;
  for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
    const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
    const auto ids = std::span<const std::uint32_t>(order).subspan(lo, hi - lo);
    const Tensor images = models::normalized_images(dataset, ids);
    const auto labels = gather_masks(dataset, ids);

    const auto cache = seg.net().forward(images);
    const Tensor& probs = cache.output();
    const auto loss = metrics::dice_ce_loss(probs, labels);
    seg.net().zero_grad();
    seg.net().backward(cache, loss.grad, seg_top, false);
    nn::adamw_step(seg.net().params(), lr, opts);
    seg_sum += loss.loss * static_cast<double>(ids.size());

    if (train_ap) {
      const std::size_t fg = ap->num_foreground();
      Tensor target({ids.size(), fg});
      for (std::size_t n = 0; n < ids.size(); ++n) {
        const auto pred = metrics::argmax_labels(probs.slice(n), classes);
        const auto dsc = metrics::dsc_per_class(pred, std::span(labels).subspan(n * pixels, pixels), fg);
        for (std::size_t j = 0; j < fg; ++j) target[n * fg + j] = static_cast<float>(dsc[j]);
      }
      const auto ap_cache = ap->net().forward(models::concat_channels(images, probs));
      const auto ap_loss = metrics::mse_loss(ap_cache.output(), target);
      ap->net().zero_grad();
      ap->net().backward(ap_cache, ap_loss.grad, ap->net().layer_count(), false);
      nn::adamw_step(ap->net().params(), lr, opts);
      ap_sum += ap_loss.loss * static_cast<double>(ids.size());
    }
  }
  out.seg = seg_sum / static_cast<double>(order.size());
  if (train_ap) out.ap = ap_sum / static_cast<double>(order.size());
  return out;
}

Evaluation evaluate(const models::SegModel& seg, const data::Dataset& dataset, std::span<const std::uint32_t> ids,
                    std::size_t batch_size) {
  if (ids.empty()) throw std::invalid_argument("cannot evaluate on an empty set");
  const std::size_t fg = seg.num_foreground(), classes = seg.num_classes();
  Evaluation ev;
  ev.per_class.assign(fg, 0.0);
  double total = 0.0;
  for (std::size_t lo = 0; lo < ids.size(); lo += batch_size) {
    const std::size_t hi = std::min(ids.size(), lo + batch_size);
    const auto batch = ids.subspan(lo, hi - lo);
    const Tensor probs = seg.net().forward(models::normalized_images(dataset, batch)).output();
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const auto pred = metrics::argmax_labels(probs.slice(n), classes);
      const auto dsc = metrics::dsc_per_class(pred, dataset.samples.at(batch[n]).mask, fg);
      for (std::size_t j = 0; j < fg; ++j) ev.per_class[j] += dsc[j];
      total += metrics::mean(dsc);
    }
  }
  for (auto& v : ev.per_class) v /= static_cast<double>(ids.size());
  ev.mean = total / static_cast<double>(ids.size());
  return ev;
}

bool iq_update(PoolState& state, double val_mean) {
  if (val_mean > state.best_val) {
    state.best_val = val_mean;
    state.iq_counter = 0;
    return true;
  }
  ++state.iq_counter;
  return false;
}

std::uint8_t highest_label(std::span<const std::uint8_t> mask) {
  return mask.empty() ? std::uint8_t{0} : *std::max_element(mask.begin(), mask.end());
}

QueryRecord query_step(PoolState& state, const models::SegModel& seg, const models::APModel* ap,
                       query::Strategy strategy, const data::Dataset& dataset, std::uint64_t seed,
                       std::size_t batch_size) {
  const auto start = std::chrono::steady_clock::now();
  QueryRecord rec;
  rec.iteration = state.t;
  rec.iq_before = state.iq_counter;
  rec.label_counts.assign(seg.num_classes(), 0);
  if (state.unlabeled.empty()) return rec;
  if (query::uses_predictor(strategy) && ap == nullptr) {
    throw std::invalid_argument(query::strategy_name(strategy) + " needs an accuracy predictor");
  }

  auto pool = infer(seg, query::uses_predictor(strategy) ? ap : nullptr, dataset, state.unlabeled, batch_size);
  query::QueryContext ctx;
  ctx.ids = state.unlabeled;
  ctx.b = std::min(state.b, state.unlabeled.size());
  ctx.seed = seed;
  ctx.features = std::move(pool.features);
  ctx.predicted = std::move(pool.predicted);
  if (strategy != query::Strategy::Random) ctx.probs = std::move(pool.probs);
  if (strategy == query::Strategy::CoreSet) {
    ctx.labeled_features = infer(seg, nullptr, dataset, state.labeled, batch_size).features;
  }
  auto sel = query::select_detailed(strategy, ctx);

  // oracle: the ground-truth masks come with the dataset
  for (auto id : sel.ids) ++rec.label_counts.at(highest_label(dataset.samples.at(id).mask));
  std::vector<std::uint32_t> picked = sel.ids;
  std::sort(picked.begin(), picked.end());
  std::vector<std::uint32_t> rest;
  std::set_difference(state.unlabeled.begin(), state.unlabeled.end(), picked.begin(), picked.end(),
                      std::back_inserter(rest));
  std::vector<std::uint32_t> labeled;
  std::merge(state.labeled.begin(), state.labeled.end(), picked.begin(), picked.end(), std::back_inserter(labeled));
  state.unlabeled = std::move(rest);
  state.labeled = std::move(labeled);
  ++state.t;
  state.iq_counter = 0;

  rec.ids = std::move(sel.ids);
  rec.clusters = std::move(sel.clusters);
  rec.weights = std::move(sel.weights);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

RunReport run_active_learning(const RunConfig& cfg, query::Strategy strategy, const data::Dataset& dataset,
                              const data::Fold& fold) {
  cfg.train.validate();
  if (fold.val.empty()) throw std::invalid_argument("validation split is empty");
  const auto& tc = cfg.train;
  const std::size_t classes = num_classes_of(dataset);

  PoolState state = init_pool(fold.train, cfg.init_ratio, cfg.budget, cfg.iterations,
                              derive_seed(cfg.seed, kPoolStream));
  models::SegModel seg(1, classes, dataset.height, dataset.width, derive_seed(cfg.seed, kSegInitStream));
  std::optional<models::APModel> ap;
  if (query::uses_predictor(strategy)) ap.emplace(1, classes, derive_seed(cfg.seed, kApInitStream));
  const nn::LrSchedule schedule{tc.warmup, tc.lr, tc.lr_min};

  RunReport report;
  report.train_size = fold.train.size();
  report.initial_labeled = state.initial;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const double lr = nn::cosine_lr(epoch, tc.max_epochs, schedule);
    const auto losses = train_epoch(seg, ap ? &*ap : nullptr, dataset, state.labeled, epoch, tc, lr,
                                    derive_seed(cfg.seed, kShuffleStream + static_cast<std::uint64_t>(epoch)));
    const auto ev = evaluate(seg, dataset, fold.val, tc.eval_batch_size);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iteration = state.t;
    rec.labeled_count = state.labeled.size();
    rec.seg_loss = losses.seg;
    rec.ap_loss = losses.ap;
    rec.val_dsc = ev.per_class;
    rec.val_mean = ev.mean;
    rec.improved = iq_update(state, ev.mean);
    rec.iq_counter = state.iq_counter;
    report.epochs.push_back(std::move(rec));

    const bool trigger = query::uses_predictor(strategy)
                             ? state.iq_counter >= static_cast<std::size_t>(tc.iq_patience)
                             : epoch % tc.baseline_query_interval == 0;
    if (trigger && !state.exhausted()) {
      auto q = query_step(state, seg, ap ? &*ap : nullptr, strategy, dataset,
                          derive_seed(cfg.seed, kQueryStream + state.t), tc.eval_batch_size);
      q.epoch = epoch;
      report.queries.push_back(std::move(q));
    }
    if (state.exhausted() && state.iq_counter >= static_cast<std::size_t>(tc.early_stop_tolerance)) break;
  }
  report.final_dsc = state.best_val;

  if (ap && !state.unlabeled.empty()) {
    const auto pool = infer(seg, &*ap, dataset, state.unlabeled, tc.eval_batch_size);
    const std::size_t fg = ap->num_foreground();
    for (std::size_t n = 0; n < state.unlabeled.size(); ++n) {
      const auto id = state.unlabeled[n];
      const auto pred = metrics::argmax_labels(pool.probs.slice(n), classes);
      const auto actual = metrics::dsc_per_class(pred, dataset.samples.at(id).mask, fg);
      for (std::size_t j = 0; j < fg; ++j) {
        report.calibration.push_back({id, j + 1, (*pool.predicted)[n * fg + j], actual[j]});
      }
    }
  }
  return report;
}

}  // namespace paal::al
