#include <algorithm>
#include <set>

#include "doctest.h"
#include "paal/active_learning.hpp"

using namespace paal;
using namespace paal::al;

namespace {

std::vector<std::uint32_t> iota_ids(std::size_t n) {
  std::vector<std::uint32_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::uint32_t>(i);
  return ids;
}

// Noise-free images whose gray level is 60 * label.
data::Dataset staircase_dataset(std::size_t n, std::uint32_t h, std::uint32_t w) {
  auto ds = data::generate(3, n, data::ClassProfile::default_profile(), h, w);
  for (auto& s : ds.samples) {
    for (std::size_t p = 0; p < s.mask.size(); ++p) s.image[p] = static_cast<std::uint8_t>(60 * s.mask[p]);
  }
  return ds;
}

// Hand-set weights so that argmax over the logits recovers label = round(x / (60/255)):
// logit_c = -10 (relu(x - x_c) + relu(x_c - x)).
models::SegModel perfect_model(std::uint32_t h, std::uint32_t w) {
  models::SegModel model(1, 4, h, w, 0);
  auto& params = model.net().params();
  for (auto& p : params) p.value.fill(0.0f);
  auto set_w = [](nn::Param& p, std::size_t out, std::size_t in, std::size_t in_ch, float v) {
    p.value[(out * in_ch + in) * 9 + 4] = v;  // centre tap
  };
  auto& c1 = params[model.net().param_index(0)];
  auto& b1 = params[model.net().param_index(0) + 1];
  for (std::size_t c = 0; c < 4; ++c) {
    const float xc = 60.0f * static_cast<float>(c) / 255.0f;
    set_w(c1, c, 0, 1, 1.0f);
    b1.value[c] = -xc;
    set_w(c1, 4 + c, 0, 1, -1.0f);
    b1.value[4 + c] = xc;
  }
  auto& c2 = params[model.net().param_index(2)];
  for (std::size_t k = 0; k < 8; ++k) set_w(c2, k, k, 8, 1.0f);
  auto& c3 = params[model.net().param_index(4)];
  for (std::size_t c = 0; c < 4; ++c) {
    set_w(c3, c, c, 16, -10.0f);
    set_w(c3, c, 4 + c, 16, -10.0f);
  }
  return model;
}

bool partition_ok(const PoolState& s, std::span<const std::uint32_t> train) {
  std::vector<std::uint32_t> all(s.labeled);
  all.insert(all.end(), s.unlabeled.begin(), s.unlabeled.end());
  std::sort(all.begin(), all.end());
  return std::equal(all.begin(), all.end(), train.begin(), train.end()) &&
         std::is_sorted(s.labeled.begin(), s.labeled.end()) && std::is_sorted(s.unlabeled.begin(), s.unlabeled.end());
}

TrainConfig small_config() {
  TrainConfig c;
  c.max_epochs = 30;
  c.warmup = 2;
  c.early_stop_tolerance = 6;
  c.iq_patience = 3;
  c.batch_size = 8;
  c.lr = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("init_pool sizing and determinism") {
  const auto ids = iota_ids(1000);
  const auto s = init_pool(ids, 0.05, 100, 15, 4);
  CHECK(s.labeled.size() == 50);
  CHECK(s.unlabeled.size() == 950);
  CHECK(s.b == 6);
  CHECK(s.t == 1);
  CHECK(partition_ok(s, ids));
  CHECK(init_pool(ids, 0.05, 100, 15, 4).labeled == s.labeled);
  CHECK_FALSE(init_pool(ids, 0.05, 100, 15, 5).labeled == s.labeled);
  CHECK(init_pool(ids, 0.05, 3, 5, 4).b == 1);
  CHECK(init_pool(ids, 0.0101, 10, 1, 4).labeled.size() == 11);
  CHECK_THROWS_AS(init_pool(ids, 0.05, 951, 15, 4), std::invalid_argument);
  CHECK_NOTHROW(init_pool(ids, 0.05, 950, 15, 4));
  CHECK_THROWS_AS(init_pool(ids, 0.0, 10, 15, 4), std::invalid_argument);
  CHECK_THROWS_AS(init_pool(ids, 0.05, 10, 0, 4), std::invalid_argument);
}

TEST_CASE("iq counter traces") {
  PoolState s;
  CHECK(iq_update(s, 0.1));
  for (int i = 0; i < 10; ++i) CHECK_FALSE(iq_update(s, 0.1));
  CHECK(s.iq_counter == 10);

  PoolState r;
  iq_update(r, 0.5);
  for (int i = 0; i < 8; ++i) iq_update(r, 0.4);
  CHECK(r.iq_counter == 8);
  CHECK(iq_update(r, 0.6));
  CHECK(r.iq_counter == 0);
  CHECK(r.best_val == 0.6);

  PoolState a;
  double v = 0.0;
  for (int i = 0; i < 20; ++i) {
    v += 0.01;
    iq_update(a, i % 2 == 0 ? v : 0.0);
    CHECK(a.iq_counter <= 1);
  }
}

TEST_CASE("evaluate against hand-built predictors") {
  const auto ds = staircase_dataset(12, 16, 16);
  const auto ids = iota_ids(12);
  const auto perfect = perfect_model(16, 16);
  const auto ev = evaluate(perfect, ds, ids, 5);
  CHECK(ev.mean == 1.0);
  CHECK(ev.per_class == metrics::ClassDSC{1.0, 1.0, 1.0});

  // all-background predictor: class-1 DSC is zero on every image holding class 1
  models::SegModel bg(1, 4, 16, 16, 0);
  for (auto& p : bg.net().params()) p.value.fill(0.0f);
  bg.net().params()[bg.net().param_index(4) + 1].value[0] = 5.0f;
  std::vector<std::uint32_t> with_c1;
  for (auto id : ids) {
    if (data::contains_label(ds[id].mask, 1)) with_c1.push_back(id);
  }
  REQUIRE_FALSE(with_c1.empty());
  CHECK(evaluate(bg, ds, with_c1).per_class[0] == 0.0);
}

TEST_CASE("evaluate matches per-sample recomputation") {
  const auto ds = data::generate(8, 10, data::ClassProfile::default_profile(), 16, 16);
  const models::SegModel seg(1, 4, 16, 16, 3);
  const auto ids = iota_ids(10);
  double total = 0.0;
  for (auto id : ids) {
    const std::vector<std::uint32_t> one = {id};
    const auto probs = models::seg_forward(seg, models::normalized_images(ds, one)).probs;
    total += metrics::mean(metrics::dsc_per_class(metrics::argmax_labels(probs.slice(0), 4), ds[id].mask, 3));
  }
  CHECK(evaluate(seg, ds, ids, 3).mean == doctest::Approx(total / 10).epsilon(1e-12));
}

TEST_CASE("silent period keeps the predictor frozen") {
  const auto ds = data::generate(4, 6, data::ClassProfile::default_profile(), 16, 16);
  models::SegModel seg(1, 4, 16, 16, 1);
  models::APModel ap(1, 4, 2);
  const auto ids = iota_ids(6);
  TrainConfig cfg = small_config();
  const auto before = ap.net().params()[0].value;

  const auto silent = train_epoch(seg, &ap, ds, ids, 5, cfg, 1e-3, 9);
  CHECK_FALSE(silent.ap.has_value());
  CHECK(ap.net().params()[0].value == before);

  const auto seg_before = seg.net().params()[0].value;
  const auto active = train_epoch(seg, &ap, ds, ids, 6, cfg, 1e-3, 9);
  REQUIRE(active.ap.has_value());
  CHECK(*active.ap >= 0.0);
  CHECK_FALSE(ap.net().params()[0].value == before);
  CHECK_FALSE(seg.net().params()[0].value == seg_before);
}

TEST_CASE("training on a single sample and on a tiny fixed set") {
  const auto ds = data::generate(5, 8, data::ClassProfile::default_profile(), 16, 16);
  TrainConfig cfg = small_config();
  models::SegModel one(1, 4, 16, 16, 7);
  const std::vector<std::uint32_t> single = {3};
  CHECK(train_epoch(one, nullptr, ds, single, 1, cfg, 1e-3, 1).seg > 0.0);
  CHECK_THROWS_AS(train_epoch(one, nullptr, ds, std::vector<std::uint32_t>{}, 1, cfg, 1e-3, 1),
                  std::invalid_argument);

  models::SegModel seg(1, 4, 16, 16, 7);
  const auto ids = iota_ids(8);
  double first = 0.0, last = 0.0;
  for (int e = 1; e <= 50; ++e) {
    const double loss = train_epoch(seg, nullptr, ds, ids, e, cfg, 3e-3, 100 + e).seg;
    if (e == 1) first = loss;
    last = loss;
  }
  CHECK(last < 0.7 * first);
}

TEST_CASE("query step bookkeeping") {
  const auto ds = data::generate(6, 40, data::ClassProfile::default_profile(), 16, 16);
  const auto train = iota_ids(40);
  const models::SegModel seg(1, 4, 16, 16, 1);
  const models::APModel ap(1, 4, 2);

  auto s = init_pool(train, 0.1, 24, 4, 3);
  REQUIRE(s.b == 6);
  s.iq_counter = 12;
  const auto labeled_before = s.labeled.size();
  const auto rec = query_step(s, seg, &ap, query::Strategy::PaalFull, ds, 5);
  CHECK(rec.ids.size() == 6);
  CHECK(rec.iteration == 1);
  CHECK(rec.iq_before == 12);
  CHECK(s.labeled.size() == labeled_before + 6);
  CHECK(s.unlabeled.size() == 40 - labeled_before - 6);
  CHECK(s.t == 2);
  CHECK(s.iq_counter == 0);
  CHECK(partition_ok(s, train));
  for (auto id : rec.ids) CHECK(std::binary_search(s.labeled.begin(), s.labeled.end(), id));
  std::size_t counted = 0;
  for (auto c : rec.label_counts) counted += c;
  CHECK(counted == 6);

  for (auto strat : {query::Strategy::Random, query::Strategy::CoreSet, query::Strategy::EntropyKMeans}) {
    auto st = init_pool(train, 0.1, 24, 4, 3);
    CHECK(query_step(st, seg, nullptr, strat, ds, 5).ids.size() == 6);
    CHECK(partition_ok(st, train));
  }
  CHECK_THROWS_AS(query_step(s, seg, nullptr, query::Strategy::PaalApOnly, ds, 5), std::invalid_argument);

  // fewer pool samples than b: take what is left
  s.unlabeled.resize(3);
  const auto tail = query_step(s, seg, nullptr, query::Strategy::Random, ds, 5);
  CHECK(tail.ids.size() == 3);
  CHECK(s.unlabeled.empty());
  const auto none = query_step(s, seg, nullptr, query::Strategy::Random, ds, 5);
  CHECK(none.ids.empty());
  CHECK(s.t == 3);
}

TEST_CASE("run loop discipline") {
  const auto ds = data::generate(10, 80, data::ClassProfile::default_profile(), 16, 16);
  const auto split = data::split_folds(ds.size(), 2);
  const auto& fold = split.folds[0];

  RunConfig cfg;
  cfg.train = small_config();
  cfg.init_ratio = 0.1;
  cfg.budget = 20;
  cfg.iterations = 4;
  cfg.seed = 12;

  SUBCASE("baselines query on the interval grid") {
    const auto r = run_active_learning(cfg, query::Strategy::Random, ds, fold);
    REQUIRE(r.queries.size() == 4);
    for (const auto& q : r.queries) {
      CHECK(q.epoch % cfg.train.baseline_query_interval == 0);
      CHECK(q.iteration <= cfg.iterations);
      CHECK(q.ids.size() == 5);
    }
    CHECK(r.calibration.empty());
    for (std::size_t i = 1; i < r.epochs.size(); ++i) CHECK(r.epochs[i].epoch == r.epochs[i - 1].epoch + 1);
    CHECK(r.epochs.back().labeled_count <= r.initial_labeled + cfg.budget);
    double best = 0.0;
    for (const auto& e : r.epochs) best = std::max(best, e.val_mean);
    CHECK(r.final_dsc == best);
  }

  SUBCASE("PAAL queries follow a full run of stalled epochs") {
    cfg.train.max_epochs = 60;
    const auto r = run_active_learning(cfg, query::Strategy::PaalFull, ds, fold);
    REQUIRE_FALSE(r.queries.empty());
    for (const auto& q : r.queries) {
      CHECK(q.iteration <= cfg.iterations);
      CHECK(q.iq_before >= static_cast<std::size_t>(cfg.train.iq_patience));
      const int patience = cfg.train.iq_patience;
      for (int e = q.epoch - patience + 1; e <= q.epoch; ++e) CHECK_FALSE(r.epochs[e - 1].improved);
    }
    const std::size_t pool = fold.train.size() - r.epochs.back().labeled_count;
    CHECK(r.calibration.size() == pool * 3);
  }

  SUBCASE("zero budget never queries") {
    cfg.budget = 0;
    const auto r = run_active_learning(cfg, query::Strategy::Random, ds, fold);
    CHECK(r.queries.empty());
    CHECK(r.epochs.back().labeled_count == r.initial_labeled);
  }

  SUBCASE("identical seeds give identical runs") {
    cfg.train.max_epochs = 12;
    const auto a = run_active_learning(cfg, query::Strategy::Random, ds, fold);
    const auto b = run_active_learning(cfg, query::Strategy::Random, ds, fold);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
      CHECK(a.epochs[i].seg_loss == b.epochs[i].seg_loss);
      CHECK(a.epochs[i].val_dsc == b.epochs[i].val_dsc);
    }
    REQUIRE(a.queries.size() == b.queries.size());
    for (std::size_t i = 0; i < a.queries.size(); ++i) CHECK(a.queries[i].ids == b.queries[i].ids);
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.warmup = c.max_epochs;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.silent_period = c.max_epochs;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
