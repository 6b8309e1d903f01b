#include "paal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "paal/random.hpp"

namespace paal::exp {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError("bad value for '" + std::string(key) + "': '" + std::string(text) + "'");
  }
  return value;
}

template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  for (auto item : split(text, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

int parse_int(std::string_view key, std::string_view text) { return parse_number<int>(key, text); }

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_number(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

// Write beside the target and rename so readers never see a partial file.
void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp, content);
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

al::TrainConfig ExperimentConfig::default_train() {
  al::TrainConfig t;
  t.lr = 3e-3;
  return t;
}

std::size_t ExperimentConfig::iterations_for(std::size_t budget_index) const {
  return iterations.size() == 1 ? iterations.front() : iterations.at(budget_index);
}

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("at least one strategy is required");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (budgets.empty()) throw ConfigError("at least one budget is required");
  for (double b : budgets) {
    if (!(b > 0.0 && b <= 1.0)) throw ConfigError("budget " + format_number(b) + " outside (0, 1]");
  }
  if (iterations.size() != 1 && iterations.size() != budgets.size()) {
    throw ConfigError("iterations needs one value or one per budget");
  }
  for (auto t : iterations) {
    if (t == 0) throw ConfigError("iterations must be positive");
  }
  if (folds == 0 || folds > data::kFolds) throw ConfigError("folds must lie in 1..5");
  if (!(init_ratio > 0.0 && init_ratio < 1.0)) throw ConfigError("init_ratio must lie in (0, 1)");
  std::set<query::Strategy> seen_s(strategies.begin(), strategies.end());
  if (seen_s.size() != strategies.size()) throw ConfigError("duplicate strategy");
  std::set<std::uint64_t> seen_seed(seeds.begin(), seeds.end());
  if (seen_seed.size() != seeds.size()) throw ConfigError("duplicate seed");
  std::set<double> seen_b(budgets.begin(), budgets.end());
  if (seen_b.size() != budgets.size()) throw ConfigError("duplicate budget");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::vector<std::string> unknown;
  std::set<std::string, std::less<>> seen;
  bool has_iterations = false;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) throw ConfigError("duplicate key '" + std::string(key) + "'");

    auto& t = cfg.train;
    if (key == "dataset") {
      if (value.empty()) throw ConfigError("empty dataset path");
      cfg.dataset = fs::path(std::string(value));
    } else if (key == "n") {
      cfg.n = parse_number<std::size_t>(key, value);
    } else if (key == "data_seed") {
      cfg.data_seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "split_seed") {
      cfg.split_seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "strategies") {
      for (auto item : split(value, ',')) {
        try {
          cfg.strategies.push_back(query::parse_strategy(trim(item)));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
    } else if (key == "budgets") {
      cfg.budgets = parse_list<double>(key, value);
    } else if (key == "iterations") {
      cfg.iterations = parse_list<std::size_t>(key, value);
      has_iterations = true;
    } else if (key == "seeds") {
      cfg.seeds = parse_list<std::uint64_t>(key, value);
    } else if (key == "folds") {
      cfg.folds = parse_number<std::size_t>(key, value);
    } else if (key == "init_ratio") {
      cfg.init_ratio = parse_number<double>(key, value);
    } else if (key == "max_epochs") {
      t.max_epochs = parse_int(key, value);
    } else if (key == "early_stop_tolerance") {
      t.early_stop_tolerance = parse_int(key, value);
    } else if (key == "silent_period") {
      t.silent_period = parse_int(key, value);
    } else if (key == "iq_patience") {
      t.iq_patience = parse_int(key, value);
    } else if (key == "baseline_query_interval") {
      t.baseline_query_interval = parse_int(key, value);
    } else if (key == "batch_size") {
      t.batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "eval_batch_size") {
      t.eval_batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "lr") {
      t.lr = parse_number<double>(key, value);
    } else if (key == "lr_min") {
      t.lr_min = parse_number<double>(key, value);
    } else if (key == "warmup") {
      t.warmup = parse_int(key, value);
    } else if (key == "weight_decay") {
      t.weight_decay = parse_number<double>(key, value);
    } else if (key == "out_dir") {
      if (value.empty()) throw ConfigError("empty out_dir");
      cfg.out_dir = fs::path(std::string(value));
    } else {
      unknown.emplace_back(key);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  if (!has_iterations) throw ConfigError("missing key 'iterations'");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str());
  if (cfg.dataset && cfg.dataset->is_relative()) {
    cfg.dataset = fs::absolute(path).parent_path() / *cfg.dataset;
  }
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  if (cfg.dataset) out << "dataset = " << cfg.dataset->string() << '\n';
  out << "n = " << cfg.n << '\n';
  out << "data_seed = " << cfg.data_seed << '\n';
  out << "split_seed = " << cfg.split_seed << '\n';
  out << "strategies = ";
  for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
    out << (i ? ", " : "") << query::strategy_name(cfg.strategies[i]);
  }
  out << '\n';
  out << "budgets = " << join(cfg.budgets) << '\n';
  out << "iterations = " << join(cfg.iterations) << '\n';
  out << "seeds = " << join(cfg.seeds) << '\n';
  out << "folds = " << cfg.folds << '\n';
  out << "init_ratio = " << format_number(cfg.init_ratio) << '\n';
  const auto& t = cfg.train;
  out << "max_epochs = " << t.max_epochs << '\n';
  out << "early_stop_tolerance = " << t.early_stop_tolerance << '\n';
  out << "silent_period = " << t.silent_period << '\n';
  out << "iq_patience = " << t.iq_patience << '\n';
  out << "baseline_query_interval = " << t.baseline_query_interval << '\n';
  out << "batch_size = " << t.batch_size << '\n';
  out << "eval_batch_size = " << t.eval_batch_size << '\n';
  out << "lr = " << format_number(t.lr) << '\n';
  out << "lr_min = " << format_number(t.lr_min) << '\n';
  out << "warmup = " << t.warmup << '\n';
  out << "weight_decay = " << format_number(t.weight_decay) << '\n';
  return out.str();
}

std::string Cell::run_id() const {
  return std::string(query::strategy_name(strategy)) + "-b" + format_number(budget) + "-s" + std::to_string(seed) +
         "-f" + std::to_string(fold);
}

std::vector<Cell> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (auto s : cfg.strategies) {
    for (std::size_t bi = 0; bi < cfg.budgets.size(); ++bi) {
      for (auto seed : cfg.seeds) {
        for (std::size_t f = 0; f < cfg.folds; ++f) {
          cells.push_back({s, bi, cfg.budgets[bi], cfg.iterations_for(bi), seed, f});
        }
      }
    }
  }
  return cells;
}

data::Dataset load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.dataset) return data::generate(cfg.data_seed, cfg.n);
  try {
    return data::read_dataset(*cfg.dataset);
  } catch (const data::FormatError& e) {
    throw IoError(e.what());
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
}

std::size_t budget_count(double budget, std::size_t train_size) {
  // The small tolerance keeps 0.1 * 1600 at 160 despite binary rounding.
  return static_cast<std::size_t>(std::floor(budget * static_cast<double>(train_size) + 1e-9));
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0.0) return "0";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

CellRows format_cell(const Cell& cell, const al::RunReport& report) {
  const std::string id = cell.run_id();
  const std::string prefix = id + "," + std::string(query::strategy_name(cell.strategy)) + "," +
                             format_number(cell.budget) + "," + std::to_string(cell.seed) + "," +
                             std::to_string(cell.fold) + ",";
  CellRows rows;
  for (const auto& e : report.epochs) {
    std::string line = prefix;
    line += std::to_string(e.epoch) + "," + std::to_string(e.iteration) + "," + std::to_string(e.labeled_count) + ",";
    line += format_number(static_cast<double>(e.labeled_count) / static_cast<double>(report.train_size)) + ",";
    line += format_number(e.seg_loss) + ",";
    line += (e.ap_loss ? format_number(*e.ap_loss) : std::string()) + ",";
    line += format_number(e.val_mean);
    for (std::size_t c = 0; c < 3; ++c) {
      line += ",";
      if (c < e.val_dsc.size()) line += format_number(e.val_dsc[c]);
    }
    rows.results += line + "\n";
  }
  for (const auto& q : report.queries) {
    for (std::size_t i = 0; i < q.ids.size(); ++i) {
      rows.queries += id + "," + std::to_string(q.iteration) + "," + std::to_string(q.ids[i]) + ",";
      if (q.clusters[i] >= 0) rows.queries += std::to_string(q.clusters[i]);
      rows.queries += ",";
      if (!std::isnan(q.weights[i])) rows.queries += format_number(q.weights[i]);
      rows.queries += "," + format_number(q.wall_ms) + "\n";
    }
  }
  for (const auto& c : report.calibration) {
    rows.calibration += id + "," + std::to_string(c.sample_id) + "," + std::to_string(c.cls) + "," +
                        format_number(c.predicted) + "," + format_number(c.actual) + "\n";
  }
  return rows;
}

namespace {

constexpr const char* kCellFiles[] = {"results.csv", "queries.csv", "calibration.csv"};

void check_budgets(const ExperimentConfig& cfg, const data::FoldSplit& split) {
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    const std::size_t n = split.folds[f].train.size();
    const auto m = static_cast<std::size_t>(std::ceil(cfg.init_ratio * static_cast<double>(n)));
    for (double b : cfg.budgets) {
      if (budget_count(b, n) > n - std::min(n, m)) {
        throw ConfigError("budget " + format_number(b) + " exceeds the unlabeled pool of fold " + std::to_string(f));
      }
    }
  }
}

}  // namespace

RunSummary cmd_run(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  if (opts.jobs == 0) throw ConfigError("jobs must be positive");
  const data::Dataset dataset = load_dataset(cfg);
  if (dataset.size() < data::kFolds) throw ConfigError("dataset too small for five folds");
  if (dataset.max_label() < 1) throw ConfigError("dataset has no foreground labels");
  const auto split = data::split_folds(dataset.size(), cfg.split_seed);
  check_budgets(cfg, split);

  const fs::path out = opts.out_dir;
  const fs::path cells_dir = out / "cells";
  std::error_code ec;
  fs::create_directories(cells_dir, ec);
  if (ec) throw IoError("cannot create " + cells_dir.string() + ": " + ec.message());

  const std::string canonical = format_config(cfg);
  const fs::path config_copy = out / "config.txt";
  if (fs::exists(config_copy)) {
    if (read_file(config_copy) != canonical) {
      throw ConfigError(out.string() + " holds results of a different config");
    }
  } else {
    write_file_atomic(config_copy, canonical);
  }
  // Leftovers of cells that were interrupted mid-write.
  for (const auto& entry : fs::directory_iterator(cells_dir)) {
    if (entry.path().extension() == ".tmp") fs::remove_all(entry.path());
  }

  const auto cells = enumerate_cells(cfg);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!fs::is_directory(cells_dir / cells[i].run_id())) pending.push_back(i);
  }

  RunSummary summary{cells.size(), pending.size(), cells.size() - pending.size()};
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::size_t finished = 0;

  auto worker = [&] {
    while (!failed) {
      const std::size_t k = next++;
      if (k >= pending.size()) return;
      const Cell& cell = cells[pending[k]];
      try {
        const auto& fold = split.folds[cell.fold];
        al::RunConfig rc;
        rc.train = cfg.train;
        rc.init_ratio = cfg.init_ratio;
        rc.budget = budget_count(cell.budget, fold.train.size());
        rc.iterations = cell.iterations;
        rc.seed = derive_seed(cell.seed, cell.fold);
        const auto report = al::run_active_learning(rc, cell.strategy, dataset, fold);
        const auto rows = format_cell(cell, report);

        const fs::path final_dir = cells_dir / cell.run_id();
        const fs::path tmp_dir = final_dir.string() + ".tmp";
        fs::create_directories(tmp_dir);
        write_file(tmp_dir / kCellFiles[0], rows.results);
        write_file(tmp_dir / kCellFiles[1], rows.queries);
        write_file(tmp_dir / kCellFiles[2], rows.calibration);
        fs::rename(tmp_dir, final_dir);

        if (opts.log) {
          std::lock_guard lock(log_mutex);
          ++finished;
          *opts.log << "[" << finished << "/" << pending.size() << "] " << cell.run_id()
                    << " final_dsc=" << format_number(report.final_dsc) << " epochs=" << report.epochs.size()
                    << " queries=" << report.queries.size() << std::endl;
        }
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };

  const std::size_t threads = std::min(opts.jobs, std::max<std::size_t>(pending.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  const std::string_view headers[] = {kResultsHeader, kQueriesHeader, kCalibrationHeader};
  for (std::size_t f = 0; f < 3; ++f) {
    std::string content(headers[f]);
    content += '\n';
    for (const auto& cell : cells) content += read_file(cells_dir / cell.run_id() / kCellFiles[f]);
    write_file_atomic(out / kCellFiles[f], content);
  }
  return summary;
}

GenerateSummary cmd_generate(std::size_t n, std::uint64_t seed, const fs::path& out) {
  const auto dataset = data::generate(seed, n);
  try {
    data::write_dataset(out, dataset);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  GenerateSummary summary;
  summary.n = n;
  const std::size_t fg = data::ClassProfile::default_profile().num_foreground();
  summary.occurrence.assign(fg, 0.0);
  for (const auto& s : dataset.samples) {
    for (std::size_t c = 0; c < fg; ++c) {
      if (data::contains_label(s.mask, static_cast<std::uint8_t>(c + 1))) summary.occurrence[c] += 1.0;
    }
  }
  if (n > 0) {
    for (auto& v : summary.occurrence) v /= static_cast<double>(n);
  }
  return summary;
}

std::size_t Table::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw IoError("missing column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header.begin());
}

Table read_csv(const fs::path& path) {
  const std::string text = read_file(path);
  Table table;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    for (auto f : split(line, ',')) fields.emplace_back(f);
    if (table.header.empty()) {
      table.header = std::move(fields);
    } else {
      if (fields.size() != table.header.size()) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " fields");
      }
      table.rows.push_back(std::move(fields));
    }
  }
  if (table.header.empty()) throw IoError(path.string() + " is empty");
  return table;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {std::nan(""), std::nan("")};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) return std::nan("");
  const auto [mx, sx] = mean_std(x);
  const auto [my, sy] = mean_std(y);
  if (sx == 0.0 || sy == 0.0) return std::nan("");
  double cov = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) cov += (x[i] - mx) * (y[i] - my);
  return cov / static_cast<double>(x.size()) / (sx * sy);
}

std::vector<std::size_t> annotation_counts(const data::Dataset& dataset, const std::vector<std::uint32_t>& ids) {
  std::vector<std::size_t> counts(std::size_t{dataset.max_label()} + 1, 0);
  for (auto id : ids) {
    if (id >= dataset.size()) throw IoError("sample id " + std::to_string(id) + " not in dataset");
    ++counts[al::highest_label(dataset[id].mask)];
  }
  return counts;
}

namespace {

double to_double(const std::string& s) {
  double v = 0.0;
  if (s == "nan") return std::nan("");
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) throw IoError("bad number '" + s + "'");
  return v;
}

std::string opt_number(double v) { return std::isnan(v) ? std::string() : format_number(v); }

}  // namespace

void cmd_report(const fs::path& dir) {
  if (!fs::exists(dir / "results.csv")) throw IoError("missing " + (dir / "results.csv").string());
  const auto cfg = load_config(dir / "config.txt");
  const auto results = read_csv(dir / "results.csv");
  const auto queries = read_csv(dir / "queries.csv");
  const auto calibration = read_csv(dir / "calibration.csv");

  // run_id -> cell, for every cell the config names.
  std::map<std::string, Cell> cell_of;
  for (const auto& c : enumerate_cells(cfg)) cell_of.emplace(c.run_id(), c);
  auto lookup = [&](const std::string& id) -> const Cell& {
    const auto it = cell_of.find(id);
    if (it == cell_of.end()) throw IoError("run '" + id + "' is not part of the config");
    return it->second;
  };

  // Best validation DSC per run, and per run and labeled count.
  const auto r_id = results.column("run_id"), r_count = results.column("labeled_count"),
             r_ratio = results.column("labeled_ratio"), r_dsc = results.column("val_dsc_mean");
  std::map<std::string, double> final_dsc;
  std::map<std::string, std::map<std::size_t, std::pair<std::string, double>>> steps;
  for (const auto& row : results.rows) {
    lookup(row[r_id]);
    const double dsc = to_double(row[r_dsc]);
    auto [it, fresh] = final_dsc.emplace(row[r_id], dsc);
    if (!fresh) it->second = std::max(it->second, dsc);
    const auto count = static_cast<std::size_t>(to_double(row[r_count]));
    auto [st, new_step] = steps[row[r_id]].emplace(count, std::pair{row[r_ratio], dsc});
    if (!new_step) st->second.second = std::max(st->second.second, dsc);
  }

  // Query wall time per (run, iteration) and queried ids per run.
  const auto q_id = queries.column("run_id"), q_it = queries.column("iteration"),
             q_sample = queries.column("sample_id"), q_ms = queries.column("query_time_ms");
  std::map<std::pair<std::string, std::string>, double> query_ms;
  std::map<std::string, std::vector<std::uint32_t>> queried;
  for (const auto& row : queries.rows) {
    lookup(row[q_id]);
    query_ms[{row[q_id], row[q_it]}] = to_double(row[q_ms]);
    queried[row[q_id]].push_back(static_cast<std::uint32_t>(to_double(row[q_sample])));
  }

  std::ostringstream summary;
  summary << kSummaryHeader << '\n';
  for (auto s : cfg.strategies) {
    for (double b : cfg.budgets) {
      std::vector<double> dsc, ms;
      for (const auto& [id, cell] : cell_of) {
        if (cell.strategy != s || cell.budget != b) continue;
        if (auto it = final_dsc.find(id); it != final_dsc.end()) dsc.push_back(it->second);
        for (const auto& [key, v] : query_ms) {
          if (key.first == id) ms.push_back(v);
        }
      }
      const auto [m, sd] = mean_std(dsc);
      summary << query::strategy_name(s) << ',' << format_number(b) << ',' << opt_number(m) << ',' << opt_number(sd)
              << ',' << opt_number(mean_std(ms).first) << '\n';
    }
  }

  // Annotation distribution at the largest budget, summed over runs.
  const data::Dataset dataset = load_dataset(cfg);
  const double max_budget = *std::max_element(cfg.budgets.begin(), cfg.budgets.end());
  const std::size_t classes = std::size_t{dataset.max_label()} + 1;
  std::map<query::Strategy, std::vector<std::size_t>> dist;
  for (auto s : cfg.strategies) dist[s].assign(classes, 0);
  for (const auto& [id, ids] : queried) {
    const Cell& cell = lookup(id);
    if (cell.budget != max_budget) continue;
    const auto counts = annotation_counts(dataset, ids);
    for (std::size_t c = 0; c < classes; ++c) dist[cell.strategy][c] += counts[c];
  }
  std::ostringstream distribution;
  distribution << kDistributionHeader << '\n';
  const auto random_it = dist.find(query::Strategy::Random);
  for (auto s : cfg.strategies) {
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t count = dist[s][c];
      double ratio = std::nan("");
      if (random_it != dist.end() && random_it->second[c] > 0) {
        ratio = static_cast<double>(count) / static_cast<double>(random_it->second[c]);
      }
      distribution << query::strategy_name(s) << ',' << c << ',' << count << ',' << opt_number(ratio) << '\n';
    }
  }

  // Best DSC reached at each labeled ratio, averaged over the runs that reached it.
  std::ostringstream curves;
  curves << kCurvesHeader << '\n';
  for (auto s : cfg.strategies) {
    std::map<std::size_t, std::pair<std::string, std::vector<double>>> by_count;
    for (const auto& [id, per_count] : steps) {
      if (lookup(id).strategy != s) continue;
      for (const auto& [count, v] : per_count) {
        auto& slot = by_count[count];
        slot.first = v.first;
        slot.second.push_back(v.second);
      }
    }
    for (const auto& [count, v] : by_count) {
      curves << query::strategy_name(s) << ',' << v.first << ',' << format_number(mean_std(v.second).first) << '\n';
    }
  }

  // Per-sample mean predicted vs actual DSC over the final pool of each run.
  const auto c_id = calibration.column("run_id"), c_sample = calibration.column("sample_id"),
             c_pred = calibration.column("predicted_dsc"), c_act = calibration.column("actual_dsc");
  std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> cal;
  for (const auto& row : calibration.rows) {
    lookup(row[c_id]);
    auto& slot = cal[row[c_id]][row[c_sample]];
    slot.first.push_back(to_double(row[c_pred]));
    slot.second.push_back(to_double(row[c_act]));
  }
  std::ostringstream cal_summary;
  cal_summary << kCalibrationSummaryHeader << '\n';
  for (const auto& cell : enumerate_cells(cfg)) {
    const auto it = cal.find(cell.run_id());
    if (it == cal.end()) continue;
    std::vector<double> pred, act;
    for (const auto& [sample, v] : it->second) {
      pred.push_back(mean_std(v.first).first);
      act.push_back(mean_std(v.second).first);
    }
    cal_summary << cell.run_id() << ',' << query::strategy_name(cell.strategy) << ',' << format_number(cell.budget)
                << ',' << pred.size() << ',' << opt_number(pearson(pred, act)) << '\n';
  }

  write_file_atomic(dir / "summary.csv", summary.str());
  write_file_atomic(dir / "distribution.csv", distribution.str());
  write_file_atomic(dir / "curves.csv", curves.str());
  write_file_atomic(dir / "calibration_summary.csv", cal_summary.str());
}

}  // namespace paal::exp
