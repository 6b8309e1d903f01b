#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "paal/active_learning.hpp"
#include "paal/data.hpp"
#include "paal/query.hpp"

namespace paal::exp {

/// Bad or inconsistent configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable inputs and failed writes; exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;  // when absent the dataset is generated from n / data_seed
  std::size_t n = 2000;
  std::uint64_t data_seed = 7;
  std::uint64_t split_seed = 0;
  std::vector<query::Strategy> strategies;
  std::vector<double> budgets;                // fractions of the training pool, in (0, 1]
  std::vector<std::size_t> iterations;        // T, one per budget (a single value applies to all)
  std::vector<std::uint64_t> seeds;
  std::size_t folds = 5;                      // the first `folds` of the five-fold split are run
  double init_ratio = 0.05;
  al::TrainConfig train = default_train();
  std::optional<std::filesystem::path> out_dir;

  std::size_t iterations_for(std::size_t budget_index) const;
  void validate() const;

  /// Training defaults tuned for the 32x32 synthetic data: a higher peak learning
  /// rate than the library default.
  static al::TrainConfig default_train();
};

/// Parses `key = value` lines; `#` starts a comment. Unknown, duplicate or
/// malformed keys raise ConfigError naming every offending key.
ExperimentConfig parse_config(std::string_view text);

/// Reads and parses a config file. A relative dataset path is resolved against
/// the file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form with every key; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig& cfg);

struct Cell {
  query::Strategy strategy;
  std::size_t budget_index = 0;
  double budget = 0.0;
  std::size_t iterations = 1;
  std::uint64_t seed = 0;
  std::size_t fold = 0;

  std::string run_id() const;
};

/// strategy x budget x seed x fold, in that nesting order.
std::vector<Cell> enumerate_cells(const ExperimentConfig& cfg);

/// Dataset named by the config, or generated from its parameters.
data::Dataset load_dataset(const ExperimentConfig& cfg);

/// floor(budget * train_size).
std::size_t budget_count(double budget, std::size_t train_size);

/// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

inline constexpr std::string_view kResultsHeader =
    "run_id,strategy,budget,seed,fold,epoch,iteration,labeled_count,labeled_ratio,seg_loss,ap_loss,val_dsc_mean,"
    "val_dsc_c1,val_dsc_c2,val_dsc_c3";
inline constexpr std::string_view kQueriesHeader = "run_id,iteration,sample_id,cluster,weight,query_time_ms";
inline constexpr std::string_view kCalibrationHeader = "run_id,sample_id,class,predicted_dsc,actual_dsc";
inline constexpr std::string_view kSummaryHeader = "strategy,budget,dsc_mean,dsc_std,query_time_mean";
inline constexpr std::string_view kDistributionHeader = "strategy,class,annotated_count,ratio_vs_random";
inline constexpr std::string_view kCurvesHeader = "strategy,labeled_ratio,dsc_mean";
inline constexpr std::string_view kCalibrationSummaryHeader = "run_id,strategy,budget,samples,pearson_r";

/// CSV rows (no headers) produced by one cell.
struct CellRows {
  std::string results;
  std::string queries;
  std::string calibration;
};

CellRows format_cell(const Cell& cell, const al::RunReport& report);

struct RunOptions {
  std::filesystem::path out_dir;
  std::size_t jobs = 1;
  std::ostream* log = nullptr;
};

struct RunSummary {
  std::size_t cells = 0;
  std::size_t computed = 0;  // cells run by this invocation
  std::size_t reused = 0;    // cells found complete on disk
};

/// Runs every missing cell into out_dir/cells/<run_id>/ and then concatenates
/// all cells, in config order, into results.csv, queries.csv and calibration.csv.
/// A cell directory only appears once all of its files are written, so an
/// interrupted campaign resumes where it stopped. Refuses to reuse a directory
/// written by a different config.
RunSummary cmd_run(const ExperimentConfig& cfg, const RunOptions& opts);

struct GenerateSummary {
  std::size_t n = 0;
  std::vector<double> occurrence;  // fraction of images containing each foreground class
};

GenerateSummary cmd_generate(std::size_t n, std::uint64_t seed, const std::filesystem::path& out);

/// Reads a results directory written by cmd_run and writes summary.csv,
/// distribution.csv, curves.csv and calibration_summary.csv next to it.
void cmd_report(const std::filesystem::path& dir);

// Helpers shared with the report and its checks.

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

/// Plain comma-separated file; throws IoError when missing or ragged.
Table read_csv(const std::filesystem::path& path);

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Pearson correlation; NaN when either side has zero variance or fewer than two points.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Queried samples of each run grouped by the highest label in their mask;
/// index 0 counts background-only samples.
std::vector<std::size_t> annotation_counts(const data::Dataset& dataset, const std::vector<std::uint32_t>& ids);

}  // namespace paal::exp
