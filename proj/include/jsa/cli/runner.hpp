#pragma once

#include "jsa/cli/run_config.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>

namespace jsa::cli {

enum ExitCode : int { exit_ok = 0, exit_internal = 1, exit_config = 2, exit_numeric = 3, exit_io = 4 };

struct RunSummary {
  std::string status = "ok";
  std::uint64_t iterations = 0;
  std::size_t skipped_updates = 0;
  std::map<std::string, double> final_metrics;
};

/// Writes config.json and the experiment's dataset files into out.
void gen_data(const RunConfig& config, const std::filesystem::path& out);

/// Trains and writes config.json, data, metrics.csv, checkpoints/ and
/// summary.json. With resume, continues from the latest checkpoint in out;
/// the result is identical to an uninterrupted run.
RunSummary train(const RunConfig& config, const std::filesystem::path& out, bool resume = false);

/// Recomputes the experiment metrics from checkpoints/final and writes
/// eval.json.
RunSummary evaluate(const RunConfig& config, const std::filesystem::path& out);

/// Draws `count` samples (eval.samples when 0) from the final checkpoint and
/// writes samples.csv (samples.txt for sequences). Returns the file written.
std::filesystem::path export_samples(const RunConfig& config, const std::filesystem::path& out,
                                     std::size_t count = 0);

/// Directory holding the IDX digit files when data.dir is empty.
std::filesystem::path default_digits_dir();

/// Runs `body`, mapping exceptions to exit codes and writing the message to
/// stderr.
int guarded(const std::function<void()>& body);

/// Text of a metrics CSV cell.
std::string format_number(double v);

}  // namespace jsa::cli
