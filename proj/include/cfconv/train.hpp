#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "cfconv/model.hpp"

namespace cfconv::train {

inline constexpr const char* kMetricsHeader = "step,epoch,split,loss,accuracy,grad_norm,seconds";

struct MetricsRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0.0;
  double accuracy = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

std::string format_row(const MetricsRow& row);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct TrainOptions {
  /// Record wall-clock seconds per row. Off by default so identical seeds
  /// give byte-identical metrics files.
  bool wall_clock = false;
  std::function<void(const MetricsRow&)> on_row;
};

struct TrainReport {
  std::vector<MetricsRow> rows;
  double final_train_loss = 0.0;  // mean over the last epoch's steps
  EvalResult final_test;
};

/// Runs config().epochs epochs of train_step over `train_data`, evaluating on
/// `test_data` (if non-null) after every epoch.
TrainReport train_model(Model& model, const Dataset& train_data, const Dataset* test_data,
                        const TrainOptions& options = {});

}  // namespace cfconv::train
