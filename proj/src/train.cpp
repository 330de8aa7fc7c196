#include "cfconv/train.hpp"

#include <charconv>
#include <chrono>
#include <fstream>

#include "cfconv/error.hpp"

namespace cfconv::train {

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_row(const MetricsRow& r) {
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + r.split + "," +
         shortest(r.loss) + "," + shortest(r.accuracy) + "," + shortest(r.grad_norm) + "," +
         shortest(r.seconds);
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) out << format_row(r) << "\n";
}

TrainReport train_model(Model& model, const Dataset& train_data, const Dataset* test_data,
                        const TrainOptions& options) {
  const auto& cfg = model.config();
  if (train_data.height != cfg.input_height || train_data.width != cfg.input_width ||
      train_data.channels != cfg.input_channels) {
    throw DataError("training data is " + std::to_string(train_data.height) + "x" +
                    std::to_string(train_data.width) + "x" + std::to_string(train_data.channels) +
                    " but the model expects " + std::to_string(cfg.input_height) + "x" +
                    std::to_string(cfg.input_width) + "x" + std::to_string(cfg.input_channels));
  }
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed = [&] {
    return options.wall_clock ? std::chrono::duration<double>(clock::now() - start).count() : 0.0;
  };
  TrainReport report;
  auto emit = [&](MetricsRow row) {
    if (options.on_row) options.on_row(row);
    report.rows.push_back(std::move(row));
  };

  const BatchOptions batching{cfg.batch_size, true, cfg.augment, cfg.shift_pixels};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchStream stream(train_data, batching, cfg.seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      const auto m = train_step(model, *batch);
      loss_sum += m.loss;
      ++steps;
      emit({model.steps_taken, epoch, "train", m.loss, m.accuracy, m.grad_norm, elapsed()});
    }
    report.final_train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    if (test_data) {
      report.final_test = evaluate(model, *test_data, cfg.batch_size);
      emit({model.steps_taken, epoch, "test", report.final_test.loss, report.final_test.accuracy, 0.0,
            elapsed()});
    }
  }
  return report;
}

}  // namespace cfconv::train
