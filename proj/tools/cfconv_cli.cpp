// cfconv command-line driver.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cfconv/bench.hpp"
#include "cfconv/checkpoint.hpp"
#include "cfconv/config.hpp"
#include "cfconv/dataset.hpp"
#include "cfconv/error.hpp"
#include "cfconv/export.hpp"
#include "cfconv/profile.hpp"
#include "cfconv/spectral_bias.hpp"
#include "cfconv/train.hpp"

namespace fs = std::filesystem;
using namespace cfconv;
using train::Dataset;
using train::read_dataset;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "cfconv_out";
  bool quiet = false;
};

struct ConfigOverrides {
  std::string selected_positions;
  std::string parameterization;
  std::string train_data;
  std::string test_data;
  std::optional<std::size_t> epochs;
};

// Overrides go into the JSON before parsing so that, for example, a changed
// parameterization also picks its default widths.
train::ModelConfig resolve_config(const Globals& g, const ConfigOverrides& o) {
  nlohmann::json j = g.config_path.empty() ? nlohmann::json::object() : train::load_config_json(g.config_path);
  if (!j.is_object()) throw ConfigError("config file '" + g.config_path + "' must hold a JSON object");
  if (!o.parameterization.empty()) {
    if (o.parameterization != "spatial3x3" && !kernelgen::parse_parameterization(o.parameterization)) {
      throw ConfigError("unknown parameterization '" + o.parameterization + "'");
    }
    if (j.contains("parameterization") && j["parameterization"] != o.parameterization) j.erase("mlp_widths");
    j["parameterization"] = o.parameterization;
  }
  if (!o.selected_positions.empty()) {
    if (o.selected_positions == "all") {
      j["selected_positions"] = "all";
    } else {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(o.selected_positions, &used);
        if (used != o.selected_positions.size() || v < 1) throw std::invalid_argument("");
        j["selected_positions"] = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw ConfigError("--selected-positions expects a positive integer or 'all', got '" + o.selected_positions + "'");
      }
    }
  }
  if (g.seed) j["seed"] = *g.seed;
  if (!o.train_data.empty()) j["train_data"] = o.train_data;
  if (!o.test_data.empty()) j["test_data"] = o.test_data;
  if (o.epochs) j["epochs"] = *o.epochs;
  return train::config_from_json(j);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

int run_train(const Globals& g, const ConfigOverrides& o, bool wall_clock) {
  const auto config = resolve_config(g, o);
  if (config.train_data.empty()) throw ConfigError("no training data: set train_data in the config or pass --train-data");
  const auto train_set = read_dataset(config.train_data);
  std::optional<Dataset> test_set;
  if (!config.test_data.empty()) test_set = read_dataset(config.test_data);
  ensure_dir(g.out_dir);

  train::Model model(config);
  train::TrainOptions options;
  options.wall_clock = wall_clock;
  if (!g.quiet) {
    options.on_row = [](const train::MetricsRow& r) {
      if (r.split == "test") {
        std::cout << "epoch " << r.epoch << " step " << r.step << " test loss " << r.loss << " accuracy "
                  << r.accuracy << std::endl;
      }
    };
  }
  const auto report = train::train_model(model, train_set, test_set ? &*test_set : nullptr, options);
  const auto metrics = in_dir(g.out_dir, "metrics.csv");
  const auto checkpoint = in_dir(g.out_dir, "checkpoint.cfcv");
  train::write_metrics_csv(metrics, report.rows);
  train::save_checkpoint(model, checkpoint);
  if (!g.quiet) {
    std::cout << "variant " << train::parameterization_name(config) << ", "
              << profile::group_digits(model.parameter_count()) << " parameters, " << model.steps_taken
              << " steps\nfinal train loss " << report.final_train_loss << "\n";
    if (test_set) std::cout << "test accuracy " << report.final_test.accuracy << " loss " << report.final_test.loss << "\n";
    std::cout << "wrote " << metrics << " and " << checkpoint << "\n";
  }
  return 0;
}

int run_eval(const Globals& g, const std::string& checkpoint, std::string data) {
  const auto model = train::load_checkpoint(checkpoint);
  if (data.empty()) data = model.config().test_data;
  if (data.empty()) throw ConfigError("no evaluation data: pass --data or set test_data in the checkpoint config");
  const auto set = read_dataset(data);
  const auto result = train::evaluate(model, set, model.config().batch_size);
  ensure_dir(g.out_dir);
  const auto path = in_dir(g.out_dir, "eval.csv");
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "checkpoint,data,count,accuracy,loss\n"
      << checkpoint << "," << data << "," << set.size() << "," << result.accuracy << "," << result.loss << "\n";
  if (!g.quiet) std::cout << "accuracy " << result.accuracy << " loss " << result.loss << " on " << set.size() << " images\n";
  return 0;
}

int run_param_count(const Globals& g, const ConfigOverrides& o) {
  const auto report = profile::param_report(resolve_config(g, o));
  ensure_dir(g.out_dir);
  profile::write_param_csv(in_dir(g.out_dir, "param_count.csv"), report);
  if (!g.quiet) profile::print_param_report(std::cout, report);
  return 0;
}

int run_profile_memory(const Globals& g, const ConfigOverrides& o, std::vector<std::size_t> sparse) {
  const auto config = resolve_config(g, o);
  if (sparse.empty()) sparse.push_back(config.selected_positions.value_or(std::size_t{1} << 18));
  const auto rows = profile::estimate_memory(config, sparse);
  ensure_dir(g.out_dir);
  profile::write_memory_csv(in_dir(g.out_dir, "memory.csv"), rows);
  if (!g.quiet) profile::print_memory_table(std::cout, rows);
  return 0;
}

int run_bench(const Globals& g, profile::BenchOptions options) {
  if (g.seed) options.seed = *g.seed;
  const auto report = profile::run_bench(options);
  ensure_dir(g.out_dir);
  profile::write_bench_csv(in_dir(g.out_dir, "bench.csv"), report);
  if (!g.quiet) profile::print_bench(std::cout, report);
  return 0;
}

int run_export(const Globals& g, const std::string& checkpoint) {
  const auto model = train::load_checkpoint(checkpoint);
  const auto summary = profile::export_kernels(model, g.out_dir);
  if (!g.quiet) {
    for (const auto& f : summary.files) std::cout << "wrote " << f << "\n";
    std::cout << "wrote " << summary.centroid_csv << " (" << summary.centroids.size() << " filters)\n";
  }
  return 0;
}

int run_spectral_bias(const Globals& g, profile::SpectralBiasOptions options, const std::string& target) {
  options.target = profile::parse_target(target);
  if (g.seed) options.seed = *g.seed;
  const auto result = profile::run_spectral_bias(options);
  ensure_dir(g.out_dir);
  profile::write_spectral_bias_csv(in_dir(g.out_dir, "spectral_bias.csv"), result);
  if (!g.quiet) profile::print_spectral_bias(std::cout, options, result);
  return 0;
}

int run_make_synthetic(const Globals& g, std::size_t count, std::size_t size, std::size_t channels,
                       const std::string& name) {
  if (count < 2 || count % 2 != 0) throw ConfigError("--count must be even and at least 2");
  const auto data = train::make_synthetic_dataset(count, size, g.seed.value_or(0), channels);
  ensure_dir(g.out_dir);
  const auto path = in_dir(g.out_dir, name);
  train::write_dataset(path, data);
  if (!g.quiet) std::cout << "wrote " << path << ": " << count << " images " << size << "x" << size << "x" << channels << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous Fourier convolution toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Random seed");
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress the human-readable summary");
  app.fallthrough();

  ConfigOverrides overrides;
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--selected-positions", overrides.selected_positions, "Positions sampled per layer and step, or 'all'");
    cmd->add_option("--parameterization", overrides.parameterization, "hw, hw-cin, hw-cout, hw-cin-cout or spatial3x3");
  };

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint and metrics CSV");
  add_overrides(train_cmd);
  bool wall_clock = false;
  train_cmd->add_option("--train-data", overrides.train_data, "Training dataset file");
  train_cmd->add_option("--test-data", overrides.test_data, "Test dataset file");
  std::size_t epochs = 0;
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Override the epoch count");
  train_cmd->add_flag("--wall-clock", wall_clock, "Record elapsed seconds in the metrics CSV");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, data;
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset file (defaults to the config's test_data)");

  auto* param_cmd = app.add_subcommand("param-count", "Parameter and MLP counts per layer");
  add_overrides(param_cmd);

  auto* memory_cmd = app.add_subcommand("profile-memory", "Analytic peak-memory table across parameterizations");
  add_overrides(memory_cmd);
  std::vector<std::size_t> sparse;
  memory_cmd->add_option("--sparse", sparse, "Selected-position counts for sparse rows");

  auto* bench_cmd = app.add_subcommand("bench", "Step-time benchmark");
  profile::BenchOptions bench;
  bench_cmd->add_option("--size", bench.size, "Spatial size H = W")->capture_default_str();
  bench_cmd->add_option("--channels", bench.channels, "C_in = C_out")->capture_default_str();
  bench_cmd->add_option("--batch", bench.batch, "Images per step")->capture_default_str();
  bench_cmd->add_option("--repetitions", bench.repetitions, "Timed steps per case")->capture_default_str();

  auto* export_cmd = app.add_subcommand("export-kernels", "Write stored kernels and spatial filters");
  export_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  auto* bias_cmd = app.add_subcommand("spectral-bias", "Spatial vs Fourier coordinate-MLP fit of a target filter");
  profile::SpectralBiasOptions bias;
  std::string target = "high-pass";
  bias_cmd->add_option("--target", target, "high-pass, all-pass or zero")->capture_default_str();
  bias_cmd->add_option("--steps", bias.steps, "Full-batch Adam steps")->capture_default_str();
  bias_cmd->add_option("--grid", bias.grid, "Grid size")->capture_default_str();

  auto* synth_cmd = app.add_subcommand("make-synthetic", "Generate the two-class frequency-texture dataset");
  std::size_t count = 512, size = 32, channels = 3;
  std::string name = "synthetic.cfds";
  synth_cmd->add_option("--count", count, "Number of images (even)")->capture_default_str();
  synth_cmd->add_option("--size", size, "Image height and width")->capture_default_str();
  synth_cmd->add_option("--channels", channels, "Channels")->capture_default_str();
  synth_cmd->add_option("--name", name, "File name inside --out")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;
  if (epochs_opt->count() > 0) overrides.epochs = epochs;

  try {
    if (*train_cmd) return run_train(g, overrides, wall_clock);
    if (*eval_cmd) return run_eval(g, checkpoint, data);
    if (*param_cmd) return run_param_count(g, overrides);
    if (*memory_cmd) return run_profile_memory(g, overrides, sparse);
    if (*bench_cmd) return run_bench(g, bench);
    if (*export_cmd) return run_export(g, checkpoint);
    if (*bias_cmd) return run_spectral_bias(g, bias, target);
    if (*synth_cmd) return run_make_synthetic(g, count, size, channels, name);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
