#include "mmhco/events.hpp"
#include "mmhco/profiler.hpp"
#include "mmhco/trainer.hpp"
#include "mmhco/verify.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iostream>

using namespace mmhco;
namespace fs = std::filesystem;

namespace {

// Flags shared by train, eval and count. Only flags that were given override the config.
struct RunFlags {
  std::string config, data, out, fusion, loss, precision;
  std::uint64_t seed = 0;
  std::size_t frames = 0, resolution = 0, epochs = 0;
  bool rgb_only = false, event_only = false;

  void add_to(CLI::App* app, bool with_data = true) {
    app->add_option("--config", config, "key=value config file")->check(CLI::ExistingFile);
    if (with_data) app->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
    app->add_option("--out", out, "output directory");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--frames", frames, "frames per modality");
    app->add_option("--resolution", resolution, "input side length");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--fusion", fusion, "route, mcf, mdf, msf or random")
        ->check(CLI::IsMember({"route", "mcf", "mdf", "msf", "random"}));
    app->add_option("--loss", loss, "ce or literal")->check(CLI::IsMember({"ce", "literal"}));
    app->add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    auto* r = app->add_flag("--rgb-only", rgb_only, "zero the event stream");
    app->add_flag("--event-only", event_only, "zero the RGB stream")->excludes(r);
  }

  std::map<std::string, std::string> overrides(const CLI::App* app) const {
    std::map<std::string, std::string> kv;
    auto given = [&](const char* flag) { return app->count(flag) > 0; };
    if (given("--seed")) kv["seed"] = std::to_string(seed);
    if (given("--frames")) kv["frames"] = std::to_string(frames);
    if (given("--resolution")) kv["resolution"] = std::to_string(resolution);
    if (given("--epochs")) kv["epochs"] = std::to_string(epochs);
    if (!fusion.empty()) kv["fusion"] = fusion;
    if (!loss.empty()) kv["loss"] = loss;
    if (!precision.empty()) kv["precision"] = precision;
    if (rgb_only) kv["streams"] = "rgb";
    if (event_only) kv["streams"] = "event";
    return kv;
  }

  train::RunConfig resolve(const CLI::App* app, train::RunConfig base = {}) const {
    if (!config.empty()) base = train::load_config(config, base);
    train::apply_config(base, overrides(app));
    base.validate();
    return base;
  }
};

void print_metrics(const train::EvalMetrics& m, const std::vector<std::string>& names) {
  std::cout << "samples " << m.samples << "  loss " << m.loss << "  top1 " << m.top1 << "  top5 " << m.top5
            << "  routes mcf/mdf/msf " << m.routes[0] << '/' << m.routes[1] << '/' << m.routes[2] << '\n';
  const auto acc = m.per_class_accuracy();
  for (std::size_t c = 0; c < acc.size(); ++c) std::cout << "  " << names.at(c) << ": " << acc[c] << '\n';
}

std::vector<std::int64_t> read_timestamps(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<std::int64_t> ts;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ts.push_back(std::stoll(line));
  return ts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal heat-conduction action recognition"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  RunFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train on root/train, select on root/val");
  train_flags.add_to(train_cmd);

  RunFlags eval_flags;
  std::string checkpoint, split = "test";
  bool force = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval_flags.add_to(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_flag("--force", force, "load even if the architecture hash differs");

  std::string events_path, stamps_path, ingest_out;
  std::size_t sensor_w = 0, sensor_h = 0, ingest_frames = 8, ingest_res = 64;
  auto* ingest_cmd = app.add_subcommand("ingest", "stack a raw event CSV into frames");
  ingest_cmd->add_option("--events", events_path, "CSV with t,x,y,p")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--width", sensor_w, "sensor width")->required();
  ingest_cmd->add_option("--height", sensor_h, "sensor height")->required();
  ingest_cmd->add_option("--timestamps", stamps_path, "one RGB timestamp per line (microseconds)")
      ->check(CLI::ExistingFile);
  ingest_cmd->add_option("--frames", ingest_frames, "frames spread evenly over the stream when no timestamps are given");
  ingest_cmd->add_option("--resolution", ingest_res, "output side length");
  ingest_cmd->add_option("--out", ingest_out, "output directory")->required();

  std::string synth_out, synth_config, synth_kind = "motion";
  std::uint64_t synth_seed = 0;
  std::size_t synth_per_class = 200, synth_frames = 4, synth_res = 64;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic moving-bar dataset");
  synth_cmd->add_option("--out", synth_out, "dataset root")->required();
  synth_cmd->add_option("--config", synth_config, "key=value file with synth.* keys")->check(CLI::ExistingFile);
  synth_cmd->add_option("--kind", synth_kind, "motion or noisy")->check(CLI::IsMember({"motion", "noisy"}));
  synth_cmd->add_option("--samples-per-class", synth_per_class, "clips per class");
  synth_cmd->add_option("--frames", synth_frames, "frames per clip");
  synth_cmd->add_option("--resolution", synth_res, "side length");
  synth_cmd->add_option("--seed", synth_seed, "random seed");

  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suites");
  verify_cmd->add_option("--suite", suite, "grad, spectral, fusion, ingest or all")
      ->check(CLI::IsMember({"grad", "spectral", "fusion", "ingest", "all"}));
  verify_cmd->add_option("--seed", verify_seed, "random seed");

  profiler::ScalingOptions bench_opts;
  bool no_attention = false;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "wall-clock scaling of the heat operator against dense attention");
  bench_cmd->add_option("--sides", bench_opts.sides, "side lengths (at least three)")->delimiter(',');
  bench_cmd->add_option("--channels", bench_opts.channels, "channels");
  bench_cmd->add_option("--repeats", bench_opts.repeats, "timed runs per point (at least ten)");
  bench_cmd->add_option("--seed", bench_opts.seed, "random seed");
  bench_cmd->add_flag("--no-attention", no_attention, "skip the attention baseline");
  bench_cmd->add_option("--out", bench_out, "directory for scaling.txt");

  RunFlags count_flags;
  bool full_size = false;
  std::size_t classes = 4;
  auto* count_cmd = app.add_subcommand("count", "analytic FLOP and parameter report");
  count_flags.add_to(count_cmd, false);
  count_cmd->add_flag("--full-size", full_size, "start from the full-size configuration");
  count_cmd->add_option("--classes", classes, "number of classes");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*train_cmd) {
      const auto cfg = train_flags.resolve(train_cmd);
      const fs::path out = train_flags.out.empty() ? fs::path("run") : fs::path(train_flags.out);
      const auto res = train::train_run(cfg, train_flags.data, out);
      std::cout << "best epoch " << res.best_epoch << " val top1 " << res.best_val_top1 << " ("
                << res.best_checkpoint.string() << ", " << res.seconds << " s)\n";
      return 0;
    }
    if (*eval_cmd) {
      auto kv = eval_flags.overrides(eval_cmd);
      if (!eval_flags.config.empty())
        for (const auto& [k, v] : events::read_key_values(eval_flags.config)) kv.emplace(k, v);
      const auto rep = train::evaluate_checkpoint(checkpoint, eval_flags.data, events::parse_split(split),
                                                  eval_flags.out, kv, force);
      print_metrics(rep.metrics, rep.class_names);
      return 0;
    }
    if (*ingest_cmd) {
      const auto stream = events::parse_events(fs::path(events_path), sensor_w, sensor_h);
      std::vector<std::int64_t> stamps;
      if (!stamps_path.empty()) {
        stamps = read_timestamps(stamps_path);
      } else {
        if (ingest_frames == 0) throw std::invalid_argument("--frames must be positive");
        const std::int64_t t0 = stream.events.empty() ? 0 : stream.events.front().t;
        const std::int64_t t1 = stream.events.empty() ? 0 : stream.events.back().t;
        for (std::size_t i = 1; i <= ingest_frames; ++i)
          stamps.push_back(t0 + (t1 - t0) * static_cast<std::int64_t>(i) / static_cast<std::int64_t>(ingest_frames));
      }
      const auto st = events::stack_events(stream, stamps, ingest_res, ingest_res);
      fs::create_directories(ingest_out);
      const std::size_t plane = 3 * ingest_res * ingest_res;
      for (std::size_t i = 0; i < stamps.size(); ++i) {
        Tensor<float> frame(Shape{3, ingest_res, ingest_res});
        std::copy_n(st.frames.ptr() + i * plane, plane, frame.ptr());
        char name[32];
        std::snprintf(name, sizeof name, "event_%03zu.ppm", i);
        events::write_ppm(fs::path(ingest_out) / name, frame);
      }
      std::cout << stream.events.size() << " events, " << st.in_window << " stacked into " << stamps.size()
                << " frames, " << st.dropped << " after the last timestamp\n";
      return 0;
    }
    if (*synth_cmd) {
      events::SynthConfig sc;
      if (!synth_config.empty()) sc = events::synth_config_from(events::read_key_values(synth_config), sc);
      if (synth_cmd->count("--kind")) sc.kind = synth_kind == "noisy" ? events::SynthKind::noisy : events::SynthKind::motion;
      if (synth_cmd->count("--samples-per-class")) sc.samples_per_class = synth_per_class;
      if (synth_cmd->count("--frames")) sc.T = synth_frames;
      if (synth_cmd->count("--resolution")) sc.H = sc.W = synth_res;
      const auto sum = events::synth_generate(synth_out, sc, synth_seed);
      std::cout << sum.written << " clips written to " << synth_out << '\n';
      for (const auto& [s, n] : sum.per_split) std::cout << "  " << s << ": " << n << '\n';
      return 0;
    }
    if (*verify_cmd) {
      verify::Options opts;
      opts.seed = verify_seed;
      const auto rep = verify::run(verify::parse_suite(suite), opts);
      std::cout << rep.format();
      return rep.passed() ? 0 : 1;
    }
    if (*bench_cmd) {
      bench_opts.attention = !no_attention;
      const auto res = profiler::scaling_bench(bench_opts);
      std::cout << profiler::format_scaling(res);
      if (!bench_out.empty()) {
        fs::create_directories(bench_out);
        profiler::write_scaling_kv(fs::path(bench_out) / "scaling.txt", res);
      }
      return 0;
    }
    if (*count_cmd) {
      const auto cfg = count_flags.resolve(count_cmd, full_size ? train::RunConfig::full_size() : train::RunConfig{});
      const auto rep = profiler::count_costs(cfg.backbone(), cfg.frames, classes, cfg.msf_per_channel);
      std::cout << profiler::format_report(rep);
      if (!count_flags.out.empty()) {
        fs::create_directories(count_flags.out);
        profiler::write_report_kv(fs::path(count_flags.out) / "costs.txt", rep);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
