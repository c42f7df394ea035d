#pragma once

#include "mmhco/events.hpp"
#include "mmhco/fusion.hpp"
#include "mmhco/head.hpp"
#include "mmhco/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mmhco::train {

namespace fs = std::filesystem;

enum class Precision { f32, f64 };
/// Which streams carry data; the other one is zeroed before the backbone.
enum class Streams { both, rgb_only, event_only };

struct RunConfig {
  std::size_t frames = 4;
  std::size_t resolution = 64;
  std::size_t channels = 32;
  std::vector<std::size_t> stage_depths{1, 1, 2, 1};
  bool residual = true;
  double lr = 0.001;
  double weight_decay = 0.0001;
  double momentum = 0.0;  // plain SGD; heavy-ball when > 0
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  head::LossMode loss = head::LossMode::ce;
  fusion::Mode fusion = fusion::Mode::route;
  double tau = 1.0;
  bool msf_per_channel = false;
  Precision precision = Precision::f32;
  Streams streams = Streams::both;

  /// Four stages [2,2,18,2], C1 = 128, 224 x 224, eight frames.
  static RunConfig full_size();

  model::BackboneConfig backbone() const;
  void validate() const;
  /// Canonical key=value text, one key per line in a fixed order.
  std::string to_text() const;
  /// Hash over the keys that fix the parameter table (architecture and precision).
  std::uint64_t architecture_hash(std::size_t classes) const;
};

/// Applies key=value pairs; unknown keys throw.
void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv);
RunConfig load_config(const fs::path& path, RunConfig base = {});

Precision parse_precision(const std::string& s);
const char* precision_name(Precision p);
std::uint64_t fnv1a(const std::string& s);

// ---------------------------------------------------------------------------
// Checkpoint: "MMHC", u32 version, config text, architecture hash, class count,
// parameter table (name, dtype, shape, little-endian values), step, RNG state.

struct StoredParam {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<unsigned char> bytes;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::uint64_t classes = 0;
  std::vector<StoredParam> params;
  std::uint64_t step = 0;
  std::string rng_state;
};

void write_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const fs::path& path);

template <class T>
Checkpoint make_checkpoint(const RunConfig& cfg, std::size_t classes, const ad::ParameterStore<T>& store,
                           std::uint64_t step, const std::mt19937_64& rng);
/// Copies stored values into `store`. A hash mismatch throws unless `force`; names or
/// shapes that do not match always throw.
template <class T>
void restore_parameters(const Checkpoint& ck, std::uint64_t expected_hash, ad::ParameterStore<T>& store, bool force);

// ---------------------------------------------------------------------------

template <class T>
struct NetworkOutput {
  head::Prediction<T> pred;
  fusion::Bundle<T> fusion;
  model::Pair<T> features;
};

/// Backbone, fusion and head under one parameter store.
template <class T>
class Network {
 public:
  Network(const RunConfig& cfg, std::size_t classes);

  /// rgb, evt: [B, T, 3, H, W].
  NetworkOutput<T> forward(ad::Tape<T>& tape, const Tensor<T>& rgb, const Tensor<T>& evt, bool training,
                           std::mt19937_64& rng);

  const RunConfig& config() const { return cfg_; }
  std::size_t classes() const { return classes_; }
  ad::ParameterStore<T>& store() { return store_; }
  const ad::ParameterStore<T>& store() const { return store_; }
  model::Backbone<T>& backbone() { return backbone_; }
  const fusion::Fusion<T>& fusion() const { return fusion_; }
  const head::Head<T>& head() const { return head_; }

 private:
  RunConfig cfg_;
  std::size_t classes_;
  ad::ParameterStore<T> store_;
  std::mt19937_64 init_rng_;
  model::Backbone<T> backbone_;
  fusion::Fusion<T> fusion_;
  head::Head<T> head_;
};

/// Stacks samples into [B, T, 3, H, W] tensors, zeroing a stream when asked.
template <class T>
void make_batch(const events::Dataset& ds, const std::vector<std::size_t>& idx, Streams streams, Tensor<T>& rgb,
                Tensor<T>& evt, std::vector<std::size_t>& labels);

struct EvalMetrics {
  std::size_t samples = 0;
  double loss = 0;
  double top1 = 0;
  double top5 = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::array<std::size_t, 3> routes{};              // mcf, mdf, msf
  std::vector<double> per_class_accuracy() const;
};

template <class T>
EvalMetrics evaluate(Network<T>& net, const events::Dataset& ds, std::size_t batch_size);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_top1 = 0;
  double val_top1 = 0;
  double val_top5 = 0;
  std::array<std::size_t, 3> routes{};
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_top1 = 0;
  fs::path best_checkpoint;
  fs::path last_checkpoint;
  double seconds = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains on root/train, selects on root/val, writes metrics.csv, config.txt,
/// best.ckpt and last.ckpt into `out`.
template <class T>
TrainResult train(Network<T>& net, const events::Dataset& train_set, const events::Dataset& val_set,
                  const fs::path& out);

/// Dispatches on cfg.precision; loads the data from `data_root`.
TrainResult train_run(const RunConfig& cfg, const fs::path& data_root, const fs::path& out);

struct EvalReport {
  RunConfig config;
  EvalMetrics metrics;
  std::vector<std::string> class_names;
};

/// Loads a checkpoint, evaluates one split and writes confusion and per-class CSVs
/// into `out` when it is not empty. `override` replaces run-time keys (fusion mode,
/// streams, batch size) of the stored config.
EvalReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data_root, events::Split split,
                               const fs::path& out, const std::map<std::string, std::string>& override = {},
                               bool force = false);

void write_confusion_csv(const fs::path& path, const EvalMetrics& m, const std::vector<std::string>& names);
void write_per_class_csv(const fs::path& path, const EvalMetrics& m, const std::vector<std::string>& names);

}  // namespace mmhco::train
