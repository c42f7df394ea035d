#pragma once

#include "mmhco/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmhco::events {

namespace fs = std::filesystem;

struct EventPoint {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int64_t t = 0;   // microseconds
  std::int8_t p = 1;    // +1 brightness up, -1 down
  bool operator==(const EventPoint&) const = default;
};

struct EventStream {
  std::size_t width = 0, height = 0;  // sensor size
  std::vector<EventPoint> events;
  /// Set when the input was not sorted by time and had to be reordered.
  bool resorted = false;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// CSV lines "t,x,y,p" with p in {0,1} (0 maps to -1), optionally preceded by that
/// header line. Events outside width x height are rejected.
EventStream parse_events(std::istream& in, std::size_t width, std::size_t height, const std::string& source = "<stream>");
EventStream parse_events(const fs::path& path, std::size_t width, std::size_t height);
void write_events(std::ostream& out, const EventStream& s);
void write_events(const fs::path& path, const EventStream& s);

struct StackedEvents {
  Tensor<float> frames;              // [T, 3, H, W]: positive, negative, total; each in [0, 1]
  std::vector<std::uint32_t> counts; // raw [T, 2, H, W] positive / negative counts
  std::size_t in_window = 0;
  std::size_t dropped = 0;
  std::uint32_t raw_count(std::size_t frame, std::size_t channel, std::size_t y, std::size_t x) const;
};

/// Frame i accumulates events with ts[i-1] < t <= ts[i] (frame 0 takes t <= ts[0]).
/// Positive and negative counts share the frame's max for scaling; the total channel
/// is scaled by its own max. Sensor coordinates are rescaled to H x W.
StackedEvents stack_events(const EventStream& s, const std::vector<std::int64_t>& rgb_timestamps, std::size_t H,
                           std::size_t W);

// ---------------------------------------------------------------------------
// Images

/// Binary PPM (P6). `rgb` is [3, H, W] with values in [0, 1], stored as round(255 v).
void write_ppm(const fs::path& path, const Tensor<float>& rgb);
Tensor<float> read_ppm(const fs::path& path);

// ---------------------------------------------------------------------------
// Dataset layout: root/split/class_name/sample_id/{frame_000.ppm..., events.csv, meta.txt}

enum class Split { train, val, test };
Split parse_split(const std::string& s);
const char* split_name(Split s);

struct SampleMeta {
  std::size_t label = 0;
  std::string class_name;
  std::size_t T = 0, H = 0, W = 0;
  std::vector<std::int64_t> rgb_timestamps;
};

std::map<std::string, std::string> read_key_values(const fs::path& path);
SampleMeta read_meta(const fs::path& path);
void write_meta(const fs::path& path, const SampleMeta& m);

struct PairedSample {
  std::string id;
  std::size_t label = 0;
  Tensor<float> rgb;           // [T, 3, H, W]
  Tensor<float> event_frames;  // [T, 3, H, W]
  std::vector<std::int64_t> rgb_timestamps;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<PairedSample> samples;
  std::size_t skipped = 0;
};

/// Class names from root/classes.txt when present, else the sorted class folders of `split`.
std::vector<std::string> read_class_names(const fs::path& root, Split split);

/// Loads every sample of a split, ordered by class then sample id. Samples missing a
/// modality file are skipped and logged.
Dataset load_dataset(const fs::path& root, Split split);

// ---------------------------------------------------------------------------
// Synthetic moving-bar data

enum class SynthKind {
  /// Four classes: a bright bar moving left, right, up or down.
  motion,
  /// Eight classes: direction x bar colour (red or green of equal brightness). Events
  /// see only the motion. The RGB frames repeat one noisy exposure, so they see
  /// orientation and colour but not direction; colour labels are often wrong.
  noisy
};

struct SynthConfig {
  SynthKind kind = SynthKind::motion;
  std::size_t samples_per_class = 200;
  std::size_t T = 4;
  std::size_t H = 64, W = 64;
  std::size_t substeps = 4;
  std::int64_t substep_us = 1000;
  /// Noisy kind only.
  double rgb_noise_std = 0.25;
  double color_corrupt_prob = 0.6;
  double event_drop_prob = 0.1;
};

std::vector<std::string> synth_class_names(SynthKind kind);

/// Everything random about one clip, so that a clip can be re-rendered with a
/// different direction.
struct BarClip {
  std::size_t direction = 0;  // 0 left, 1 right, 2 up, 3 down
  std::size_t bar_width = 4;
  std::size_t step = 1;       // pixels per substep
  std::size_t start = 0;      // leading coordinate at substep 0, before mirroring
  float background = 0.2f;
  std::array<float, 3> bar_color{0.9f, 0.9f, 0.9f};
};

struct RenderedClip {
  Tensor<float> rgb;  // [T, 3, H, W], noise free
  EventStream events;
  std::vector<std::int64_t> rgb_timestamps;
};

/// Image [3, H, W] after `substep` substeps of motion.
Tensor<float> render_image(const BarClip& clip, const SynthConfig& cfg, std::size_t substep);
RenderedClip render_clip(const BarClip& clip, const SynthConfig& cfg);

struct SynthSummary {
  std::size_t written = 0;
  std::map<std::string, std::size_t> per_split;
};

/// Writes a dataset under `root` (plus root/classes.txt), split 60/10/30 per class.
/// The same seed produces byte-identical files.
SynthSummary synth_generate(const fs::path& root, const SynthConfig& cfg, std::uint64_t seed);

/// Reads synth configuration keys from key=value pairs.
SynthConfig synth_config_from(const std::map<std::string, std::string>& kv, SynthConfig base = {});

}  // namespace mmhco::events
