#include "mmhco/events.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace mmhco::events {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(source + ": line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <class I>
bool parse_int(std::string_view s, I& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

EventStream parse_events(std::istream& in, std::size_t width, std::size_t height, const std::string& source) {
  EventStream s;
  s.width = width;
  s.height = height;
  std::string raw;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (first) {
      first = false;
      std::string compact;
      for (char ch : line)
        if (!std::isspace(static_cast<unsigned char>(ch))) compact.push_back(ch);
      if (compact == "t,x,y,p") continue;
    }
    const auto f = split_commas(line);
    if (f.size() != 4) throw ParseError(source, line_no, "expected 4 fields t,x,y,p, got '" + std::string(line) + "'");
    EventPoint e;
    int p = 0;
    if (!parse_int(f[0], e.t) || !parse_int(f[1], e.x) || !parse_int(f[2], e.y) || !parse_int(f[3], p))
      throw ParseError(source, line_no, "malformed event '" + std::string(line) + "'");
    if (e.t < 0) throw ParseError(source, line_no, "negative timestamp");
    if (p != 0 && p != 1) throw ParseError(source, line_no, "polarity must be 0 or 1, got " + std::to_string(p));
    if (e.x < 0 || e.y < 0 || static_cast<std::size_t>(e.x) >= width || static_cast<std::size_t>(e.y) >= height)
      throw ParseError(source, line_no,
                       "event (" + std::to_string(e.x) + "," + std::to_string(e.y) + ") outside " +
                           std::to_string(width) + "x" + std::to_string(height));
    e.p = p == 1 ? 1 : -1;
    s.events.push_back(e);
  }
  const auto by_time = [](const EventPoint& a, const EventPoint& b) { return a.t < b.t; };
  if (!std::is_sorted(s.events.begin(), s.events.end(), by_time)) {
    spdlog::warn("{}: timestamps not monotone, sorting {} events", source, s.events.size());
    std::stable_sort(s.events.begin(), s.events.end(), by_time);
    s.resorted = true;
  }
  spdlog::debug("{}: {} events", source, s.events.size());
  return s;
}

EventStream parse_events(const fs::path& path, std::size_t width, std::size_t height) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_events(in, width, height, path.string());
}

void write_events(std::ostream& out, const EventStream& s) {
  out << "t,x,y,p\n";
  for (const auto& e : s.events) out << e.t << ',' << e.x << ',' << e.y << ',' << (e.p > 0 ? 1 : 0) << '\n';
}

void write_events(const fs::path& path, const EventStream& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_events(out, s);
}

std::uint32_t StackedEvents::raw_count(std::size_t frame, std::size_t channel, std::size_t y, std::size_t x) const {
  const std::size_t H = frames.dim(2), W = frames.dim(3);
  return counts.at(((frame * 2 + channel) * H + y) * W + x);
}

StackedEvents stack_events(const EventStream& s, const std::vector<std::int64_t>& ts, std::size_t H, std::size_t W) {
  const std::size_t T = ts.size();
  if (T == 0 || H == 0 || W == 0) throw ShapeError("stack_events: need T, H, W >= 1");
  if (!std::is_sorted(ts.begin(), ts.end())) throw std::invalid_argument("stack_events: timestamps not monotone");
  const std::size_t sw = s.width ? s.width : W, sh = s.height ? s.height : H;
  StackedEvents out;
  out.counts.assign(T * 2 * H * W, 0);
  for (const auto& e : s.events) {
    const std::size_t i = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), e.t) - ts.begin());
    if (i == T) {
      ++out.dropped;
      continue;
    }
    const std::size_t x = static_cast<std::size_t>(e.x) * W / sw, y = static_cast<std::size_t>(e.y) * H / sh;
    if (x >= W || y >= H) {
      ++out.dropped;
      continue;
    }
    ++out.counts[((i * 2 + (e.p > 0 ? 0 : 1)) * H + y) * W + x];
    ++out.in_window;
  }
  if (out.dropped) spdlog::warn("stack_events: {} events fall outside every frame window", out.dropped);

  const std::size_t P = H * W;
  out.frames = Tensor<float>(Shape{T, 3, H, W});
  for (std::size_t i = 0; i < T; ++i) {
    const std::uint32_t* pos = out.counts.data() + (i * 2) * P;
    const std::uint32_t* neg = pos + P;
    std::uint32_t m = 0, mt = 0;
    for (std::size_t k = 0; k < P; ++k) {
      m = std::max({m, pos[k], neg[k]});
      mt = std::max(mt, pos[k] + neg[k]);
    }
    if (m == 0) continue;
    float* f = out.frames.ptr() + i * 3 * P;
    for (std::size_t k = 0; k < P; ++k) {
      f[k] = static_cast<float>(pos[k]) / static_cast<float>(m);
      f[P + k] = static_cast<float>(neg[k]) / static_cast<float>(m);
      f[2 * P + k] = static_cast<float>(pos[k] + neg[k]) / static_cast<float>(mt);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_ppm(const fs::path& path, const Tensor<float>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("write_ppm expects [3,H,W], got " + shape_str(rgb.shape()));
  const std::size_t H = rgb.dim(1), W = rgb.dim(2), P = H * W;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << W << ' ' << H << "\n255\n";
  std::vector<unsigned char> buf(3 * P);
  for (std::size_t k = 0; k < P; ++k)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(rgb[c * P + k], 0.0f, 1.0f);
      buf[3 * k + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Tensor<float> read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  auto token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  if (token() != "P6") throw std::runtime_error(path.string() + ": not a binary PPM");
  std::size_t W = 0, H = 0, maxv = 0;
  if (!parse_int(token(), W) || !parse_int(token(), H) || !parse_int(token(), maxv) || W == 0 || H == 0 ||
      maxv != 255)
    throw std::runtime_error(path.string() + ": unsupported PPM header");
  const std::size_t P = H * W;
  std::vector<unsigned char> buf(3 * P);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  Tensor<float> t(Shape{3, H, W});
  for (std::size_t k = 0; k < P; ++k)
    for (std::size_t c = 0; c < 3; ++c) t[c * P + k] = static_cast<float>(buf[3 * k + c]) / 255.0f;
  return t;
}

// ---------------------------------------------------------------------------

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(path.string(), line_no, "expected key=value");
    kv[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

SampleMeta read_meta(const fs::path& path) {
  const auto kv = read_key_values(path);
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error(path.string() + ": missing key '" + k + "'");
    return it->second;
  };
  SampleMeta m;
  if (!parse_int(need("label"), m.label) || !parse_int(need("T"), m.T) || !parse_int(need("H"), m.H) ||
      !parse_int(need("W"), m.W))
    throw std::runtime_error(path.string() + ": non-integer label/T/H/W");
  if (auto it = kv.find("class"); it != kv.end()) m.class_name = it->second;
  for (auto f : split_commas(need("rgb_timestamps"))) {
    std::int64_t t = 0;
    if (!parse_int(f, t)) throw std::runtime_error(path.string() + ": bad timestamp '" + std::string(f) + "'");
    m.rgb_timestamps.push_back(t);
  }
  if (m.rgb_timestamps.size() != m.T) throw std::runtime_error(path.string() + ": expected T timestamps");
  return m;
}

void write_meta(const fs::path& path, const SampleMeta& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "label=" << m.label << "\nclass=" << m.class_name << "\nT=" << m.T << "\nH=" << m.H << "\nW=" << m.W
      << "\nrgb_timestamps=";
  for (std::size_t i = 0; i < m.rgb_timestamps.size(); ++i) out << (i ? "," : "") << m.rgb_timestamps[i];
  out << '\n';
}

namespace {

std::vector<fs::path> sorted_dirs(const fs::path& p) {
  std::vector<fs::path> out;
  if (!fs::is_directory(p)) return out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

fs::path frame_path(const fs::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
  return dir / name;
}

}  // namespace

std::vector<std::string> read_class_names(const fs::path& root, Split split) {
  std::vector<std::string> names;
  std::ifstream in(root / "classes.txt");
  if (in) {
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty()) names.emplace_back(t);
    }
    return names;
  }
  for (const auto& d : sorted_dirs(root / split_name(split))) names.push_back(d.filename().string());
  return names;
}

Dataset load_dataset(const fs::path& root, Split split) {
  Dataset ds;
  ds.class_names = read_class_names(root, split);
  for (const auto& class_dir : sorted_dirs(root / split_name(split))) {
    const std::string cname = class_dir.filename().string();
    const auto it = std::find(ds.class_names.begin(), ds.class_names.end(), cname);
    if (it == ds.class_names.end()) {
      spdlog::warn("{}: class not listed, skipping", class_dir.string());
      continue;
    }
    const std::size_t label = static_cast<std::size_t>(it - ds.class_names.begin());
    for (const auto& dir : sorted_dirs(class_dir)) {
      const fs::path meta_path = dir / "meta.txt", ev_path = dir / "events.csv";
      if (!fs::exists(meta_path) || !fs::exists(ev_path)) {
        spdlog::warn("{}: missing {}, sample skipped", dir.string(), fs::exists(meta_path) ? "events.csv" : "meta.txt");
        ++ds.skipped;
        continue;
      }
      const SampleMeta meta = read_meta(meta_path);
      bool frames_ok = true;
      for (std::size_t i = 0; i < meta.T && frames_ok; ++i) frames_ok = fs::exists(frame_path(dir, i));
      if (!frames_ok) {
        spdlog::warn("{}: missing rgb frames, sample skipped", dir.string());
        ++ds.skipped;
        continue;
      }
      if (meta.label != label)
        spdlog::warn("{}: meta label {} disagrees with class folder, using {}", dir.string(), meta.label, label);
      PairedSample s;
      s.id = dir.filename().string();
      s.label = label;
      s.rgb_timestamps = meta.rgb_timestamps;
      s.rgb = Tensor<float>(Shape{meta.T, 3, meta.H, meta.W});
      const std::size_t FP = 3 * meta.H * meta.W;
      for (std::size_t i = 0; i < meta.T; ++i) {
        const Tensor<float> f = read_ppm(frame_path(dir, i));
        if (f.dim(1) != meta.H || f.dim(2) != meta.W)
          throw ShapeError(frame_path(dir, i).string() + ": size " + shape_str(f.shape()) + " differs from meta");
        std::copy(f.data().begin(), f.data().end(), s.rgb.ptr() + i * FP);
      }
      s.event_frames = stack_events(parse_events(ev_path, meta.W, meta.H), meta.rgb_timestamps, meta.H, meta.W).frames;
      ds.samples.push_back(std::move(s));
    }
  }
  spdlog::info("{} / {}: {} samples ({} skipped)", root.string(), split_name(split), ds.samples.size(), ds.skipped);
  return ds;
}

// ---------------------------------------------------------------------------

std::vector<std::string> synth_class_names(SynthKind kind) {
  const std::vector<std::string> dirs{"left", "right", "up", "down"};
  if (kind == SynthKind::motion) return dirs;
  std::vector<std::string> out;
  for (const auto& d : dirs)
    for (const char* c : {"red", "green"}) out.push_back(d + "_" + c);
  return out;
}

Tensor<float> render_image(const BarClip& clip, const SynthConfig& cfg, std::size_t substep) {
  const std::size_t H = cfg.H, W = cfg.W, P = H * W;
  const bool horizontal = clip.direction < 2;
  const bool reversed = clip.direction == 0 || clip.direction == 2;
  const std::size_t L = horizontal ? W : H;
  if (clip.start + substep * clip.step + clip.bar_width > L)
    throw std::invalid_argument("render_image: bar leaves the frame");
  Tensor<float> img(Shape{3, H, W}, clip.background);
  std::size_t lo = clip.start + substep * clip.step;
  if (reversed) lo = L - lo - clip.bar_width;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t c = horizontal ? x : y;
      if (c >= lo && c < lo + clip.bar_width)
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * P + y * W + x] = clip.bar_color[ch];
    }
  return img;
}

RenderedClip render_clip(const BarClip& clip, const SynthConfig& cfg) {
  const std::size_t H = cfg.H, W = cfg.W, T = cfg.T, S = cfg.substeps, P = H * W;
  const std::size_t L = clip.direction < 2 ? W : H;
  if (clip.start + T * S * clip.step + clip.bar_width > L)
    throw std::invalid_argument("render_clip: bar leaves the frame");
  auto render = [&](std::size_t k) { return render_image(clip, cfg, k).vec(); };
  auto lum = [&](const std::vector<float>& img, std::size_t k) { return img[k] + img[P + k] + img[2 * P + k]; };

  RenderedClip out;
  out.rgb = Tensor<float>(Shape{T, 3, H, W});
  out.events.width = W;
  out.events.height = H;
  std::vector<float> prev = render(0);
  for (std::size_t k = 1; k <= T * S; ++k) {
    std::vector<float> cur = render(k);
    const std::int64_t t = static_cast<std::int64_t>(k) * cfg.substep_us;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const float a = lum(prev, y * W + x), b = lum(cur, y * W + x);
        if (a != b)
          out.events.events.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), t,
                                       static_cast<std::int8_t>(b > a ? 1 : -1)});
      }
    if (k % S == 0) {
      const std::size_t i = k / S - 1;
      std::copy(cur.begin(), cur.end(), out.rgb.ptr() + i * 3 * P);
      out.rgb_timestamps.push_back(t);
    }
    prev = std::move(cur);
  }
  return out;
}

SynthSummary synth_generate(const fs::path& root, const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.T == 0 || cfg.H < 8 || cfg.W < 8 || cfg.substeps == 0 || cfg.samples_per_class == 0)
    throw std::invalid_argument("synth: need T >= 1, H, W >= 8, substeps >= 1, samples >= 1");
  const auto names = synth_class_names(cfg.kind);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  fs::create_directories(root);
  {
    std::ofstream cls(root / "classes.txt", std::ios::binary);
    for (const auto& n : names) cls << n << '\n';
  }
  SynthSummary summary;
  const std::size_t n = cfg.samples_per_class;
  const std::size_t n_train = static_cast<std::size_t>(std::lround(0.6 * n));
  const std::size_t n_val = static_cast<std::size_t>(std::lround(0.1 * n));
  const bool noisy = cfg.kind == SynthKind::noisy;
  // red and green of equal channel sum, so brightness changes carry no colour
  const std::array<std::array<float, 3>, 2> colours{{{0.9f, 0.3f, 0.3f}, {0.3f, 0.9f, 0.3f}}};

  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      BarClip clip;
      clip.direction = noisy ? c / 2 : c;
      const std::size_t L = clip.direction < 2 ? cfg.W : cfg.H;
      clip.bar_width = uniform_int(std::max<std::size_t>(2, L / 16), std::max<std::size_t>(3, L / 10));
      const std::size_t travel_room = L - clip.bar_width;
      const std::size_t max_step = std::clamp<std::size_t>(travel_room / (2 * cfg.T * cfg.substeps), 1, 2);
      clip.step = uniform_int(1, max_step);
      const std::size_t travel = cfg.T * cfg.substeps * clip.step;
      if (travel + clip.bar_width > L) throw std::invalid_argument("synth: frame too small for the requested motion");
      clip.start = uniform_int(0, L - travel - clip.bar_width);
      clip.background = static_cast<float>(0.1 + 0.2 * U(rng));
      if (noisy) {
        const bool corrupt = U(rng) < cfg.color_corrupt_prob;
        clip.bar_color = colours[corrupt ? uniform_int(0, 1) : c % 2];
      } else {
        const float b = static_cast<float>(0.7 + 0.3 * U(rng));
        clip.bar_color = {b, b, b};
      }
      RenderedClip r = render_clip(clip, cfg);
      if (noisy) {
        // slow RGB camera: one exposure at mid-clip is held for every frame. Bar
        // positions at mid-clip are distributed alike for opposite directions, so the
        // frames show orientation but not direction.
        const std::size_t FP = 3 * cfg.H * cfg.W;
        const auto still = render_image(clip, cfg, cfg.T * cfg.substeps / 2);
        for (std::size_t f = 0; f < cfg.T; ++f) std::copy_n(still.ptr(), FP, r.rgb.ptr() + f * FP);
        std::normal_distribution<double> N(0.0, cfg.rgb_noise_std);
        for (auto& v : r.rgb.data()) v = std::clamp(static_cast<float>(v + N(rng)), 0.0f, 1.0f);
        if (U(rng) < cfg.event_drop_prob) {
          // sensor dropout: the motion events are replaced by uniform noise
          const std::size_t count = r.events.events.size();
          const std::int64_t t_end = r.rgb_timestamps.back();
          r.events.events.clear();
          for (std::size_t e = 0; e < count; ++e)
            r.events.events.push_back({static_cast<std::int32_t>(uniform_int(0, cfg.W - 1)),
                                       static_cast<std::int32_t>(uniform_int(0, cfg.H - 1)),
                                       static_cast<std::int64_t>(uniform_int(1, static_cast<std::size_t>(t_end))),
                                       static_cast<std::int8_t>(uniform_int(0, 1) ? 1 : -1)});
          std::stable_sort(r.events.events.begin(), r.events.events.end(),
                           [](const EventPoint& a, const EventPoint& b) { return a.t < b.t; });
        }
      }
      const std::size_t pos = order[i];
      const Split split = pos < n_train ? Split::train : pos < n_train + n_val ? Split::val : Split::test;
      char id[32];
      std::snprintf(id, sizeof id, "c%02zu_%05zu", c, i);
      const fs::path dir = root / split_name(split) / names[c] / id;
      fs::create_directories(dir);
      const std::size_t FP = 3 * cfg.H * cfg.W;
      for (std::size_t f = 0; f < cfg.T; ++f) {
        Tensor<float> frame(Shape{3, cfg.H, cfg.W});
        std::copy(r.rgb.ptr() + f * FP, r.rgb.ptr() + (f + 1) * FP, frame.ptr());
        write_ppm(frame_path(dir, f), frame);
      }
      write_events(dir / "events.csv", r.events);
      write_meta(dir / "meta.txt", SampleMeta{c, names[c], cfg.T, cfg.H, cfg.W, r.rgb_timestamps});
      ++summary.written;
      ++summary.per_split[split_name(split)];
    }
  }
  spdlog::info("synth: wrote {} samples to {}", summary.written, root.string());
  return summary;
}

SynthConfig synth_config_from(const std::map<std::string, std::string>& kv, SynthConfig base) {
  auto get = [&](const std::string& k) -> const std::string* {
    for (const std::string& key : {"synth." + k, k}) {
      auto it = kv.find(key);
      if (it != kv.end()) return &it->second;
    }
    return nullptr;
  };
  auto size = [&](const char* k, std::size_t& out) {
    if (auto* v = get(k); v && !parse_int(*v, out)) throw std::invalid_argument(std::string("bad value for ") + k);
  };
  auto real = [&](const char* k, double& out) {
    if (auto* v = get(k)) out = std::stod(*v);
  };
  if (auto* v = get("kind")) {
    if (*v == "motion") base.kind = SynthKind::motion;
    else if (*v == "noisy") base.kind = SynthKind::noisy;
    else throw std::invalid_argument("synth kind must be motion or noisy, got " + *v);
  }
  size("samples_per_class", base.samples_per_class);
  size("frames", base.T);
  std::size_t res = 0;
  size("resolution", res);
  if (res) base.H = base.W = res;
  size("substeps", base.substeps);
  real("rgb_noise_std", base.rgb_noise_std);
  real("color_corrupt_prob", base.color_corrupt_prob);
  real("event_drop_prob", base.event_drop_prob);
  return base;
}

}  // namespace mmhco::events
