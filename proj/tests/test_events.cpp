#include "mmhco/events.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace mmhco;
using namespace mmhco::events;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mmhco_test_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

EventStream parse_text(const std::string& text, std::size_t W = 8, std::size_t H = 8) {
  std::istringstream in(text);
  return parse_events(in, W, H);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("parsing") {
  CHECK(parse_text("").events.empty());
  CHECK(parse_text("t,x,y,p\n").events.empty());

  auto s = parse_text("10,1,2,1\n20,7,0,0\n20,3,7,1\n");
  REQUIRE(s.events.size() == 3);
  CHECK(s.events[0] == EventPoint{1, 2, 10, 1});
  CHECK(s.events[1] == EventPoint{7, 0, 20, -1});
  CHECK(s.events[2] == EventPoint{3, 7, 20, 1});
  CHECK_FALSE(s.resorted);

  SUBCASE("unsorted input is sorted stably") {
    auto u = parse_text("30,0,0,1\n10,1,0,1\n20,2,0,0\n10,3,0,0\n");
    CHECK(u.resorted);
    std::vector<std::int32_t> xs;
    for (const auto& e : u.events) xs.push_back(e.x);
    CHECK(xs == std::vector<std::int32_t>{1, 3, 2, 0});
  }
  SUBCASE("errors name the line") {
    auto line_of = [](const std::string& text) {
      try {
        parse_text(text);
      } catch (const ParseError& e) {
        return e.line();
      }
      return std::size_t{0};
    };
    CHECK(line_of("abc\n") == 1);
    CHECK(line_of("1,0,0,1\n2,0,0\n") == 2);
    CHECK(line_of("1,0,0,1\n2,0,0,1,5\n") == 2);
    CHECK(line_of("t,x,y,p\n1,8,0,1\n") == 2);
    CHECK(line_of("1,0,-1,1\n") == 1);
    CHECK(line_of("1,0,0,3\n") == 1);
    CHECK(line_of("-5,0,0,1\n") == 1);
    try {
      parse_text("abc\n");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
}

TEST_CASE("write then parse is exact") {
  std::mt19937_64 rng(1);
  EventStream s;
  s.width = 33;
  s.height = 17;
  std::int64_t t = 0;
  for (int i = 0; i < 500; ++i) {
    t += static_cast<std::int64_t>(rng() % 5);
    s.events.push_back({static_cast<std::int32_t>(rng() % 33), static_cast<std::int32_t>(rng() % 17), t,
                        static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
  }
  std::ostringstream out;
  write_events(out, s);
  std::istringstream in(out.str());
  CHECK(parse_events(in, 33, 17).events == s.events);
}

TEST_CASE("stacking") {
  const std::vector<std::int64_t> ts{100, 200, 300};

  SUBCASE("empty stream gives zero frames") {
    EventStream s;
    auto st = stack_events(s, ts, 4, 4);
    CHECK(st.frames.shape() == Shape{3, 3, 4, 4});
    for (float v : st.frames.data()) CHECK(v == 0.0f);
    CHECK(st.in_window == 0);
  }
  SUBCASE("five positive events at one pixel") {
    EventStream s;
    s.width = s.height = 4;
    for (int i = 0; i < 5; ++i) s.events.push_back({2, 1, 50 + i, 1});
    s.events.push_back({0, 0, 60, -1});
    auto st = stack_events(s, ts, 4, 4);
    CHECK(st.frames.at({0, 0, 1, 2}) == 1.0f);
    CHECK(st.raw_count(0, 0, 1, 2) == 5);
    CHECK(st.raw_count(0, 1, 0, 0) == 1);
    CHECK(st.frames.at({0, 1, 0, 0}) == doctest::Approx(0.2f));
    CHECK(st.frames.at({0, 2, 1, 2}) == 1.0f);
  }
  SUBCASE("window boundaries") {
    EventStream s;
    s.width = s.height = 2;
    s.events = {{0, 0, 100, 1}, {0, 0, 101, 1}, {0, 0, 200, 1}, {0, 0, 300, 1}, {0, 0, 301, 1}, {0, 0, 0, 1}};
    std::sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    auto st = stack_events(s, ts, 2, 2);
    CHECK(st.raw_count(0, 0, 0, 0) == 2);
    CHECK(st.raw_count(1, 0, 0, 0) == 2);
    CHECK(st.raw_count(2, 0, 0, 0) == 1);
    CHECK(st.dropped == 1);
    CHECK(st.in_window == 5);
  }
  SUBCASE("coordinates are rescaled to the output size") {
    EventStream s;
    s.width = 8;
    s.height = 4;
    s.events = {{7, 3, 10, 1}, {0, 0, 10, -1}};
    auto st = stack_events(s, {100}, 2, 2);
    CHECK(st.raw_count(0, 0, 1, 1) == 1);
    CHECK(st.raw_count(0, 1, 0, 0) == 1);
  }
  SUBCASE("non-monotone timestamps are rejected") {
    CHECK_THROWS_AS(stack_events(EventStream{}, {5, 3}, 2, 2), std::invalid_argument);
  }
}

TEST_CASE("stacking conserves events, ignores order within a window and stays in [0, 1]") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    EventStream s;
    s.width = 1 + rng() % 40;
    s.height = 1 + rng() % 40;
    const std::size_t n = rng() % 300;
    for (std::size_t i = 0; i < n; ++i)
      s.events.push_back({static_cast<std::int32_t>(rng() % s.width), static_cast<std::int32_t>(rng() % s.height),
                          static_cast<std::int64_t>(rng() % 1000), static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
    std::vector<std::int64_t> ts(1 + rng() % 6);
    for (auto& t : ts) t = static_cast<std::int64_t>(rng() % 1100);
    std::sort(ts.begin(), ts.end());
    const std::size_t H = 1 + rng() % 16, W = 1 + rng() % 16;

    auto st = stack_events(s, ts, H, W);
    std::uint64_t total = 0;
    for (auto c : st.counts) total += c;
    const auto expected = std::count_if(s.events.begin(), s.events.end(), [&](const auto& e) { return e.t <= ts.back(); });
    CHECK(total == st.in_window);
    CHECK(st.in_window == static_cast<std::size_t>(expected));
    CHECK(st.in_window + st.dropped == n);
    for (float v : st.frames.data()) CHECK((v >= 0.0f && v <= 1.0f));

    auto shuffled = s;
    std::shuffle(shuffled.events.begin(), shuffled.events.end(), rng);
    auto st2 = stack_events(shuffled, ts, H, W);
    CHECK(st2.counts == st.counts);
    CHECK(st2.frames.vec() == st.frames.vec());
  }
}

TEST_CASE("images round trip within one level") {
  TempDir dir("ppm");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> U(0, 1);
  Tensor<float> img(Shape{3, 5, 7});
  for (auto& v : img.data()) v = U(rng);
  write_ppm(dir.path / "a.ppm", img);
  auto back = read_ppm(dir.path / "a.ppm");
  REQUIRE(back.shape() == img.shape());
  CHECK(max_abs_diff(back, img) <= 1.0f / 255.0f);
  std::ofstream(dir.path / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS(read_ppm(dir.path / "bad.ppm"));
}

TEST_CASE("synthetic clips") {
  SynthConfig cfg;
  cfg.H = cfg.W = 32;
  BarClip right;
  right.direction = 1;
  right.start = 3;
  right.step = 1;
  right.bar_width = 3;
  BarClip left = right;
  left.direction = 0;
  auto r = render_clip(right, cfg), l = render_clip(left, cfg);
  REQUIRE(r.events.events.size() == l.events.events.size());
  auto sr = stack_events(r.events, r.rgb_timestamps, 32, 32), sl = stack_events(l.events, l.rgb_timestamps, 32, 32);
  bool mirrored = true;
  for (std::size_t i = 0; i < cfg.T; ++i) {
    std::uint32_t moved = 0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          mirrored = mirrored && sr.frames.at({i, c, y, x}) == sl.frames.at({i, c, y, 31 - x});
          if (c < 2) moved += sr.raw_count(i, c, y, x);
        }
    CHECK(moved > 0);
  }
  CHECK(mirrored);

  // events carry the sign of the brightness change
  BarClip down = right;
  down.direction = 3;
  auto d = render_clip(down, cfg);
  for (const auto& e : d.events.events) {
    const std::size_t k = static_cast<std::size_t>(e.t / cfg.substep_us);
    auto lum = [&](std::size_t step) {
      const auto img = render_image(down, cfg, step);
      float s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += img.at({c, static_cast<std::size_t>(e.y), static_cast<std::size_t>(e.x)});
      return s;
    };
    const float before = lum(k - 1), after = lum(k);
    CHECK((after > before) == (e.p > 0));
  }
}

TEST_CASE("synthetic dataset on disk") {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig cfg;
  cfg.samples_per_class = 10;
  cfg.H = cfg.W = 32;
  auto sum = synth_generate(a.path, cfg, 5);
  synth_generate(b.path, cfg, 5);
  CHECK(sum.written == 40);
  CHECK(sum.per_split["train"] == 24);
  CHECK(sum.per_split["val"] == 4);
  CHECK(sum.per_split["test"] == 12);

  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path)) {
    if (e.path().filename() != "events.csv") continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b.path / fs::relative(e.path(), a.path)));
  }
  CHECK(files == 40);

  std::set<std::string> seen;
  std::size_t total = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    auto ds = load_dataset(a.path, s);
    CHECK(ds.class_names == synth_class_names(SynthKind::motion));
    for (const auto& p : ds.samples) {
      CHECK(seen.insert(p.id).second);
      CHECK(p.rgb.shape() == Shape{4, 3, 32, 32});
      CHECK(p.event_frames.shape() == p.rgb.shape());
      CHECK(p.id.substr(1, 2) == (p.label < 10 ? "0" : "") + std::to_string(p.label));
    }
    total += ds.samples.size();
  }
  CHECK(total == 40);

  SUBCASE("missing files skip the sample") {
    auto victim = fs::directory_iterator(a.path / "train" / "left")->path();
    fs::remove(victim / "events.csv");
    auto ds = load_dataset(a.path, Split::train);
    CHECK(ds.samples.size() == 23);
    CHECK(ds.skipped == 1);
  }
  SUBCASE("empty root") {
    TempDir empty("empty");
    CHECK(load_dataset(empty.path, Split::train).samples.empty());
  }
}

TEST_CASE("noisy kind") {
  TempDir dir("noisy");
  SynthConfig cfg;
  cfg.kind = SynthKind::noisy;
  cfg.samples_per_class = 4;
  cfg.H = cfg.W = 32;
  cfg.event_drop_prob = 0;
  cfg.rgb_noise_std = 0;
  synth_generate(dir.path, cfg, 9);
  auto ds = load_dataset(dir.path, Split::train);
  CHECK(ds.class_names.size() == 8);
  for (const auto& s : ds.samples) {
    // one held exposure
    const std::size_t FP = 3 * 32 * 32;
    for (std::size_t f = 1; f < 4; ++f) CHECK(std::equal(s.rgb.ptr(), s.rgb.ptr() + FP, s.rgb.ptr() + f * FP));
    double evs = 0;
    for (float v : s.event_frames.data()) evs += v;
    CHECK(evs > 0);
  }
  std::map<std::string, std::string> kv{{"synth.kind", "noisy"}, {"synth.rgb_noise_std", "0.5"}, {"frames", "6"}};
  auto parsed = synth_config_from(kv);
  CHECK(parsed.kind == SynthKind::noisy);
  CHECK(parsed.rgb_noise_std == 0.5);
  CHECK(parsed.T == 6);
}
