#include "mmhco/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mmhco::train {

// ---------------------------------------------------------------------------
// Configuration

RunConfig RunConfig::full_size() {
  RunConfig c;
  c.frames = 8;
  c.resolution = 224;
  c.channels = 128;
  c.stage_depths = {2, 2, 18, 2};
  return c;
}

model::BackboneConfig RunConfig::backbone() const {
  model::BackboneConfig b;
  b.base_channels = channels;
  b.stage_depths = stage_depths;
  b.resolution = resolution;
  b.residual = residual;
  return b;
}

void RunConfig::validate() const {
  if (frames == 0 || epochs == 0 || batch_size == 0) throw std::invalid_argument("config: frames, epochs and batch_size must be positive");
  if (!(lr > 0) || weight_decay < 0 || momentum < 0 || momentum >= 1)
    throw std::invalid_argument("config: need lr > 0, weight_decay >= 0, 0 <= momentum < 1");
  if (!(tau > 0)) throw std::invalid_argument("config: tau must be positive");
  backbone().validate();
}

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + s + "'");
}

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

namespace {

const char* streams_name(Streams s) {
  switch (s) {
    case Streams::both: return "both";
    case Streams::rgb_only: return "rgb";
    case Streams::event_only: return "event";
  }
  return "?";
}

Streams parse_streams(const std::string& s) {
  if (s == "both") return Streams::both;
  if (s == "rgb") return Streams::rgb_only;
  if (s == "event") return Streams::event_only;
  throw std::invalid_argument("streams must be both, rgb or event, got '" + s + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true or false, got '" + v + "'");
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "frames=" << frames << "\nresolution=" << resolution << "\nchannels=" << channels
     << "\nstage_depths=" << join(stage_depths) << "\nresidual=" << (residual ? "true" : "false")
     << "\nlr=" << fmt_double(lr) << "\nweight_decay=" << fmt_double(weight_decay)
     << "\nmomentum=" << fmt_double(momentum) << "\nepochs=" << epochs << "\nbatch_size=" << batch_size
     << "\nseed=" << seed << "\nloss=" << head::loss_mode_name(loss) << "\nfusion=" << fusion::mode_name(fusion)
     << "\ntau=" << fmt_double(tau) << "\nmsf_per_channel=" << (msf_per_channel ? "true" : "false")
     << "\nprecision=" << precision_name(precision) << "\nstreams=" << streams_name(streams) << "\n";
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t RunConfig::architecture_hash(std::size_t classes) const {
  std::ostringstream os;
  os << "resolution=" << resolution << ";channels=" << channels << ";stage_depths=" << join(stage_depths)
     << ";residual=" << residual << ";msf_per_channel=" << msf_per_channel
     << ";precision=" << precision_name(precision) << ";classes=" << classes;
  return fnv1a(os.str());
}

void apply_config(RunConfig& c, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "frames") c.frames = to_size(k, v);
    else if (k == "resolution") c.resolution = to_size(k, v);
    else if (k == "channels") c.channels = to_size(k, v);
    else if (k == "stage_depths") {
      c.stage_depths.clear();
      std::istringstream in(v);
      std::string f;
      while (std::getline(in, f, ',')) c.stage_depths.push_back(to_size(k, f));
    } else if (k == "residual") c.residual = to_bool(k, v);
    else if (k == "lr") c.lr = to_double(k, v);
    else if (k == "weight_decay") c.weight_decay = to_double(k, v);
    else if (k == "momentum") c.momentum = to_double(k, v);
    else if (k == "epochs") c.epochs = to_size(k, v);
    else if (k == "batch_size") c.batch_size = to_size(k, v);
    else if (k == "seed") c.seed = to_size(k, v);
    else if (k == "loss") c.loss = head::parse_loss_mode(v);
    else if (k == "fusion") c.fusion = fusion::parse_mode(v);
    else if (k == "tau") c.tau = to_double(k, v);
    else if (k == "msf_per_channel") c.msf_per_channel = to_bool(k, v);
    else if (k == "precision") c.precision = parse_precision(v);
    else if (k == "streams") c.streams = parse_streams(v);
    else if (k.rfind("synth.", 0) == 0) continue;  // dataset generation keys share the file
    else throw std::invalid_argument("config: unknown key '" + k + "'");
  }
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  apply_config(base, events::read_key_values(path));
  return base;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[4] = {'M', 'M', 'H', 'C'};

struct Writer {
  std::ofstream& out;
  void bytes(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::ifstream& in;
  const fs::path& path;
  void bytes(void* p, std::size_t n) {
    if (!in.read(static_cast<char*>(p), static_cast<std::streamsize>(n)))
      throw std::runtime_error(path.string() + ": truncated checkpoint");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::size_t limit = std::size_t(1) << 30) {
    const std::uint64_t n = u64();
    if (n > limit) throw std::runtime_error(path.string() + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    Writer w{out};
    w.bytes(kMagic, 4);
    w.u32(Checkpoint::kVersion);
    w.str(ck.config_text);
    w.u64(ck.config_hash);
    w.u64(ck.classes);
    w.u64(ck.params.size());
    for (const auto& p : ck.params) {
      w.str(p.name);
      w.u8(static_cast<std::uint8_t>(p.dtype));
      w.u32(static_cast<std::uint32_t>(p.shape.size()));
      for (auto d : p.shape) w.u64(d);
      w.bytes(p.bytes.data(), p.bytes.size());
    }
    w.u64(ck.step);
    w.str(ck.rng_state);
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Reader r{in, path};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path.string() + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = r.str();
  ck.config_hash = r.u64();
  ck.classes = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    StoredParam p;
    p.name = r.str(4096);
    const std::uint8_t dt = r.u8();
    if (dt > 1) throw std::runtime_error(path.string() + ": bad dtype for " + p.name);
    p.dtype = static_cast<DType>(dt);
    const std::uint32_t nd = r.u32();
    if (nd > 8) throw std::runtime_error(path.string() + ": bad rank for " + p.name);
    for (std::uint32_t d = 0; d < nd; ++d) p.shape.push_back(r.u64());
    p.bytes.resize(shape_numel(p.shape) * dtype_size(p.dtype));
    r.bytes(p.bytes.data(), p.bytes.size());
    ck.params.push_back(std::move(p));
  }
  ck.step = r.u64();
  ck.rng_state = r.str();
  return ck;
}

template <class T>
Checkpoint make_checkpoint(const RunConfig& cfg, std::size_t classes, const ad::ParameterStore<T>& store,
                           std::uint64_t step, const std::mt19937_64& rng) {
  Checkpoint ck;
  ck.config_text = cfg.to_text();
  ck.config_hash = cfg.architecture_hash(classes);
  ck.classes = classes;
  for (const auto* p : store.all()) {
    StoredParam sp;
    sp.name = p->name;
    sp.dtype = dtype_of<T>();
    sp.shape = p->value.shape();
    sp.bytes.resize(p->value.size() * sizeof(T));
    std::memcpy(sp.bytes.data(), p->value.ptr(), sp.bytes.size());
    ck.params.push_back(std::move(sp));
  }
  ck.step = step;
  std::ostringstream os;
  os << rng;
  ck.rng_state = os.str();
  return ck;
}

template <class T>
void restore_parameters(const Checkpoint& ck, std::uint64_t expected_hash, ad::ParameterStore<T>& store, bool force) {
  if (ck.config_hash != expected_hash) {
    if (!force) throw std::runtime_error("checkpoint config hash does not match this configuration (use force to override)");
    spdlog::warn("checkpoint config hash mismatch ignored");
  }
  std::map<std::string, const StoredParam*> by_name;
  for (const auto& p : ck.params) by_name[p.name] = &p;
  for (auto* p : store.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    const StoredParam& sp = *it->second;
    if (sp.shape != p->value.shape())
      throw ShapeError("checkpoint parameter " + p->name + " has shape " + shape_str(sp.shape) + ", model expects " +
                       shape_str(p->value.shape()));
    const std::size_t n = p->value.size();
    if (sp.dtype == DType::f32) {
      std::vector<float> v(n);
      std::memcpy(v.data(), sp.bytes.data(), n * 4);
      for (std::size_t i = 0; i < n; ++i) p->value[i] = static_cast<T>(v[i]);
    } else {
      std::vector<double> v(n);
      std::memcpy(v.data(), sp.bytes.data(), n * 8);
      for (std::size_t i = 0; i < n; ++i) p->value[i] = static_cast<T>(v[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Network

template <class T>
Network<T>::Network(const RunConfig& cfg, std::size_t classes)
    : cfg_(cfg),
      classes_(classes),
      init_rng_(cfg.seed),
      backbone_((cfg.validate(), cfg.backbone()), store_, init_rng_),
      fusion_(backbone_.config().feature_dim(), store_, init_rng_, cfg.msf_per_channel),
      head_(2 * backbone_.config().feature_dim(), classes, store_, init_rng_) {}

template <class T>
NetworkOutput<T> Network<T>::forward(ad::Tape<T>& tape, const Tensor<T>& rgb, const Tensor<T>& evt, bool training,
                                     std::mt19937_64& rng) {
  NetworkOutput<T> out;
  out.features = backbone_.forward(tape, rgb, evt, training);
  out.fusion = fusion_.route(tape, out.features[0], out.features[1], cfg_.fusion, static_cast<T>(cfg_.tau), training, rng);
  out.pred = head_.forward(tape, out.fusion.fused);
  return out;
}

template <class T>
void make_batch(const events::Dataset& ds, const std::vector<std::size_t>& idx, Streams streams, Tensor<T>& rgb,
                Tensor<T>& evt, std::vector<std::size_t>& labels) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty batch");
  const Shape fs = ds.samples.at(idx[0]).rgb.shape();
  const std::size_t n = shape_numel(fs);
  Shape bs{idx.size()};
  bs.insert(bs.end(), fs.begin(), fs.end());
  rgb = Tensor<T>(bs);
  evt = Tensor<T>(bs);
  labels.resize(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = ds.samples.at(idx[b]);
    if (s.rgb.shape() != fs || s.event_frames.shape() != fs)
      throw ShapeError("sample " + s.id + " has shape " + shape_str(s.rgb.shape()) + ", batch expects " + shape_str(fs));
    labels[b] = s.label;
    if (streams != Streams::event_only)
      std::transform(s.rgb.data().begin(), s.rgb.data().end(), rgb.ptr() + b * n, [](float v) { return static_cast<T>(v); });
    if (streams != Streams::rgb_only)
      std::transform(s.event_frames.data().begin(), s.event_frames.data().end(), evt.ptr() + b * n,
                     [](float v) { return static_cast<T>(v); });
  }
}

std::vector<double> EvalMetrics::per_class_accuracy() const {
  std::vector<double> acc;
  for (const auto& row : confusion) {
    const std::size_t total = std::accumulate(row.begin(), row.end(), std::size_t(0));
    acc.push_back(total ? static_cast<double>(row[acc.size()]) / static_cast<double>(total) : 0.0);
  }
  return acc;
}

template <class T>
EvalMetrics evaluate(Network<T>& net, const events::Dataset& ds, std::size_t batch_size) {
  EvalMetrics m;
  const std::size_t C = net.classes();
  m.confusion.assign(C, std::vector<std::size_t>(C, 0));
  std::mt19937_64 rng(net.config().seed ^ 0x9e3779b97f4a7c15ull);
  double top1 = 0, top5 = 0;
  const std::size_t k5 = std::min<std::size_t>(5, C);
  for (std::size_t start = 0; start < ds.samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.samples.size(), start + batch_size); ++i) idx.push_back(i);
    Tensor<T> rgb, evt;
    std::vector<std::size_t> labels;
    make_batch(ds, idx, net.config().streams, rgb, evt, labels);
    for (auto l : labels)
      if (l >= C) throw std::runtime_error("dataset label " + std::to_string(l) + " exceeds the model's " + std::to_string(C) + " classes");
    ad::Tape<T> tape;
    auto out = net.forward(tape, rgb, evt, false, rng);
    const auto& logits = out.pred.logits.value();
    const double B = static_cast<double>(idx.size());
    m.loss += static_cast<double>(head::loss(out.pred, labels, head::LossMode::ce).value().item()) * B;
    top1 += head::topk_accuracy(logits, labels, 1) * B;
    top5 += head::topk_accuracy(logits, labels, k5) * B;
    const auto pred = argmax_rows(logits);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      ++m.confusion[labels[b]][pred[b]];
      ++m.routes[out.fusion.choice[b]];
    }
    m.samples += idx.size();
  }
  if (m.samples) {
    const double n = static_cast<double>(m.samples);
    m.loss /= n;
    m.top1 = top1 / n;
    m.top5 = top5 / n;
  }
  return m;
}

namespace {

template <class T>
std::string grad_report(const ad::ParameterStore<T>& store) {
  std::vector<std::pair<double, std::string>> norms;
  for (const auto* p : store.all())
    if (p->trainable) norms.emplace_back(static_cast<double>(l2_norm(p->grad)), p->name);
  std::sort(norms.begin(), norms.end(), [](auto& a, auto& b) {
    if (std::isnan(a.first) != std::isnan(b.first)) return std::isnan(a.first);
    return a.first > b.first;
  });
  std::ostringstream os;
  for (std::size_t i = 0; i < std::min<std::size_t>(8, norms.size()); ++i)
    os << "\n  |grad " << norms[i].second << "| = " << norms[i].first;
  return os.str();
}

}  // namespace

template <class T>
TrainResult train(Network<T>& net, const events::Dataset& train_set, const events::Dataset& val_set, const fs::path& out) {
  const RunConfig& cfg = net.config();
  if (train_set.samples.empty()) throw std::runtime_error("training set is empty");
  fs::create_directories(out);
  {
    std::ofstream cf(out / "config.txt");
    cf << cfg.to_text();
  }
  std::ofstream csv(out / "metrics.csv");
  csv << "epoch,train_loss,val_top1,val_top5,route_mcf,route_mdf,route_msf\n";

  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed + 1);
  ad::Sgd<T> opt(static_cast<T>(cfg.lr), static_cast<T>(cfg.weight_decay), static_cast<T>(cfg.momentum));
  const auto params = net.store().trainable();
  TrainResult res;
  res.best_checkpoint = out / "best.ckpt";
  res.last_checkpoint = out / "last.ckpt";
  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::uint64_t step = 0;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0, correct = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      Tensor<T> rgb, evt;
      std::vector<std::size_t> labels;
      make_batch(train_set, idx, cfg.streams, rgb, evt, labels);
      ad::Tape<T> tape;
      auto o = net.forward(tape, rgb, evt, true, rng);
      auto loss = head::loss(o.pred, labels, cfg.loss);
      const double L = static_cast<double>(loss.value().item());
      if (!std::isfinite(L)) {
        tape.backward(loss);
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                               grad_report(net.store()));
      }
      tape.backward(loss);
      opt.step(params);
      ++step;
      loss_sum += L * static_cast<double>(idx.size());
      correct += head::topk_accuracy(o.pred.logits.value(), labels, 1) * static_cast<double>(idx.size());
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.train_top1 = correct / static_cast<double>(order.size());
    if (!val_set.samples.empty()) {
      const EvalMetrics vm = evaluate(net, val_set, cfg.batch_size);
      log.val_top1 = vm.top1;
      log.val_top5 = vm.top5;
      log.routes = vm.routes;
    }
    res.epochs.push_back(log);
    csv << log.epoch << ',' << fmt_double(log.train_loss) << ',' << fmt_double(log.val_top1) << ','
        << fmt_double(log.val_top5) << ',' << log.routes[0] << ',' << log.routes[1] << ',' << log.routes[2] << '\n';
    csv.flush();
    const Checkpoint ck = make_checkpoint(cfg, net.classes(), net.store(), step, rng);
    write_checkpoint(res.last_checkpoint, ck);
    if (!have_best || log.val_top1 >= res.best_val_top1) {
      have_best = true;
      res.best_val_top1 = log.val_top1;
      res.best_epoch = epoch;
      write_checkpoint(res.best_checkpoint, ck);
    }
    spdlog::info("epoch {:>3}  loss {:.4f}  train top1 {:.3f}  val top1 {:.3f} top5 {:.3f}  routes {}/{}/{}", epoch,
                 log.train_loss, log.train_top1, log.val_top1, log.val_top5, log.routes[0], log.routes[1],
                 log.routes[2]);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

TrainResult train_run(const RunConfig& cfg, const fs::path& data_root, const fs::path& out) {
  cfg.validate();
  const auto tr = events::load_dataset(data_root, events::Split::train);
  const auto va = events::load_dataset(data_root, events::Split::val);
  if (tr.class_names.size() < 2) throw std::runtime_error("need at least two classes under " + data_root.string());
  if (cfg.precision == Precision::f64) {
    Network<double> net(cfg, tr.class_names.size());
    return train(net, tr, va, out);
  }
  Network<float> net(cfg, tr.class_names.size());
  return train(net, tr, va, out);
}

void write_confusion_csv(const fs::path& path, const EvalMetrics& m, const std::vector<std::string>& names) {
  std::ofstream out(path);
  out << "true\\pred";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.confusion.size(); ++i) {
    out << (i < names.size() ? names[i] : std::to_string(i));
    for (auto v : m.confusion[i]) out << ',' << v;
    out << '\n';
  }
}

void write_per_class_csv(const fs::path& path, const EvalMetrics& m, const std::vector<std::string>& names) {
  std::ofstream out(path);
  out << "class,samples,accuracy\n";
  const auto acc = m.per_class_accuracy();
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const std::size_t n = std::accumulate(m.confusion[i].begin(), m.confusion[i].end(), std::size_t(0));
    out << (i < names.size() ? names[i] : std::to_string(i)) << ',' << n << ',' << fmt_double(acc[i]) << '\n';
  }
}

namespace {

template <class T>
EvalMetrics evaluate_with(const RunConfig& cfg, const Checkpoint& ck, const events::Dataset& ds, bool force) {
  Network<T> net(cfg, ck.classes);
  restore_parameters(ck, cfg.architecture_hash(ck.classes), net.store(), force);
  return evaluate(net, ds, cfg.batch_size);
}

}  // namespace

EvalReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data_root, events::Split split,
                               const fs::path& out, const std::map<std::string, std::string>& override, bool force) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  EvalReport rep;
  apply_config(rep.config, parse_key_values(ck.config_text));
  apply_config(rep.config, override);
  const auto ds = events::load_dataset(data_root, split);
  rep.class_names = ds.class_names;
  if (ds.class_names.size() != ck.classes)
    throw std::runtime_error("checkpoint has " + std::to_string(ck.classes) + " classes, dataset has " +
                             std::to_string(ds.class_names.size()));
  rep.metrics = rep.config.precision == Precision::f64 ? evaluate_with<double>(rep.config, ck, ds, force)
                                                       : evaluate_with<float>(rep.config, ck, ds, force);
  if (!out.empty()) {
    fs::create_directories(out);
    write_confusion_csv(out / (std::string("confusion_") + events::split_name(split) + ".csv"), rep.metrics, rep.class_names);
    write_per_class_csv(out / (std::string("per_class_") + events::split_name(split) + ".csv"), rep.metrics, rep.class_names);
  }
  return rep;
}

#define MMHCO_TRAIN_INSTANTIATE(T)                                                                                   \
  template Checkpoint make_checkpoint<T>(const RunConfig&, std::size_t, const ad::ParameterStore<T>&, std::uint64_t, \
                                         const std::mt19937_64&);                                                   \
  template void restore_parameters<T>(const Checkpoint&, std::uint64_t, ad::ParameterStore<T>&, bool);               \
  template class Network<T>;                                                                                         \
  template void make_batch<T>(const events::Dataset&, const std::vector<std::size_t>&, Streams, Tensor<T>&,          \
                              Tensor<T>&, std::vector<std::size_t>&);                                               \
  template EvalMetrics evaluate<T>(Network<T>&, const events::Dataset&, std::size_t);                                \
  template TrainResult train<T>(Network<T>&, const events::Dataset&, const events::Dataset&, const fs::path&);

MMHCO_TRAIN_INSTANTIATE(float)
MMHCO_TRAIN_INSTANTIATE(double)

#undef MMHCO_TRAIN_INSTANTIATE

}  // namespace mmhco::train
