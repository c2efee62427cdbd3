#include "tcbp/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tcbp/binary_io.hpp"
#include "tcbp/dataio.hpp"
#include "tcbp/encoder.hpp"
#include "tcbp/gradcheck.hpp"
#include "tcbp/ordering.hpp"
#include "tcbp/sketch.hpp"
#include "tcbp/trainer.hpp"

namespace tcbp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for bad flag values discovered after parsing; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::map<std::size_t, double> parse_histogram(const std::string& text) {
  std::map<std::size_t, double> h;
  for (const auto& [k, v] : parse_pairs(text)) {
    try {
      h[std::stoul(k)] = std::stod(v);
    } catch (const std::exception&) {
      throw UsageError("bad histogram entry '" + k + ":" + v + "'");
    }
  }
  if (h.empty()) throw UsageError("empty histogram '" + text + "'");
  return h;
}

std::map<Modality, std::size_t> parse_channels(const std::string& text) {
  std::map<Modality, std::size_t> out;
  for (const auto& [k, v] : parse_pairs(text)) {
    if (k.size() != 1 || !modality_from_tag(k[0])) throw UsageError("unknown modality '" + k + "'");
    try {
      out[*modality_from_tag(k[0])] = std::stoul(v);
    } catch (const std::exception&) {
      throw UsageError("bad channel count '" + v + "'");
    }
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(static_cast<T>(std::stod(item)));
      } else {
        out.push_back(static_cast<T>(std::stoull(item)));
      }
    } catch (const std::exception&) {
      throw UsageError("bad list entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list '" + text + "'");
  return out;
}

// Reads `key = value` lines; '#' starts a comment.
std::vector<std::string> read_config_overlay(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

void print_histogram_table(std::ostream& os, const std::string& label,
                           const std::map<std::size_t, std::size_t>& h) {
  os << std::left << std::setw(12) << "Scene size";
  std::size_t total = 0;
  for (const auto& [size, n] : h) os << std::right << std::setw(8) << size;
  os << std::setw(10) << "total" << '\n' << std::left << std::setw(12) << label;
  for (const auto& [size, n] : h) {
    os << std::right << std::setw(8) << n;
    total += n;
  }
  os << std::setw(10) << total << '\n';
}

std::string percent(double fraction) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * fraction;
  return s.str();
}

double factorial(std::size_t n) {
  double f = 1.0;
  for (std::size_t k = 2; k <= n; ++k) f *= static_cast<double>(k);
  return f;
}

// ---------------------------------------------------------------- subcommands

struct SynthArgs {
  std::string out_dir;
  std::size_t n_scenes = 0;
  std::string splits = "train,val,test";
  std::string sizes = "2:958,3:472,4:203,5:100,6:51";
  std::string channels = "A:16,P:32,I:32";
  std::string segments = "4:0.65,5:0.20,6:0.15";
  double signal = 5.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  SynthConfig cfg;
  cfg.scenes_per_split.clear();
  std::stringstream ss(a.splits);
  std::string name;
  while (std::getline(ss, name, ',')) {
    name = trim(name);
    if (name.empty()) continue;
    try {
      const auto split = parse_split(name);
      cfg.scenes_per_split[split] = a.n_scenes ? a.n_scenes : (split == Split::Train ? 2000 : 500);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  cfg.size_histogram = parse_histogram(a.sizes);
  cfg.channels = parse_channels(a.channels);
  cfg.t_full_histogram = parse_histogram(a.segments);
  cfg.signal_strength = a.signal;
  cfg.noise_std = a.noise;
  cfg.seed = a.seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto summary = generate_synthetic(cfg, a.out_dir);
  err << "wrote " << summary.clips << " clips to " << summary.manifest.string() << '\n';

  out << "#Clips in a scene\n";
  std::ofstream csv(fs::path(a.out_dir) / "summary.csv");
  csv << "split,scene_size,scenes\n";
  for (const auto& [split, h] : summary.histograms) {
    print_histogram_table(out, std::string(to_string(split)), h);
    for (const auto& [size, n] : h) csv << to_string(split) << ',' << size << ',' << n << '\n';
  }
  return kExitOk;
}

struct ModelArgs {
  std::string modalities = "API";
  std::string method = "tcbp";
  std::size_t t = 3;
  std::string sampling = "c_last";
  std::size_t d = 8192;
  std::size_t reduce_dim = 2048;
  std::size_t hidden = 0;  // 0: reference size for the method
  std::size_t embed = 0;
};

struct TrainArgs {
  std::string manifest;
  std::string out_dir;
  ModelArgs model;
  bool negatives = false;
  double alpha = kDefaultMargin;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch = 32;
  std::size_t iters = 5000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;
  std::size_t val_every = 0;
  std::size_t threads = 1;
};

EncoderConfig build_encoder_config(const ModelArgs& m,
                                   const std::map<Modality, std::size_t>& channels,
                                   std::uint64_t seed) {
  EncoderConfig cfg;
  try {
    const auto set = parse_modality_set(m.modalities);
    cfg.method = parse_method(m.method);
    cfg.sampling = parse_sampling(m.sampling);
    for (auto mod : set) {
      auto it = channels.find(mod);
      if (it == channels.end()) {
        throw std::invalid_argument(std::string("dataset has no features for modality ") +
                                    modality_tag(mod));
      }
      cfg.modalities.emplace_back(mod, it->second);
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const bool mean_pool = cfg.method == EncodingMethod::MeanPool;
  cfg.segments = m.t;
  cfg.sketch_dim = m.d;
  cfg.reduce_dim = m.reduce_dim;
  cfg.hidden_dim = m.hidden ? m.hidden : (mean_pool ? 2048 : 4096);
  cfg.embed_dim = m.embed ? m.embed : (mean_pool ? 1024 : 2048);
  cfg.seed = seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::vector<LoadedScene> load_scenes(const std::string& manifest, Split split,
                                     std::span<const Modality> modalities,
                                     std::map<Modality, std::size_t>* channels = nullptr) {
  const auto ds = load_manifest(manifest);
  return load_split(ds, split, modalities, channels);
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<Modality> set;
  try {
    set = parse_modality_set(a.model.modalities);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto ds = load_manifest(a.manifest);
  std::map<Modality, std::size_t> channels;
  const auto train_scenes = load_split(ds, Split::Train, set, &channels);
  if (train_scenes.empty()) throw std::runtime_error("manifest has no train scenes");
  const auto val_scenes = load_split(ds, Split::Val, set);

  EncoderModel model(build_encoder_config(a.model, channels, a.seed));
  TrainConfig tc;
  tc.lr = a.lr;
  tc.momentum = a.momentum;
  tc.weight_decay = a.weight_decay;
  tc.batch_size = a.batch;
  tc.iterations = a.iters;
  tc.alpha = a.alpha;
  tc.use_negatives = a.negatives;
  tc.seed = a.seed;
  tc.sampling = model.config().sampling;
  tc.segments = model.config().segments;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  EvalOptions eval_opts;
  eval_opts.seed = a.seed;
  eval_opts.threads = a.threads;

  auto on_step = [&](std::size_t it, const StepStats& stats) -> std::optional<double> {
    std::optional<double> val;
    const bool last = it == a.iters;
    if (!val_scenes.empty() && ((a.val_every && it % a.val_every == 0) || last)) {
      val = evaluate(model, val_scenes, eval_opts).report.accuracy();
    }
    json j{{"iter", it}, {"loss", stats.loss}};
    if (val) j["val_accuracy"] = *val;
    log << j.dump() << '\n';
    if (a.checkpoint_every && it % a.checkpoint_every == 0 && !last) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(6) << std::setfill('0') << it << ".tcbp";
      model.save(out_dir / name.str());
    }
    if (it % 100 == 0 || last) {
      err << "iter " << it << " loss " << stats.loss;
      if (val) err << " val_acc " << percent(*val);
      err << '\n';
    }
    return val;
  };

  auto state = OptimizerState::zeros_like(model);
  const auto history = train(model, train_scenes, tc, state, on_step);
  model.save(out_dir / "model.tcbp");
  write_file_bytes(out_dir / "optimizer.state", state.serialize());
  out << "trained " << history.size() << " iterations; checkpoint "
      << (out_dir / "model.tcbp").string() << '\n';
  if (!history.empty()) out << "final loss " << history.back().loss << '\n';
  if (!history.empty() && history.back().val_accuracy) {
    out << "val accuracy " << percent(*history.back().val_accuracy) << '\n';
  }
  return kExitOk;
}

struct OrderArgs {
  std::string manifest;
  std::string checkpoint;
  std::string split = "val";
  std::string out_file;
  std::string json_file;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t max_clips = kMaxSceneClips;
};

EvalResult run_eval(const OrderArgs& a) {
  const auto model = EncoderModel::load(a.checkpoint);
  Split split;
  try {
    split = parse_split(a.split);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto order = model.config().modality_order();
  const auto scenes = load_scenes(a.manifest, split, order);
  EvalOptions opts;
  opts.seed = a.seed;
  opts.threads = a.threads;
  opts.max_clips = a.max_clips;
  return evaluate(model, scenes, opts);
}

int cmd_order(const OrderArgs& a, std::ostream& out, std::ostream& err) {
  const auto result = run_eval(a);
  std::ofstream file;
  if (!a.out_file.empty()) file.open(a.out_file, std::ios::trunc);
  std::ostream& sink = a.out_file.empty() ? out : file;
  for (const auto& s : result.scenes) {
    json j{{"scene_id", s.scene_id},
           {"predicted", s.predicted},
           {"gt", s.ground_truth},
           {"total_loss", s.total_loss},
           {"correct", s.correct}};
    sink << j.dump() << '\n';
  }
  err << "ordered " << result.scenes.size() << " scenes, accuracy "
      << percent(result.report.accuracy()) << "%\n";
  return kExitOk;
}

void print_size_table(std::ostream& os, const AccuracyReport& report) {
  const auto hist = report.histogram();
  os << std::left << std::setw(18) << "# Clips in scene";
  for (const auto& [size, n] : hist) os << std::right << std::setw(9) << size;
  os << std::setw(9) << "all" << '\n';
  os << std::left << std::setw(18) << "Samples";
  for (const auto& [size, n] : hist) os << std::right << std::setw(9) << n;
  os << std::setw(9) << report.scenes << '\n';
  os << std::left << std::setw(18) << "Random";
  for (const auto& [size, n] : hist) os << std::right << std::setw(9) << percent(1.0 / factorial(size));
  os << std::setw(9) << percent(chance_accuracy(hist)) << '\n';
  os << std::left << std::setw(18) << "Model";
  for (const auto& [size, stats] : report.by_size) {
    os << std::right << std::setw(9) << percent(stats.accuracy());
  }
  os << std::setw(9) << percent(report.accuracy()) << '\n';
}

int cmd_eval(const OrderArgs& a, std::ostream& out, std::ostream&) {
  const auto result = run_eval(a);
  const auto& report = result.report;
  if (report.scenes == 0) throw std::runtime_error("split " + a.split + " has no scenes");
  out << "split " << a.split << ": ordering accuracy " << percent(report.accuracy())
      << "% over " << report.scenes << " scenes (chance "
      << percent(chance_accuracy(report.histogram())) << "%)\n";
  print_size_table(out, report);
  if (!a.json_file.empty()) {
    json j{{"split", a.split},
           {"scenes", report.scenes},
           {"accuracy", report.accuracy()},
           {"chance", chance_accuracy(report.histogram())}};
    j["by_size"] = json::array();
    for (const auto& [size, stats] : report.by_size) {
      j["by_size"].push_back({{"size", size},
                              {"scenes", stats.scenes},
                              {"correct", stats.correct},
                              {"accuracy", stats.accuracy()},
                              {"chance", 1.0 / factorial(size)}});
    }
    std::ofstream(a.json_file, std::ios::trunc) << j.dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_chance(const std::string& sizes, std::ostream& out) {
  const auto weights = parse_histogram(sizes);
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [size, n] : weights) {
    if (size < 2) throw UsageError("scene sizes must be >= 2");
    if (n < 0 || n != std::floor(n)) throw UsageError("scene counts must be whole numbers");
    hist[size] = static_cast<std::size_t>(n);
  }
  out << "size,scenes,chance_percent\n";
  for (const auto& [size, n] : hist) out << size << ',' << n << ',' << percent(1.0 / factorial(size)) << '\n';
  out << "all," << std::accumulate(hist.begin(), hist.end(), std::size_t{0},
                                   [](std::size_t acc, const auto& kv) { return acc + kv.second; })
      << ',' << percent(chance_accuracy(hist)) << '\n';
  return kExitOk;
}

struct GradcheckArgs {
  std::vector<std::string> ops;
  std::size_t instances = 10;
  double tolerance = 1e-4;
  std::uint64_t seed = 20190617;
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  auto checks = gradcheck::registered_ops();
  if (a.inject_fault) checks.push_back(gradcheck::faulty_op());
  if (!a.ops.empty()) {
    std::vector<gradcheck::OpCheck> selected;
    for (const auto& name : a.ops) {
      auto it = std::find_if(checks.begin(), checks.end(),
                             [&](const auto& c) { return c.name == name; });
      if (it == checks.end()) throw UsageError("unknown op '" + name + "'");
      selected.push_back(*it);
    }
    checks = std::move(selected);
  }
  gradcheck::Options opts;
  opts.instances = a.instances;
  opts.tolerance = a.tolerance;
  opts.seed = a.seed;
  bool all_passed = true;
  out << "op,instances,entries,max_rel_error,status\n";
  for (const auto& c : checks) {
    const auto r = gradcheck::run(c, opts);
    all_passed = all_passed && r.passed;
    out << r.op << ',' << r.instances << ',' << r.entries << ',' << std::scientific
        << std::setprecision(3) << r.max_rel_error << std::defaultfloat << ','
        << (r.passed ? "pass" : "FAIL") << '\n';
  }
  err << (all_passed ? "all gradient checks passed" : "gradient check FAILED") << '\n';
  return all_passed ? kExitOk : kExitCheckFailed;
}

struct BenchArgs {
  std::string channels = "256,1024,2048";
  std::string segments = "1,2,3,4,6,8";
  std::string dims = "1024,8192";
  std::size_t reps = 5;
  std::uint64_t seed = 1;
};

template <typename F>
double median_micros(std::size_t reps, F&& f) {
  std::vector<double> samples;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(samples.size() / 2),
                   samples.end());
  return samples[samples.size() / 2];
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  const auto cs = parse_list<std::size_t>(a.channels);
  const auto ts = parse_list<std::size_t>(a.segments);
  const auto ds = parse_list<std::size_t>(a.dims);
  if (a.reps == 0) throw UsageError("--reps must be positive");
  Rng rng(a.seed);
  bool counts_ok = true;
  double sink = 0.0;
  out << "method,stage,c,t,d,param_count,expected_param_count,median_us\n";
  for (auto c : cs) {
    for (auto d : ds) {
      std::vector<double> proj_t, proj_us;
      for (auto t : ts) {
        std::vector<double> data(c * t);
        for (auto& v : data) v = rng.normal();
        const FeatureMap x(c, t, std::move(data));
        const auto cbp_p = SketchParams::generate(c, t, d, rng.next_u64(), SketchMode::CBP);
        const auto tcbp_p = SketchParams::generate(c, t, d, rng.next_u64(), SketchMode::TCBP);
        const std::size_t cbp_expected = 2 * 2 * c;
        const std::size_t tcbp_expected = 2 * (c + c * t);
        counts_ok = counts_ok && cbp_p.parameter_count() == cbp_expected &&
                    tcbp_p.parameter_count() == tcbp_expected;

        const double cbp_us = median_micros(a.reps, [&] { sink += cbp_encode(x, cbp_p)[0]; });
        const double tcbp_us = median_micros(a.reps, [&] { sink += tcbp_encode(x, tcbp_p)[0]; });
        const double proj_time =
            median_micros(a.reps, [&] { sink += tcbp_project(x, tcbp_p).u1[0]; });
        const double mean_us = median_micros(a.reps, [&] {
          std::vector<double> m(c, 0.0);
          for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t k = 0; k < t; ++k) m[i] += x(i, k);
            m[i] /= static_cast<double>(t);
          }
          sink += m[0];
        });
        out << "cbp,encode," << c << ',' << t << ',' << d << ',' << cbp_p.parameter_count() << ','
            << cbp_expected << ',' << cbp_us << '\n';
        out << "tcbp,encode," << c << ',' << t << ',' << d << ',' << tcbp_p.parameter_count()
            << ',' << tcbp_expected << ',' << tcbp_us << '\n';
        out << "tcbp,projection," << c << ',' << t << ',' << d << ','
            << tcbp_p.parameter_count() << ',' << tcbp_expected << ',' << proj_time << '\n';
        out << "meanpool,encode," << c << ',' << t << ',' << d << ",0,0," << mean_us << '\n';
        proj_t.push_back(static_cast<double>(t));
        proj_us.push_back(proj_time);
      }
      if (proj_t.size() >= 2) {
        const double mt = std::accumulate(proj_t.begin(), proj_t.end(), 0.0) / proj_t.size();
        const double my = std::accumulate(proj_us.begin(), proj_us.end(), 0.0) / proj_us.size();
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t k = 0; k < proj_t.size(); ++k) {
          sxy += (proj_t[k] - mt) * (proj_us[k] - my);
          sxx += (proj_t[k] - mt) * (proj_t[k] - mt);
        }
        err << "tcbp projection c=" << c << " d=" << d << ": slope " << sxy / sxx
            << " us per segment\n";
      }
    }
  }
  if (sink == 42.0) err << "";  // keeps the timed work observable
  if (!counts_ok) {
    err << "parameter counts do not match 2*2c (CBP) / 2*(c+ct) (TCBP)\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--modalities", m.modalities, "modality tags, e.g. API");
  sub->add_option("--method", m.method, "tcbp | cbp | meanpool | concat")
      ->check(CLI::IsMember({"tcbp", "cbp", "meanpool", "concat"}));
  sub->add_option("--t", m.t, "temporal segments per clip")->check(CLI::PositiveNumber);
  sub->add_option("--sampling", m.sampling, "random | c_first | c_last")
      ->check(CLI::IsMember({"random", "c_first", "c_last"}));
  sub->add_option("--d", m.d, "sketch dimension")->check(CLI::PositiveNumber);
  sub->add_option("--reduce-dim", m.reduce_dim, "channel reduction width")
      ->check(CLI::PositiveNumber);
  sub->add_option("--hidden", m.hidden, "W1 output size (0: 4096, 2048 for meanpool)");
  sub->add_option("--embed", m.embed, "W2 output size (0: 2048, 1024 for meanpool)");
}

void add_eval_options(CLI::App* sub, OrderArgs& o) {
  sub->add_option("--manifest", o.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  sub->add_option("--checkpoint", o.checkpoint, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--split", o.split, "train | val | test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  sub->add_option("--seed", o.seed, "presentation shuffle seed");
  sub->add_option("--threads", o.threads, "encoding threads")->check(CLI::PositiveNumber);
  sub->add_option("--max-clips", o.max_clips, "brute-force cap on scene size")
      ->check(CLI::PositiveNumber);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_pairs(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw UsageError("expected key:value, got '" + item + "'");
    out.emplace_back(trim(item.substr(0, colon)), trim(item.substr(colon + 1)));
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal compact bilinear pooling: multimodal clip encoding and temporal ordering",
               "tcbp"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  std::string config_path;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic multimodal ordering dataset");
  s->add_option("--out", synth.out_dir, "output directory")->required();
  s->add_option("--n-scenes", synth.n_scenes, "scenes per split (0: 2000 train, 500 val/test)");
  s->add_option("--splits", synth.splits, "comma-separated splits to generate");
  s->add_option("--sizes", synth.sizes, "scene-size histogram size:weight,...");
  s->add_option("--channels", synth.channels, "channels per modality tag:c,...");
  s->add_option("--segments", synth.segments, "segments-per-clip histogram t:weight,...");
  s->add_option("--signal", synth.signal, "signal strength")->check(CLI::NonNegativeNumber);
  s->add_option("--noise", synth.noise, "noise standard deviation")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.seed, "generator seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train an encoder with the temporal ordering objective");
  t->add_option("--manifest", tr.manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out_dir, "output directory")->required();
  add_model_options(t, tr.model);
  t->add_flag("--negatives", tr.negatives, "add corrupted pairs with a margin hinge");
  t->add_option("--alpha", tr.alpha, "negative margin")->check(CLI::PositiveNumber);
  t->add_option("--lr", tr.lr, "learning rate")->check(CLI::NonNegativeNumber);
  t->add_option("--momentum", tr.momentum, "momentum")->check(CLI::NonNegativeNumber);
  t->add_option("--weight-decay", tr.weight_decay, "weight decay")->check(CLI::NonNegativeNumber);
  t->add_option("--batch", tr.batch, "pairs per batch")->check(CLI::PositiveNumber);
  t->add_option("--iters", tr.iters, "training iterations");
  t->add_option("--seed", tr.seed, "seed for weights, sketch and sampling");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "iterations between checkpoints");
  t->add_option("--val-every", tr.val_every, "iterations between validation runs (0: end only)");
  t->add_option("--threads", tr.threads, "threads for validation encoding")
      ->check(CLI::PositiveNumber);

  OrderArgs ord;
  auto* o = app.add_subcommand("order", "order the scenes of a split, one JSON line per scene");
  add_eval_options(o, ord);
  o->add_option("--out", ord.out_file, "write JSON lines here instead of stdout");

  OrderArgs ev;
  auto* e = app.add_subcommand("eval", "ordering accuracy with per-scene-size breakdown");
  add_eval_options(e, ev);
  e->add_option("--json", ev.json_file, "also write the report as JSON");

  std::string chance_sizes = "2:958,3:472,4:203,5:100,6:51";
  auto* ch = app.add_subcommand("chance", "chance ordering accuracy for a scene-size histogram");
  ch->add_option("--sizes", chance_sizes, "size:count,...");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference checks of every backward rule");
  g->add_option("--op", gc.ops, "restrict to these ops (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  g->add_option("--instances", gc.instances, "random instances per op")->check(CLI::PositiveNumber);
  g->add_option("--tolerance", gc.tolerance, "max relative error")->check(CLI::PositiveNumber);
  g->add_option("--seed", gc.seed, "instance seed");
  g->add_flag("--inject-fault", gc.inject_fault, "also run an op with a broken backward")
      ->group("");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "time CBP/TCBP/mean pooling and check (h, s) sizes");
  b->add_option("--c", bench.channels, "channel counts");
  b->add_option("--t", bench.segments, "segment counts");
  b->add_option("--d", bench.dims, "sketch dimensions");
  b->add_option("--reps", bench.reps, "repetitions per timing");
  b->add_option("--seed", bench.seed, "input seed");

  for (auto* sub : {s, t, o, e, ch, g, b}) {
    sub->add_option("--config", config_path, "flat key = value file; flags win")
        ->check(CLI::ExistingFile);
  }

  std::vector<std::string> args = raw_args;
  try {
    // Config overlay: file entries go first so explicit flags override them.
    for (std::size_t k = 1; k < args.size(); ++k) {
      std::string path;
      std::size_t erase = 0;
      if (args[k] == "--config" && k + 1 < args.size()) {
        path = args[k + 1];
        erase = 2;
      } else if (args[k].rfind("--config=", 0) == 0) {
        path = args[k].substr(9);
        erase = 1;
      }
      if (erase) {
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(k),
                   args.begin() + static_cast<std::ptrdiff_t>(k + erase));
        auto overlay = read_config_overlay(path);
        args.insert(args.begin() + 2, overlay.begin(), overlay.end());
        break;
      }
    }
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  }

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& ex) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  auto* active = app.get_subcommands().front();
  err << "# resolved config: " << active->get_name() << '\n' << active->config_to_str(true, false);

  try {
    if (active == s) return cmd_synth(synth, out, err);
    if (active == t) return cmd_train(tr, out, err);
    if (active == o) return cmd_order(ord, out, err);
    if (active == e) return cmd_eval(ev, out, err);
    if (active == ch) return cmd_chance(chance_sizes, out);
    if (active == g) return cmd_gradcheck(gc, out, err);
    if (active == b) return cmd_bench(bench, out, err);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace tcbp::cli
