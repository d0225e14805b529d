// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "csifb/csibin.hpp"
#include "csifb/finetune.hpp"
#include "csifb/plot.hpp"

namespace csifb {

namespace fs = std::filesystem;

/// Parsed command configuration. `config` keeps the merged JSON (file plus
/// flag overrides) so manifests can echo it verbatim.
struct ExperimentSpec {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  fs::path out = "out";
  std::uint64_t seed = 1;
  std::vector<double> lambdas;
  std::vector<Mode> modes;
  std::vector<std::size_t> intervals;
  std::vector<int> n_list;
  std::map<std::string, fs::path> data;  // train / val / test / shifted / stream
  std::optional<fs::path> checkpoint;
  std::size_t jobs = 1;

  fs::path data_path(const std::string& key) const {
    auto it = data.find(key);
    return it != data.end() ? it->second : out / (key + ".csib");
  }

  nlohmann::json section(const std::string& key) const {
    return config.contains(key) ? config[key] : nlohmann::json::object();
  }

  static ExperimentSpec from_json(const std::string& command, const nlohmann::json& j);
  void validate() const;
};

namespace detail {

inline std::vector<Mode> parse_modes(const nlohmann::json& j) {
  std::vector<Mode> out;
  auto add = [&](const std::string& s) {
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(parse_mode(part));
    }
  };
  if (j.is_string()) {
    add(j.get<std::string>());
  } else {
    for (const auto& m : j) add(m.get<std::string>());
  }
  return out;
}

inline const std::vector<std::string>& data_keys() {
  static const std::vector<std::string> keys{"train", "val", "test", "shifted", "stream"};
  return keys;
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
}

}  // namespace detail

inline ExperimentSpec ExperimentSpec::from_json(const std::string& command, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentSpec s;
  s.command = command;
  s.config = j;
  try {
    s.seed = j.value("seed", std::uint64_t{1});
    s.out = j.value("out", std::string("out"));
    s.jobs = std::max<std::size_t>(1, j.value("jobs", std::size_t{1}));
    s.lambdas = j.value("lambdas", std::vector<double>{1.0});
    s.modes = detail::parse_modes(j.value("modes", nlohmann::json::array({"no_ft", "encoder_only", "full_model",
                                                                         "genie_aided"})));
    s.intervals = j.value("intervals", std::vector<std::size_t>{150, 200, 300, 500});
    s.n_list = j.value("n_list", std::vector<int>{2, 4, 8, 16, 32, 64, 128, 256});
    if (j.contains("data")) {
      for (const auto& [k, v] : j["data"].items()) s.data[k] = v.get<std::string>();
    }
    if (j.contains("checkpoint") && !j["checkpoint"].is_null()) s.checkpoint = j["checkpoint"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad configuration field: ") + e.what());
  }
  return s;
}

inline void ExperimentSpec::validate() const {
  if (command == "train" && lambdas.empty()) throw ConfigError("lambda list is empty");
  for (double l : lambdas) {
    if (!(l > 0.0)) throw ConfigError("lambda values must be positive");
  }
  if (command == "finetune" && modes.empty()) throw ConfigError("mode list is empty");
  if (command == "sweep") {
    const std::string kind = section("sweep").value("kind", std::string("interval"));
    if ((kind == "interval" || kind == "both") && intervals.empty()) throw ConfigError("interval list is empty");
    if ((kind == "quant" || kind == "both") && n_list.empty()) throw ConfigError("N list is empty");
  }
  if (command == "train") {
    detail::require_file(data_path("train"), "training data");
    detail::require_file(data_path("val"), "validation data");
  }
  if (command == "finetune" || command == "sweep") {
    if (checkpoint) detail::require_file(*checkpoint, "checkpoint");
  }
  if (command == "finetune") detail::require_file(data_path("shifted"), "fine-tuning data");
  if (command == "gen") section("channel").get<ChannelConfig>().validate();
}

/// One (mode, lambda, interval) cell.
struct ResultRow {
  std::string experiment_id;
  std::string mode;
  double lambda = 0.0;
  std::size_t interval = 0;
  int n_bins = 0;  // update quantizer bins, 0 when no update is coded
  double rate_latent = 0.0;
  double rate_update = 0.0;
  double rate_total = 0.0;
  double nmse_db = 0.0;
  std::size_t nonzero_updates = 0;
  double wall_time = 0.0;
};

inline constexpr const char* kResultColumns =
    "experiment_id,mode,lambda,interval,n_bins,rate_latent,rate_update,rate_total,nmse_db,nonzero_updates,"
    "wall_time";

struct ResultTable {
  std::vector<ResultRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << kResultColumns << "\n";
    for (const auto& r : rows) {
      os << r.experiment_id << "," << r.mode << "," << r.lambda << "," << r.interval << "," << r.n_bins << ","
         << r.rate_latent << "," << r.rate_update << "," << r.rate_total << "," << r.nmse_db << ","
         << r.nonzero_updates << "," << r.wall_time << "\n";
    }
    return os.str();
  }

  static ResultTable from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kResultColumns) {
      throw FormatError("result table header does not match the expected columns", 0);
    }
    ResultTable t;
    std::size_t offset = line.size() + 1;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      if (f.size() != 11) throw FormatError("result row has " + std::to_string(f.size()) + " fields", offset);
      try {
        t.rows.push_back(ResultRow{f[0], f[1], std::stod(f[2]), std::stoul(f[3]), std::stoi(f[4]),
                                   std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[8]),
                                   std::stoul(f[9]), std::stod(f[10])});
      } catch (const std::logic_error&) {
        throw FormatError("unparsable result row", offset);
      }
      offset += line.size() + 1;
    }
    return t;
  }
};

inline ResultTable read_table(const fs::path& p) {
  const Bytes b = read_file(p);
  return ResultTable::from_csv(std::string(b.begin(), b.end()));
}

namespace detail {

inline std::string lambda_tag(double l) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", l);
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p)); }

/// Runs fn(0..n-1) on up to `jobs` threads. Each call owns its state; the
/// first exception (by index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= n) return;
            i = next++;
          }
          run(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::string epoch_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss,nonzero_updates\n";
  for (const auto& e : log) os << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.nonzero_updates << "\n";
  return os.str();
}

inline std::vector<double> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline TrainConfig train_config(const ExperimentSpec& spec, const std::string& key) {
  TrainConfig c;
  try {
    c = spec.section(key).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad '" + key + "' section: " + e.what());
  }
  if (!spec.section(key).contains("seed")) c.seed = spec.seed;
  if (key == "finetune") {
    if (!spec.section(key).contains("epochs")) c.epochs = 1000;
    if (!spec.section(key).contains("lr")) c.lr = 1e-4;
  }
  return c;
}

inline Topology topology_for(const ExperimentSpec& spec, const CsiDataset& ds) {
  Topology t = spec.section("topology").get<Topology>();
  t.n_tx = ds.n_tx();
  t.n_sub = ds.n_sub();
  t.validate();
  return t;
}

inline CsiDataset limited(const CsiDataset& ds, std::size_t limit) {
  return (limit == 0 || ds.size() <= limit) ? ds : ds.subset(0, limit);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen

struct GenResult {
  std::map<std::string, CsiDataset> sets;
  nlohmann::json manifest;
};

/// Base pool -> train/val/test split, a shifted environment and a drifting
/// stream. All sets share the base pool's normalization factor.
inline GenResult cmd_gen(const ExperimentSpec& spec) {
  const nlohmann::json g = spec.section("gen");
  ChannelConfig base = spec.section("channel").get<ChannelConfig>();
  if (!spec.section("channel").contains("seed")) base.seed = spec.seed;
  base.validate();
  const auto count = g.value("count", std::size_t{2000});
  const auto fractions = g.value("split", std::array<double, 3>{0.4, 0.4, 0.2});
  const nlohmann::json sh = g.value("shift", nlohmann::json::object());
  const nlohmann::json st = g.value("stream", nlohmann::json::object());
  const bool norm = g.value("normalize", true);

  CsiDataset pool = generate(base, count);
  const double scale = norm ? std::sqrt(static_cast<double>(pool.elements()) / mean_power(pool)) : 1.0;
  if (!std::isfinite(scale)) throw NumericalError("base pool has no power");
  auto rescale = [&](CsiDataset ds, const std::string& tag) {
    for (auto& s : ds.samples) s *= scale;
    ds.normalized = norm;
    ds.scale = scale;
    ds.tag = tag;
    return ds;
  };
  pool = rescale(std::move(pool), "pool");
  const DatasetSplit parts = split(pool, fractions, spec.seed);

  ChannelConfig shifted_cfg = shift(base, sh.value("angle", 0.2), sh.value("spread_scale", 1.0),
                                    sh.value("path_delta", 0));
  shifted_cfg.seed = sh.value("seed", derive_seed(spec.seed, 1));
  const auto n_shift = sh.value("count", std::size_t{300});
  ChannelConfig stream_cfg = shifted_cfg;
  stream_cfg.seed = st.value("seed", derive_seed(spec.seed, 2));

  GenResult res;
  res.sets["train"] = parts.train;
  res.sets["val"] = parts.val;
  res.sets["test"] = parts.test;
  res.sets["shifted"] = rescale(generate(shifted_cfg, n_shift), "shifted");
  res.sets["stream"] = rescale(generate_stream(stream_cfg, st.value("count", std::size_t{1000}),
                                               st.value("drift", 0.0)),
                               "eval-stream");

  nlohmann::json files = nlohmann::json::object();
  for (const auto& [key, ds] : res.sets) {
    const fs::path p = spec.data_path(key);
    write_csibin(p, ds);
    files[key] = {{"path", p.string()}, {"count", ds.size()}, {"sha256", detail::file_hash(p)},
                  {"config", ds.config}};
  }
  const auto r_base = spatial_correlation(res.sets["train"]);
  const auto r_shift = spatial_correlation(res.sets["shifted"]);
  res.manifest = {{"command", "gen"},
                  {"config", spec.config},
                  {"seed", spec.seed},
                  {"scale", scale},
                  {"files", files},
                  {"stats",
                   {{"base_dominant_eigen_fraction", dominant_eigen_fraction(r_base)},
                    {"shifted_dominant_eigen_fraction", dominant_eigen_fraction(r_shift)},
                    {"correlation_distance", correlation_distance(r_base, r_shift)}}}};
  detail::write_json(spec.out / "gen_manifest.json", res.manifest);
  return res;
}

// ---------------------------------------------------------------------------
// train

inline fs::path backbone_path(const fs::path& out, double lambda) {
  return out / ("backbone_l" + detail::lambda_tag(lambda) + ".ckpt");
}

inline fs::path resume_path(const fs::path& out, double lambda) {
  return out / ("backbone_l" + detail::lambda_tag(lambda) + ".last.ckpt");
}

/// Test-set evaluation of a backbone: latent rate and NMSE, no update.
inline RdPoint evaluate_backbone(const Model& m, const CsiDataset& test) {
  TrainConfig nf;
  nf.mode = Mode::kNoFinetune;
  return run_session(m, {}, detail::pointers(test.samples), nf).aggregate;
}

/// One backbone per lambda, each with a best checkpoint and a resumable
/// last-epoch checkpoint. `train.resume` continues from the latter.
inline ResultTable cmd_train(const ExperimentSpec& spec) {
  const CsiDataset train = ingest(spec.data_path("train"));
  const CsiDataset val_full = ingest(spec.data_path("val"));
  const CsiDataset val = detail::limited(val_full, spec.section("train").value("val_limit", std::size_t{0}));
  const fs::path test_path = spec.data_path("test");
  const std::optional<CsiDataset> test = fs::exists(test_path) ? std::optional(ingest(test_path)) : std::nullopt;
  const Topology topo = detail::topology_for(spec, train);
  const TrainConfig base_cfg = detail::train_config(spec, "train");
  const bool resume = spec.section("train").value("resume", false);
  const nlohmann::json hashes = {{"train", detail::file_hash(spec.data_path("train"))},
                                 {"val", detail::file_hash(spec.data_path("val"))}};

  ResultTable table;
  table.rows.resize(spec.lambdas.size());
  nlohmann::json runs = nlohmann::json::array();
  std::vector<nlohmann::json> run_info(spec.lambdas.size());
  detail::parallel_for(spec.lambdas.size(), spec.jobs, [&](std::size_t k) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg = base_cfg;
    cfg.lambda = spec.lambdas[k];
    cfg.mode = Mode::kBackbone;
    const fs::path best_p = backbone_path(spec.out, cfg.lambda), last_p = resume_path(spec.out, cfg.lambda);
    const nlohmann::json meta = {{"lambda", cfg.lambda}, {"train_config", cfg}, {"data_sha256", hashes}};
    auto hook = [&](const Model& cur, const TrainState& st, const Model& best) {
      save_checkpoint(last_p, Checkpoint{cur, st, meta});
      nlohmann::json bm = meta;
      bm["epoch"] = st.epoch;
      save_checkpoint(best_p, Checkpoint{best, std::nullopt, bm});
    };
    TrainResult tr;
    if (resume && fs::exists(last_p) && fs::exists(best_p)) {
      const Checkpoint last = load_checkpoint(last_p);
      if (!last.train) throw FormatError("resume checkpoint has no optimizer state", 0);
      tr = resume_backbone(last.model, *last.train, load_checkpoint(best_p).model, train, val, cfg, hook);
    } else {
      tr = train_backbone(topo, train, val, cfg, hook);
    }
    nlohmann::json bm = meta;
    bm["epoch"] = tr.state.epoch;
    bm["best_epoch"] = tr.best_epoch;
    save_checkpoint(best_p, Checkpoint{tr.best, std::nullopt, bm});
    save_checkpoint(last_p, Checkpoint{tr.last, tr.state, meta});
    write_text(spec.out / ("train_log_l" + detail::lambda_tag(cfg.lambda) + ".csv"), detail::epoch_csv(tr.log));
    const RdPoint p = test ? evaluate_backbone(tr.best, *test) : RdPoint{};
    table.rows[k] = ResultRow{"train_l" + detail::lambda_tag(cfg.lambda), "backbone", cfg.lambda, 0, 0,
                              p.rate_latent, 0.0, p.rate_total, p.nmse_db, 0, detail::seconds_since(t0)};
    run_info[k] = {{"lambda", cfg.lambda},
                   {"checkpoint", best_p.string()},
                   {"checkpoint_sha256", detail::file_hash(best_p)},
                   {"resume_checkpoint", last_p.string()},
                   {"epochs_run", tr.state.epoch},
                   {"best_epoch", tr.best_epoch},
                   {"test", p}};
  });
  for (auto& r : run_info) runs.push_back(std::move(r));
  write_text(spec.out / "rd_frontier.csv", table.to_csv());
  detail::write_json(spec.out / "train_manifest.json",
                     {{"command", "train"}, {"config", spec.config}, {"data_sha256", hashes}, {"runs", runs}});
  return table;
}

// ---------------------------------------------------------------------------
// finetune

inline std::string sample_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.nbit", i);
  return buf;
}

inline fs::path resolve_checkpoint(const ExperimentSpec& spec, double lambda) {
  if (spec.checkpoint) return *spec.checkpoint;
  const fs::path p = backbone_path(spec.out, lambda);
  detail::require_file(p, "checkpoint");
  return p;
}

/// Writes a session's bitstreams, epoch log and manifest under `dir`.
inline nlohmann::json write_session(const fs::path& dir, const SessionResult& s, const TrainConfig& cfg,
                                    const nlohmann::json& echo) {
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < s.streams.size(); ++i) {
    const fs::path p = dir / sample_file(i);
    write_file(p, s.streams[i].serialize());
    samples.push_back({{"file", p.filename().string()},
                       {"rd", s.per_sample[i]},
                       {"nmse", s.nmse[i]},
                       {"latent_bytes", s.latent_bytes[i]},
                       {"h_hat_sha256", sha256_hex(detail::flat(s.h_hat[i]))}});
  }
  write_text(dir / "epochs.csv", detail::epoch_csv(s.finetune.log));
  nlohmann::json m = echo;
  m["mode"] = mode_name(s.mode);
  m["train_config"] = cfg;
  m["quantizer"] = cfg.quantizer;
  m["update_prior"] = cfg.update_prior;
  m["theta_len"] = s.theta_len;
  m["update_bytes"] = s.update_bytes;
  m["update_entropy_bits"] = s.update_entropy_bits;
  m["nonzero_updates"] = s.nonzero_updates;
  m["best_epoch"] = s.finetune.best_epoch;
  m["window_begin"] = s.window_begin;
  m["eval_begin"] = s.eval_begin;
  m["samples"] = samples;
  m["aggregate"] = s.aggregate;
  detail::write_json(dir / "session_manifest.json", m);
  return m;
}

struct FinetuneRun {
  ResultTable table;
  std::vector<SessionResult> sessions;  // spec.modes order
};

/// Fine-tunes the backbone on the leading `ft_samples` of the shifted set and
/// codes the next `eval_samples` once per mode.
inline FinetuneRun cmd_finetune(const ExperimentSpec& spec) {
  TrainConfig base_cfg = detail::train_config(spec, "finetune");
  const nlohmann::json f = spec.section("finetune");
  if (!f.contains("lambda") && spec.lambdas.size() == 1) base_cfg.lambda = spec.lambdas[0];
  const fs::path ck_path = resolve_checkpoint(spec, base_cfg.lambda);
  const Checkpoint ck = load_checkpoint(ck_path);
  if (!f.contains("lambda") && spec.lambdas.size() != 1 && ck.meta.contains("lambda")) {
    base_cfg.lambda = ck.meta["lambda"].get<double>();
  }
  const fs::path data_p = spec.data_path("shifted");
  const CsiDataset data = ingest(data_p);
  if (data.sample_shape() != ck.model.topo.input_shape()) {
    throw DimensionError("data shape " + shape_string(data.sample_shape()) + " does not match checkpoint " +
                         shape_string(ck.model.topo.input_shape()));
  }
  const auto n_ft = f.value("ft_samples", std::size_t{100});
  const auto n_eval = f.value("eval_samples", std::size_t{200});
  if (data.size() < n_ft + n_eval) {
    throw ConfigError("shifted set has " + std::to_string(data.size()) + " samples, need " +
                      std::to_string(n_ft + n_eval));
  }
  std::vector<const Tensor*> h_t, eval;
  for (std::size_t i = 0; i < n_ft; ++i) h_t.push_back(&data.samples[i]);
  for (std::size_t i = n_ft; i < n_ft + n_eval; ++i) eval.push_back(&data.samples[i]);

  const nlohmann::json echo = {{"config", spec.config},
                               {"checkpoint", ck_path.string()},
                               {"checkpoint_sha256", detail::file_hash(ck_path)},
                               {"data", data_p.string()},
                               {"data_sha256", detail::file_hash(data_p)},
                               {"ft_samples", n_ft},
                               {"eval_samples", n_eval}};
  FinetuneRun run;
  run.sessions.resize(spec.modes.size());
  run.table.rows.resize(spec.modes.size());
  std::vector<nlohmann::json> summaries(spec.modes.size());
  detail::parallel_for(spec.modes.size(), spec.jobs, [&](std::size_t k) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg = base_cfg;
    cfg.mode = spec.modes[k];
    SessionResult s = run_session(ck.model, h_t, eval, cfg);
    s.eval_begin = n_ft;
    const std::string name = mode_name(cfg.mode);
    const nlohmann::json m = write_session(spec.out / name, s, cfg, echo);
    run.table.rows[k] = ResultRow{"finetune_" + name, name, cfg.lambda, n_ft + n_eval,
                                  cfg.mode == Mode::kFullModel ? cfg.quantizer.n : 0,
                                  s.aggregate.rate_latent, s.aggregate.rate_update, s.aggregate.rate_total,
                                  s.aggregate.nmse_db, s.nonzero_updates, detail::seconds_since(t0)};
    summaries[k] = {{"mode", name}, {"aggregate", s.aggregate}, {"manifest", (spec.out / name / "session_manifest.json").string()}};
    run.sessions[k] = std::move(s);
  });
  write_text(spec.out / "finetune_results.csv", run.table.to_csv());
  nlohmann::json top = echo;
  top["command"] = "finetune";
  top["sessions"] = summaries;
  detail::write_json(spec.out / "finetune_manifest.json", top);
  return run;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeOptions {
  fs::path bitstreams;  // directory of .nbit files, decoded in name order
  fs::path checkpoint;
  fs::path out;
  std::optional<fs::path> session;    // takes quantizer / prior from here
  std::optional<fs::path> reference;  // CSIBIN with the original samples
  std::optional<UpdateQuantizer> quantizer;
  std::optional<UpdatePrior> prior;
};

struct DecodeReport {
  std::vector<Tensor> h_hat;
  std::vector<std::string> hashes;
  std::vector<double> nmse;  // empty without a reference
  nlohmann::json json;
};

/// Standalone receiver: needs only theta0, the bitstreams and the prior
/// configuration.
inline DecodeReport cmd_decode(const DecodeOptions& opt) {
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  TrainConfig defaults;
  UpdateQuantizer q = defaults.quantizer;
  UpdatePrior p = defaults.update_prior;
  std::optional<nlohmann::json> manifest;
  if (opt.session) {
    const Bytes b = read_file(*opt.session);
    try {
      manifest = nlohmann::json::parse(b.begin(), b.end());
      q = manifest->at("quantizer").get<UpdateQuantizer>();
      p = manifest->at("update_prior").get<UpdatePrior>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad session manifest: ") + e.what());
    }
  }
  if (opt.quantizer) q = *opt.quantizer;
  if (opt.prior) p = *opt.prior;

  if (!fs::is_directory(opt.bitstreams)) throw ConfigError("bitstream directory not found: " + opt.bitstreams.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(opt.bitstreams)) {
    if (e.path().extension() == ".nbit") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .nbit files in " + opt.bitstreams.string());

  std::optional<CsiDataset> ref;
  if (opt.reference) {
    ref = ingest(*opt.reference);
    if (ref->size() < files.size()) throw ConfigError("reference has fewer samples than bitstreams");
  }
  const std::size_t ref_offset = (ref && manifest) ? manifest->value("eval_begin", std::size_t{0}) : 0;
  if (ref && ref->size() < ref_offset + files.size()) throw ConfigError("reference too short for eval offset");

  Receiver rx(ck.model, q, p);
  DecodeReport rep;
  CsiDataset out;
  out.config.n_tx = ck.model.topo.n_tx;
  out.config.n_sub = ck.model.topo.n_sub;
  out.tag = "decoded";
  nlohmann::json samples = nlohmann::json::array();
  double nmse_sum = 0.0;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Bitstream bs = Bitstream::parse(read_file(files[i]));
    Tensor h = rx.decode(bs);
    nlohmann::json row = {{"file", files[i].filename().string()}, {"h_hat_sha256", sha256_hex(detail::flat(h))}};
    rep.hashes.push_back(row["h_hat_sha256"]);
    if (ref) {
      const Tensor& x = ref->samples[ref_offset + i];
      const double pw = x.squared_norm();
      const double e = pw > 0.0 ? (h - x).squared_norm() / pw : 0.0;
      rep.nmse.push_back(e);
      nmse_sum += e;
      row["nmse"] = e;
    }
    samples.push_back(row);
    out.samples.push_back(h);
    rep.h_hat.push_back(std::move(h));
  }
  write_csibin(opt.out, out);
  rep.json = {{"checkpoint_sha256", detail::file_hash(opt.checkpoint)},
              {"quantizer", q},
              {"update_prior", p},
              {"samples", samples}};
  if (ref) rep.json["nmse_db"] = to_db(nmse_sum / static_cast<double>(files.size()));
  fs::path side = opt.out;
  side += ".decode.json";
  detail::write_json(side, rep.json);
  return rep;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRun {
  ResultTable table;
  nlohmann::json manifest = nlohmann::json::object();
};

/// Interval sweep over the drifting stream and/or bin-count sweep on the
/// shifted set, full-model fine-tuning throughout.
inline SweepRun cmd_sweep(const ExperimentSpec& spec) {
  TrainConfig base_cfg = detail::train_config(spec, "finetune");
  base_cfg.mode = Mode::kFullModel;
  const nlohmann::json f = spec.section("finetune");
  if (!f.contains("lambda") && spec.lambdas.size() == 1) base_cfg.lambda = spec.lambdas[0];
  const fs::path ck_path = resolve_checkpoint(spec, base_cfg.lambda);
  const Checkpoint ck = load_checkpoint(ck_path);
  const auto n_ft = f.value("ft_samples", std::size_t{100});
  const std::string kind = spec.section("sweep").value("kind", std::string("interval"));
  if (kind != "interval" && kind != "quant" && kind != "both") throw ConfigError("sweep kind must be interval, quant or both");

  SweepRun run;
  run.manifest["config"] = spec.config;
  run.manifest["checkpoint_sha256"] = detail::file_hash(ck_path);
  std::mutex mu;

  if (kind == "interval" || kind == "both") {
    const fs::path sp = spec.data_path("stream");
    detail::require_file(sp, "stream data");
    const CsiDataset stream = ingest(sp);
    run.manifest["stream_sha256"] = detail::file_hash(sp);
    std::vector<ResultRow> rows(spec.intervals.size());
    std::vector<nlohmann::json> info(spec.intervals.size());
    detail::parallel_for(spec.intervals.size(), spec.jobs, [&](std::size_t k) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t interval = spec.intervals[k];
      const auto sessions = schedule(ck.model, stream, interval, n_ft, base_cfg);
      const RdPoint agg = aggregate(sessions);
      std::size_t nz = 0;
      nlohmann::json per = nlohmann::json::array();
      for (const auto& s : sessions) {
        nz += s.nonzero_updates;
        per.push_back({{"window_begin", s.window_begin},
                       {"eval_samples", s.per_sample.size()},
                       {"update_bytes", s.update_bytes},
                       {"nonzero_updates", s.nonzero_updates},
                       {"aggregate", s.aggregate}});
      }
      rows[k] = ResultRow{"interval_" + std::to_string(interval), mode_name(Mode::kFullModel), base_cfg.lambda,
                          interval, base_cfg.quantizer.n, agg.rate_latent, agg.rate_update, agg.rate_total,
                          agg.nmse_db, sessions.empty() ? 0 : nz / sessions.size(), detail::seconds_since(t0)};
      std::lock_guard<std::mutex> lock(mu);
      info[k] = {{"interval", interval}, {"aggregate", agg}, {"sessions", per}};
    });
    for (auto& r : rows) run.table.rows.push_back(r);
    run.manifest["interval"] = info;
  }

  if (kind == "quant" || kind == "both") {
    const fs::path dp = spec.data_path("shifted");
    detail::require_file(dp, "fine-tuning data");
    const CsiDataset data = ingest(dp);
    const auto n_eval = f.value("eval_samples", std::size_t{200});
    if (data.size() < n_ft + n_eval) throw ConfigError("shifted set too small for the quantization sweep");
    std::vector<const Tensor*> h_t, eval;
    for (std::size_t i = 0; i < n_ft; ++i) h_t.push_back(&data.samples[i]);
    for (std::size_t i = n_ft; i < n_ft + n_eval; ++i) eval.push_back(&data.samples[i]);
    std::vector<ResultRow> rows(spec.n_list.size());
    std::vector<nlohmann::json> info(spec.n_list.size());
    detail::parallel_for(spec.n_list.size(), spec.jobs, [&](std::size_t k) {
      const auto t0 = std::chrono::steady_clock::now();
      TrainConfig cfg = base_cfg;
      cfg.quantizer = UpdateQuantizer::make(base_cfg.quantizer.t, spec.n_list[k]);
      const SessionResult s = run_session(ck.model, h_t, eval, cfg);
      rows[k] = ResultRow{"quant_n" + std::to_string(spec.n_list[k]), mode_name(Mode::kFullModel), cfg.lambda,
                          n_ft + n_eval, cfg.quantizer.n, s.aggregate.rate_latent, s.aggregate.rate_update,
                          s.aggregate.rate_total, s.aggregate.nmse_db, s.nonzero_updates, detail::seconds_since(t0)};
      // Table IV style labels read either as a bin count or as bits per entry.
      info[k] = {{"n_bins", cfg.quantizer.n},
                 {"as_bits", std::log2(static_cast<double>(cfg.quantizer.n))},
                 {"aggregate", s.aggregate},
                 {"update_bytes", s.update_bytes},
                 {"nonzero_updates", s.nonzero_updates}};
    });
    for (auto& r : rows) run.table.rows.push_back(r);
    run.manifest["quant"] = info;
  }
  write_text(spec.out / "sweep_results.csv", run.table.to_csv());
  detail::write_json(spec.out / "sweep_manifest.json", run.manifest);
  return run;
}

// ---------------------------------------------------------------------------
// plot

struct PlotArtifact {
  std::string name;
  std::vector<Series> series;
};

/// Figures derivable from result tables and epoch logs. Series are built
/// straight from table values so the points CSV reproduces them exactly.
inline std::vector<PlotArtifact> plot_series(const ResultTable& t,
                                             const std::vector<std::pair<std::string, std::vector<EpochLog>>>& logs) {
  std::vector<PlotArtifact> out;
  std::map<std::string, Series> rd;
  for (const auto& r : t.rows) {
    auto& s = rd[r.mode];
    s.name = r.mode;
    s.x.push_back(r.rate_total);
    s.y.push_back(r.nmse_db);
  }
  PlotArtifact a{"rd_curve", {}};
  for (auto& [k, s] : rd) a.series.push_back(s);
  out.push_back(a);

  PlotArtifact bars{"rate_breakdown", {{"rate_latent", {}, {}}, {"rate_update", {}, {}}}};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (int k = 0; k < 2; ++k) {
      bars.series[static_cast<std::size_t>(k)].x.push_back(static_cast<double>(i));
      bars.series[static_cast<std::size_t>(k)].y.push_back(k == 0 ? t.rows[i].rate_latent : t.rows[i].rate_update);
    }
  }
  out.push_back(bars);

  std::set<std::size_t> intervals;
  for (const auto& r : t.rows) {
    if (r.experiment_id.starts_with("interval_")) intervals.insert(r.interval);
  }
  if (intervals.size() > 1) {
    PlotArtifact iv{"interval", {{"nmse_db", {}, {}}, {"rate_total", {}, {}}, {"rate_update", {}, {}}}};
    for (const auto& r : t.rows) {
      if (!r.experiment_id.starts_with("interval_")) continue;
      const double x = static_cast<double>(r.interval);
      iv.series[0].x.push_back(x);
      iv.series[0].y.push_back(r.nmse_db);
      iv.series[1].x.push_back(x);
      iv.series[1].y.push_back(r.rate_total);
      iv.series[2].x.push_back(x);
      iv.series[2].y.push_back(r.rate_update);
    }
    out.push_back(iv);
  }
  if (!logs.empty()) {
    PlotArtifact nz{"nonzero_updates", {}};
    for (const auto& [name, log] : logs) {
      Series s{name, {}, {}};
      for (const auto& e : log) {
        s.x.push_back(static_cast<double>(e.epoch));
        s.y.push_back(static_cast<double>(e.nonzero_updates));
      }
      nz.series.push_back(s);
    }
    out.push_back(nz);
  }
  return out;
}

inline std::vector<EpochLog> read_epoch_csv(const fs::path& p) {
  const Bytes b = read_file(p);
  std::istringstream in(std::string(b.begin(), b.end()));
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,nonzero_updates") {
    throw FormatError("unexpected epoch log header in " + p.string(), 0);
  }
  std::vector<EpochLog> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochLog e;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> e.epoch >> c1 >> e.train_loss >> c2 >> e.val_loss >> c3 >> e.nonzero_updates)) {
      throw FormatError("unparsable epoch log row in " + p.string(), 0);
    }
    out.push_back(e);
  }
  return out;
}

/// Renders <name>.svg and <name>.csv per figure into `out`; returns the names.
inline std::vector<std::string> cmd_plot(const std::vector<fs::path>& tables, const std::vector<fs::path>& epoch_logs,
                                         const fs::path& out) {
  if (tables.empty()) throw ConfigError("plot needs at least one result table");
  ResultTable all;
  for (const auto& p : tables) {
    detail::require_file(p, "result table");
    const ResultTable t = read_table(p);
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  std::vector<std::pair<std::string, std::vector<EpochLog>>> logs;
  for (const auto& p : epoch_logs) {
    detail::require_file(p, "epoch log");
    logs.emplace_back(p.parent_path().filename().string(), read_epoch_csv(p));
  }
  std::vector<std::string> names;
  for (const auto& a : plot_series(all, logs)) {
    PlotSpec ps;
    ps.title = a.name;
    if (a.name == "rd_curve") {
      ps.x_label = "rate [bits per CSI element]";
      ps.y_label = "NMSE [dB]";
    } else if (a.name == "rate_breakdown") {
      ps.bars = true;
      ps.x_label = "result row";
      ps.y_label = "rate [bits per CSI element]";
    } else if (a.name == "interval") {
      ps.x_label = "fine-tuning interval [samples]";
      ps.y_label = "value";
    } else {
      ps.x_label = "epoch";
      ps.y_label = "non-zero quantized updates";
    }
    write_text(out / (a.name + ".svg"), render_svg(ps, a.series));
    write_text(out / (a.name + ".csv"), plot_points_csv(a.series));
    names.push_back(a.name);
  }
  return names;
}

}  // namespace csifb
