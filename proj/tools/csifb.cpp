// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

// csifb gen|train|finetune|decode|sweep|plot
// exit codes: 0 ok, 2 config, 3 data format, 4 numerical divergence

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csifb/harness.hpp"

namespace {

using csifb::ConfigError;
using nlohmann::json;

struct Overrides {
  std::string config;
  std::int64_t seed = -1;
  std::string out;
  std::vector<double> lambdas;
  std::vector<std::size_t> intervals;
  std::vector<std::string> modes;
  std::string checkpoint;
  std::size_t jobs = 0;
  bool resume = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON configuration file");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--jobs", o.jobs, "worker threads for independent cells");
}

json load_config(const Overrides& o) {
  json j = json::object();
  if (!o.config.empty()) {
    if (!std::filesystem::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    const auto b = csifb::read_file(o.config);
    try {
      j = json::parse(b.begin(), b.end());
    } catch (const json::exception& e) {
      throw ConfigError("malformed config " + o.config + ": " + e.what());
    }
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (o.seed >= 0) j["seed"] = o.seed;
  if (!o.out.empty()) j["out"] = o.out;
  if (!o.lambdas.empty()) {
    j["lambdas"] = o.lambdas;
    if (o.lambdas.size() == 1) j["finetune"]["lambda"] = o.lambdas[0];
  }
  if (!o.intervals.empty()) j["intervals"] = o.intervals;
  if (!o.modes.empty()) j["modes"] = o.modes;
  if (!o.checkpoint.empty()) j["checkpoint"] = o.checkpoint;
  if (o.jobs > 0) j["jobs"] = o.jobs;
  if (o.resume) j["train"]["resume"] = true;
  return j;
}

csifb::ExperimentSpec make_spec(const std::string& command, const Overrides& o) {
  auto spec = csifb::ExperimentSpec::from_json(command, load_config(o));
  spec.validate();
  return spec;
}

void print_table(const csifb::ResultTable& t) { std::cout << t.to_csv(); }

int run(int argc, char** argv) {
  CLI::App app{"Neural CSI feedback with coded model updates"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen", "generate base, shifted and stream datasets");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "train one backbone per lambda");
  add_common(train, o);
  train->add_option("--lambda", o.lambdas, "lambda list (overrides config)");
  train->add_flag("--resume", o.resume, "continue from the last-epoch checkpoints");

  auto* ft = app.add_subcommand("finetune", "run fine-tuning sessions per mode");
  add_common(ft, o);
  ft->add_option("--lambda", o.lambdas, "distortion weight; selects backbone_l<lambda>.ckpt");
  ft->add_option("--mode", o.modes, "no_ft, encoder_only, full_model, genie_aided (comma list allowed)")
      ->delimiter(',');
  ft->add_option("--checkpoint", o.checkpoint, "backbone checkpoint (theta0)");

  auto* sweep = app.add_subcommand("sweep", "interval and quantizer-bin sweeps");
  add_common(sweep, o);
  sweep->add_option("--lambda", o.lambdas, "distortion weight");
  sweep->add_option("--interval", o.intervals, "interval list (overrides config)")->delimiter(',');
  sweep->add_option("--checkpoint", o.checkpoint, "backbone checkpoint (theta0)");

  csifb::DecodeOptions dopt;
  std::string bitstreams, checkpoint, out, session, reference, prior_kind;
  double t = 0.0, sigma = -1.0, alpha = -1.0;
  int n = 0;
  auto* dec = app.add_subcommand("decode", "decode bitstreams with theta0 only");
  dec->add_option("--bitstreams", bitstreams, "directory of .nbit files")->required();
  dec->add_option("--checkpoint", checkpoint, "theta0 checkpoint")->required();
  dec->add_option("--out", out, "reconstructed CSIBIN file")->required();
  dec->add_option("--session", session, "session manifest carrying quantizer and prior settings");
  dec->add_option("--reference", reference, "original CSIBIN for NMSE");
  dec->add_option("--t", t, "update bin width");
  dec->add_option("--n", n, "update bin count");
  dec->add_option("--prior", prior_kind, "spike_slab or uniform");
  dec->add_option("--prior-sigma", sigma, "slab standard deviation");
  dec->add_option("--prior-alpha", alpha, "spike weight");

  std::vector<std::string> inputs, epoch_logs;
  std::string plot_out = "plots";
  auto* plot = app.add_subcommand("plot", "SVG and CSV figures from result tables");
  plot->add_option("--input", inputs, "result table CSV (repeatable)")->required();
  plot->add_option("--epochs", epoch_logs, "epoch log CSV (repeatable)");
  plot->add_option("--out", plot_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    const auto res = csifb::cmd_gen(make_spec("gen", o));
    std::cout << res.manifest["stats"].dump(2) << "\n";
  } else if (train->parsed()) {
    print_table(csifb::cmd_train(make_spec("train", o)));
  } else if (ft->parsed()) {
    print_table(csifb::cmd_finetune(make_spec("finetune", o)).table);
  } else if (sweep->parsed()) {
    print_table(csifb::cmd_sweep(make_spec("sweep", o)).table);
  } else if (dec->parsed()) {
    dopt.bitstreams = bitstreams;
    dopt.checkpoint = checkpoint;
    dopt.out = out;
    if (!session.empty()) dopt.session = session;
    if (!reference.empty()) dopt.reference = reference;
    csifb::TrainConfig d;
    if (t > 0.0 || n > 0) {
      dopt.quantizer = csifb::UpdateQuantizer::make(t > 0.0 ? t : d.quantizer.t, n > 0 ? n : d.quantizer.n);
    }
    const double pt = dopt.quantizer ? dopt.quantizer->t : d.quantizer.t;
    if (prior_kind == "uniform") {
      dopt.prior = csifb::UpdatePrior::uniform(pt);
    } else if (prior_kind == "spike_slab" || sigma >= 0.0 || alpha >= 0.0) {
      dopt.prior = csifb::UpdatePrior::spike_slab(sigma >= 0.0 ? sigma : d.update_prior.sigma,
                                                  alpha >= 0.0 ? alpha : d.update_prior.alpha, pt);
    } else if (!prior_kind.empty()) {
      throw ConfigError("unknown prior '" + prior_kind + "'");
    }
    if (dopt.quantizer) dopt.quantizer->validate();
    if (dopt.prior) dopt.prior->validate();
    const auto rep = csifb::cmd_decode(dopt);
    std::cout << rep.json.dump(2) << "\n";
  } else if (plot->parsed()) {
    std::vector<std::filesystem::path> tables(inputs.begin(), inputs.end());
    std::vector<std::filesystem::path> logs(epoch_logs.begin(), epoch_logs.end());
    for (const auto& name : csifb::cmd_plot(tables, logs, plot_out)) std::cout << name << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const csifb::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const csifb::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const csifb::DecodeError& e) {
    std::fprintf(stderr, "decode error: %s\n", e.what());
    return 3;
  } catch (const csifb::DimensionError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const csifb::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
