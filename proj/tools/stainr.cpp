// Command-line front end: data generation, training, evaluation, tiled
// restoration, gradient checks and the ablation sweep.

#include "stainr/config.hpp"
#include "stainr/gradcheck_suite.hpp"
#include "stainr/ppm.hpp"
#include "stainr/synthdata.hpp"
#include "stainr/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

using namespace stainr;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

// Options shared by every subcommand that builds a TrainConfig.
struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;  // key=value
  std::string data, out;
  int steps = -1, batch = -1, threads = -1;
  long long seed = -1;
  double lr = -1;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "config file of key = value lines");
    app->add_option("--set", overrides, "override one config key, e.g. --set base_channels=8")->take_all();
    app->add_option("--data", data, "dataset directory");
    app->add_option("--out", out, "output directory");
    app->add_option("--steps", steps, "total training steps");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--lr", lr, "peak learning rate");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--threads", threads, "worker threads");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!file.empty()) load_config_file(file, cfg);
    apply_environment(cfg);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!data.empty()) cfg.dataset = data;
    if (!out.empty()) cfg.out_dir = out;
    if (steps >= 0) cfg.total_steps = steps;
    if (batch >= 0) cfg.batch_size = batch;
    if (lr >= 0) cfg.lr_max = lr;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (threads >= 0) cfg.threads = threads;
    cfg.validate();
    return cfg;
  }
};

std::array<double, 6> parse_mix(const std::string& text) {
  std::array<double, 6> mix{};
  std::stringstream ss(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= mix.size()) throw ConfigError("--mix takes exactly six proportions");
    try {
      mix[i++] = std::stod(item);
    } catch (const std::logic_error&) {
      throw ConfigError("--mix: '" + item + "' is not a number");
    }
  }
  if (i != mix.size()) throw ConfigError("--mix takes exactly six proportions");
  return mix;
}

int cmd_gen_data(const std::string& out, int count, int size, long long seed, double test_fraction,
                 const std::string& mix) {
  DatasetSpec spec;
  spec.count = count;
  spec.height = spec.width = size;
  spec.test_fraction = test_fraction;
  if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
  else if (const char* s = std::getenv("STAINR_SEED"); s && *s) {
    TrainConfig tmp;
    set_config_value(tmp, "seed", s);
    spec.seed = tmp.seed;
  }
  if (!mix.empty()) spec.mix = parse_mix(mix);
  try {
    const auto plan = gen_dataset(out, spec);
    int test = 0;
    for (const auto& e : plan) test += e.test;
    std::cout << "wrote " << plan.size() << " pairs to " << out << " (" << plan.size() - test << " train, " << test
              << " test)\n";
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return kOk;
}

int cmd_train(const ConfigOptions& opts, bool quiet) {
  const TrainConfig cfg = opts.resolve();
  const auto start = std::chrono::steady_clock::now();
  const int every = std::max(1, cfg.total_steps / 20);
  const TrainResult res = train_from_config(cfg, [&](const LossLogRow& row) {
    if (!quiet && (row.step % every == 0 || row.step == 1)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "step " << std::setw(5) << row.step << "  lr " << std::scientific << std::setprecision(3) << row.lr
                << std::defaultfloat << "  loss " << std::setprecision(5) << row.total << "  (" << std::fixed
                << std::setprecision(1) << secs << " s)" << std::defaultfloat << std::endl;
    }
    return true;
  });
  std::cout << "trained " << res.log.size() << " steps; "
            << (res.log.empty() ? std::string("no loss recorded")
                                : "loss " + std::to_string(mean_total(res.log, 10, false)) + " -> " +
                                      std::to_string(mean_total(res.log, 10, true)))
            << "\ncheckpoint: " << (std::filesystem::path(cfg.out_dir) / "checkpoint.bin").string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split, int tile, int overlap,
             int threads, const std::string& csv, const std::string& report_path) {
  if (data.empty()) throw ConfigError("eval needs --data");
  const RestorerModel<float> model = load_model(checkpoint);
  const Dataset ds = load_dataset(data);
  EvalOptions opts;
  opts.tile = tile;
  opts.overlap = overlap;
  opts.threads = threads;
  if (const char* t = std::getenv("STAINR_THREADS"); t && *t) {
    TrainConfig tmp;
    set_config_value(tmp, "threads", t);
    opts.threads = std::min(opts.threads, tmp.threads);
  }
  if (split != "test" && split != "train") throw ConfigError("--split must be 'test' or 'train'");
  const bool test = split == "test";
  MetricsReport rep = evaluate(model, test ? ds.test : ds.train, test ? ds.test_ids : ds.train_ids, opts);
  rep.label = checkpoint;
  rep.write_text(std::cout);
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw DataError("cannot write '" + csv + "'");
    rep.write_csv(f);
  }
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw DataError("cannot write '" + report_path + "'");
    rep.write_text(f);
  }
  return kOk;
}

int cmd_restore(const std::string& checkpoint, const std::string& in, const std::string& out, int tile, int overlap) {
  const RestorerModel<float> model = load_model(checkpoint);
  const Image stained = read_ppm(in);
  write_ppm(out, restore_tiled(model, stained, tile, overlap));
  std::cout << "restored " << in << " -> " << out << "\n";
  return kOk;
}

int cmd_gradcheck(const std::string& op, int seeds, double tolerance) {
  GradcheckOptions opts;
  opts.tolerance = tolerance;
  bool all_ok = true, matched = false;
  for (const auto& c : gradcheck_suite()) {
    if (op != "all" && op != c.name) continue;
    matched = true;
    double worst = 0;
    std::string detail;
    bool ok = true;
    for (int s = 0; s < seeds; ++s) {
      const GradcheckReport r = c.run(static_cast<std::uint64_t>(s) + 1, opts);
      if (r.max_error > worst) {
        worst = r.max_error;
        detail = r.worst;
      }
      ok = ok && r.passed;
    }
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS " : "FAIL ") << std::left << std::setw(22) << c.name << std::right
              << " max rel err " << std::scientific << std::setprecision(2) << worst << std::defaultfloat;
    if (!ok) std::cout << "  " << detail;
    std::cout << "\n";
  }
  if (!matched) {
    std::string names;
    for (const auto& c : gradcheck_suite()) names += " " + c.name;
    throw ConfigError("unknown op '" + op + "'; choose all or one of:" + names);
  }
  return all_ok ? kOk : kNumeric;
}

int cmd_ablate(const ConfigOptions& opts, int tile, int overlap) {
  const TrainConfig cfg = opts.resolve();
  if (cfg.dataset.empty()) throw DataError("no dataset given (set 'dataset' or pass --data)");
  const Dataset data = load_dataset(cfg.dataset);
  EvalOptions eval;
  eval.tile = tile > 0 ? tile : cfg.eval_resolution;
  eval.overlap = overlap;
  eval.threads = cfg.threads;
  const auto rows = run_ablation(cfg, data, eval, &std::cerr);
  write_ablation_table(std::cout, rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stainr: document stain removal with memory-augmented transformers"};
  app.require_subcommand(1);

  std::string gd_out;
  int gd_count = 100, gd_size = 64;
  long long gd_seed = -1;
  double gd_test = 0.1;
  std::string gd_mix;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic stained/clean dataset");
  gen->add_option("--out", gd_out, "output directory")->required();
  gen->add_option("--count", gd_count, "number of pairs");
  gen->add_option("--size", gd_size, "image edge in pixels (>= 64)");
  gen->add_option("--seed", gd_seed, "dataset seed");
  gen->add_option("--test-fraction", gd_test, "fraction of ids held out");
  gen->add_option("--mix", gd_mix, "six proportions summing to 1: black_tea,green_tea,red_ink,blue_ink,seal,mark");

  ConfigOptions train_opts;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train a model and write loss_log.csv and checkpoint.bin");
  train_opts.attach(train_cmd);
  train_cmd->add_flag("-q,--quiet", quiet, "suppress progress lines");

  std::string ckpt, ev_data, ev_split = "test", ev_csv, ev_report;
  int tile = 256, overlap = 32, ev_threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "report PSNR/SSIM/MAE of a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
  eval_cmd->add_option("--split", ev_split, "test or train");
  eval_cmd->add_option("--tile", tile, "largest single-pass size; bigger images are tiled");
  eval_cmd->add_option("--overlap", overlap, "tile overlap in pixels");
  eval_cmd->add_option("--threads", ev_threads, "images evaluated in parallel");
  eval_cmd->add_option("--csv", ev_csv, "write per-image metrics as CSV");
  eval_cmd->add_option("--report", ev_report, "write the text report to a file");

  std::string rs_in, rs_out;
  auto* restore_cmd = app.add_subcommand("restore", "restore one PPM image");
  restore_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  restore_cmd->add_option("--in", rs_in, "stained PPM")->required();
  restore_cmd->add_option("--out", rs_out, "output PPM")->required();
  restore_cmd->add_option("--tile", tile, "tile edge");
  restore_cmd->add_option("--overlap", overlap, "tile overlap in pixels");

  std::string gc_op = "all";
  int gc_seeds = 5;
  double gc_tol = 1e-3;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc_cmd->add_option("--op", gc_op, "operation name or 'all'");
  gc_cmd->add_option("--seeds", gc_seeds, "random instances per operation")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tolerance", gc_tol, "relative error bound");

  ConfigOptions ablate_opts;
  int ab_tile = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare the four module combinations");
  ablate_opts.attach(ablate_cmd);
  ablate_cmd->add_option("--tile", ab_tile, "evaluation tile (default: eval_resolution)");
  ablate_cmd->add_option("--overlap", overlap, "tile overlap in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(gd_out, gd_count, gd_size, gd_seed, gd_test, gd_mix);
    if (*train_cmd) return cmd_train(train_opts, quiet);
    if (*eval_cmd) return cmd_eval(ckpt, ev_data, ev_split, tile, overlap, ev_threads, ev_csv, ev_report);
    if (*restore_cmd) return cmd_restore(ckpt, rs_in, rs_out, tile, overlap);
    if (*gc_cmd) return cmd_gradcheck(gc_op, gc_seeds, gc_tol);
    if (*ablate_cmd) return cmd_ablate(ablate_opts, ab_tile, overlap);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
