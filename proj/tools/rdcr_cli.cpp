#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdcr/checkpoint.hpp"
#include "rdcr/cifar.hpp"
#include "rdcr/config.hpp"
#include "rdcr/gradcheck.hpp"
#include "rdcr/metrics.hpp"
#include "rdcr/noise.hpp"
#include "rdcr/shapeset.hpp"
#include "rdcr/train.hpp"

namespace fs = std::filesystem;
using namespace rdcr;

namespace {

struct ConfigArgs {
  std::string config_path;
  std::string preset;
  std::string scale;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* sub, ConfigArgs& args) {
  sub->add_option("--config", args.config_path, "config file (key = value lines)");
  sub->add_option("--preset", args.preset, "named preset")
      ->check(CLI::IsMember(config::preset_names()));
  sub->add_option("--scale", args.scale, "preset scale override")
      ->check(CLI::IsMember({"tiny"}));
  sub->add_option("--set", args.sets, "extra key=value override (repeatable)");
}

config::ExperimentConfig load_config(const ConfigArgs& args) {
  if (args.preset.empty() && args.config_path.empty())
    throw ConfigError("need --config or --preset");
  if (!args.scale.empty() && args.preset.empty())
    throw ConfigError("--scale only applies to --preset");
  config::KeyValues kv;
  if (!args.preset.empty())
    kv = config::preset_key_values(args.preset, args.scale == "tiny");
  if (!args.config_path.empty()) {
    config::KeyValues file = config::parse_file(args.config_path);
    kv.insert(kv.end(), file.begin(), file.end());
  }
  for (const std::string& s : args.sets) {
    config::KeyValues one = config::parse_text(s, "--set");
    kv.insert(kv.end(), one.begin(), one.end());
  }
  return config::resolve(kv);
}

struct BuiltData {
  std::shared_ptr<Dataset> test;
  noise::NoisyDataset noisy;  // training pool with partitions
};

noise::Setting setting_of(const config::ExperimentConfig& cfg) {
  return cfg.noise.kind == "semi_sl" ? noise::Setting::semi_sl
                                     : noise::Setting::simplified_nl;
}

std::vector<int> parse_pairing(const std::string& text, int k) {
  if (text == "next") {
    std::vector<int> p(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) p[static_cast<size_t>(i)] = (i + 1) % k;
    return p;
  }
  std::vector<int> p;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (cur.empty()) throw ConfigError("noise.pairing: empty entry");
      p.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return p;
}

BuiltData build_data(const config::ExperimentConfig& cfg) {
  BuiltData out;
  std::shared_ptr<Dataset> train_base;
  if (cfg.dataset.kind == "shapeset") {
    shapeset::ShapeSetSpec sp;
    sp.K = cfg.dataset.classes;
    sp.G = cfg.dataset.image_size;
    sp.N = cfg.dataset.train_count;
    train_base = shapeset::generate(sp, derive_key(cfg.train.seed, "data-train"));
    sp.N = cfg.dataset.test_count;
    out.test = shapeset::generate(sp, derive_key(cfg.train.seed, "data-test"));
  } else {
    cifar::Variant v = cfg.dataset.kind == "cifar10" ? cifar::Variant::cifar10
                                                     : cifar::Variant::cifar100;
    cifar::Loaded loaded = cifar::load(cfg.dataset.dir, v);
    train_base = loaded.train;
    out.test = loaded.test;
  }

  const int k = train_base->K;
  noise::NoisyDataset noisy;
  if (cfg.noise.kind == "symmetric") {
    noise::TransitionMatrix t =
        noise::symmetric_matrix(k, cfg.noise.eps, cfg.noise.includes_self);
    noisy = noise::corrupt_labels(train_base, t,
                                  derive_key(cfg.train.seed, "noise"));
  } else if (cfg.noise.kind == "asymmetric") {
    noise::TransitionMatrix t = noise::pairwise_asymmetric_matrix(
        k, cfg.noise.eps, parse_pairing(cfg.noise.pairing, k));
    noisy = noise::corrupt_labels(train_base, t,
                                  derive_key(cfg.train.seed, "noise"));
  } else {
    noisy = noise::NoisyDataset(train_base, train_base->labels);
  }
  out.noisy = noise::make_partitions(noisy, setting_of(cfg), cfg.noise.labeled,
                                     cfg.noise.validation_fraction,
                                     derive_key(cfg.train.seed, "parts"));
  return out;
}

train::TrainConfig train_config_of(const config::ExperimentConfig& cfg) {
  train::TrainConfig tc;
  tc.setting = setting_of(cfg);
  tc.consistency = cfg.train.consistency == "kl" ? train::ConsistencyKind::kl
                                                 : train::ConsistencyKind::mse;
  tc.weights.s = cfg.weight.s;
  tc.weights.c = cfg.weight.c;
  tc.weights.r = cfg.weight.r;
  tc.clip_threshold = cfg.train.clip;
  tc.optim.base_lr = cfg.train.lr;
  tc.optim.lr_floor = cfg.train.lr_floor;
  tc.optim.momentum = cfg.train.momentum;
  tc.optim.weight_decay = cfg.train.weight_decay;
  tc.optim.pretrain_epochs = cfg.train.pretrain_epochs;
  tc.ema.decay = cfg.train.ema_decay;
  tc.ema.decay_late = cfg.train.ema_decay_late;
  tc.swa.cycles = cfg.train.swa_cycles;
  tc.swa.cycle_epochs = cfg.train.swa_cycle_epochs;
  tc.swa.captures_per_cycle = cfg.train.swa_captures_per_cycle;
  tc.augment.translate = cfg.augment.translate;
  tc.augment.hflip = cfg.augment.hflip;
  tc.augment.noise_sigma = cfg.augment.noise_sigma;
  tc.rotation = cfg.train.rotation;
  tc.epochs = cfg.train.epochs;
  tc.batch = cfg.train.batch;
  tc.seed = cfg.train.seed;
  return tc;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      std::fprintf(f, "%s%.6f", c ? "," : "", m(r, c));
    std::fprintf(f, "\n");
  }
  if (std::fclose(f) != 0) throw IoError("failed writing " + path);
}

int cmd_corrupt(const ConfigArgs& args) {
  config::ExperimentConfig cfg = load_config(args);
  BuiltData data = build_data(cfg);
  ensure_dir(cfg.out_dir);
  noise::save_sidecar(cfg.out_dir + "/noisy-labels.bin", data.noisy);
  noise::TransitionMatrix emp = noise::empirical_transition(data.noisy);
  write_matrix_csv(cfg.out_dir + "/transition-empirical.csv", emp.rows);
  std::printf("samples            %d\n", data.noisy.count());
  std::printf("corrupted fraction %.6f\n", noise::corrupted_fraction(data.noisy));
  std::printf("sidecar            %s/noisy-labels.bin\n", cfg.out_dir.c_str());
  std::printf("empirical T        %s/transition-empirical.csv\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_train(const ConfigArgs& args) {
  config::ExperimentConfig cfg = load_config(args);
  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir + "/config-resolved", config::resolved_text(cfg));

  BuiltData data = build_data(cfg);
  train::TrainConfig tc = train_config_of(cfg);
  nn::ModelConfig mc = cfg.model_config();

  auto started = std::chrono::steady_clock::now();
  train::RunResult run = train::run_training(tc, mc, data.noisy, *data.test);
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - started)
                       .count();

  metrics::write_csv(cfg.out_dir + "/metrics.csv", run.log);
  metrics::Role role = train::evaluated_role(tc);
  nn::NetworkParams& last =
      role == metrics::Role::teacher ? run.teacher : run.student;
  save_checkpoint(cfg.out_dir + "/checkpoint-last.bin", last);
  save_checkpoint(cfg.out_dir + "/checkpoint-best.bin",
                  run.best_epoch >= 0 ? run.best : last);
  if (run.swa.captures > 0)
    save_checkpoint(cfg.out_dir + "/checkpoint-swa.bin", run.swa.params);

  if (!run.log.empty()) {
    auto [best, final_acc] = metrics::best_last(run.log, role);
    std::printf("epochs %d  best %.2f  last %.2f  (%s role)\n",
                static_cast<int>(run.log.size()), best, final_acc,
                role == metrics::Role::teacher ? "teacher" : "student");
  }
  std::printf("wrote %s/metrics.csv (%.1f s)\n", cfg.out_dir.c_str(), seconds);
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& checkpoint_path,
             const std::string& split) {
  config::ExperimentConfig cfg = load_config(args);
  nn::NetworkParams params = load_checkpoint(checkpoint_path);
  BuiltData data = build_data(cfg);
  if (split == "test") {
    if (params.config.num_classes != data.test->K)
      throw ConfigError("checkpoint has " +
                        std::to_string(params.config.num_classes) +
                        " classes, dataset has " + std::to_string(data.test->K));
    double acc = train::evaluate(params, *data.test, 256);
    std::printf("test accuracy %.12g%% (%d samples)\n", acc, data.test->count());
  } else {
    const auto& idx = data.noisy.train_indices;
    std::vector<int> pred = train::predict_rows(
        params,
        [&](int i) { return data.noisy.image(idx[static_cast<size_t>(i)]); },
        static_cast<int>(idx.size()), 256);
    std::vector<int> truth(idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      truth[i] = data.noisy.audit_true_label(idx[i]);
    std::printf("train-pool accuracy %.12g%% (%zu samples, true labels)\n",
                metrics::accuracy(pred, truth), idx.size());
  }
  return 0;
}

int cmd_confusion(const ConfigArgs& args, const std::string& checkpoint_path,
                  std::string out_path) {
  config::ExperimentConfig cfg = load_config(args);
  nn::NetworkParams params = load_checkpoint(checkpoint_path);
  BuiltData data = build_data(cfg);
  train::PseudoLabels pl =
      train::pseudo_labels(params, data.noisy, data.noisy.train_indices, 256);
  std::vector<int> truth(data.noisy.train_indices.size());
  for (size_t i = 0; i < truth.size(); ++i)
    truth[i] = data.noisy.audit_true_label(data.noisy.train_indices[i]);
  metrics::ConfusionMatrix cm =
      metrics::pseudo_confusion(pl.labels, truth, data.noisy.K());
  if (out_path.empty()) {
    ensure_dir(cfg.out_dir);
    out_path = cfg.out_dir + "/confusion.csv";
  }
  metrics::write_confusion_csv(out_path, cm);
  std::printf("diagonal mean %.4f%%\n", cm.diagonal_mean());
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_gradcheck(uint64_t seed, double step, double tol) {
  auto started = std::chrono::steady_clock::now();
  FdSweepResult res = rdcr_loss_fd_sweep(seed, step);
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  for (const auto& e : res.per_param)
    std::printf("%-22s %6lld coords  worst rel err %.3e\n", e.name.c_str(),
                static_cast<long long>(e.count), e.worst_err);
  bool ok = res.worst < tol;
  std::printf("worst %.3e  tolerance %.0e  %s  (%.1f s)\n", res.worst, tol,
              ok ? "PASS" : "FAIL", seconds);
  return ok ? 0 : 1;
}

int cmd_schedule(const ConfigArgs& args) {
  config::ExperimentConfig cfg = load_config(args);
  std::printf("epoch,lr,w_s,w_c,w_r\n");
  for (int e = 0; e < cfg.train.epochs; ++e) {
    double lr = train::cyclic_lr(e, cfg.train.lr,
                                 std::max(1, cfg.train.swa_cycle_epochs),
                                 cfg.train.pretrain_epochs, cfg.train.lr_floor);
    std::printf("%d,%.12g,%.12g,%.12g,%.12g\n", e, lr,
                train::schedule_value(cfg.weight.s, e),
                train::schedule_value(cfg.weight.c, e),
                train::schedule_value(cfg.weight.r, e));
  }
  std::fprintf(stderr, "clip threshold %.12g\n", cfg.train.clip);
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"rotation-decoupling consistency training laboratory"};
  app.require_subcommand(1);

  ConfigArgs corrupt_args;
  CLI::App* corrupt = app.add_subcommand(
      "corrupt", "generate noisy labels; write sidecar + empirical transition");
  add_config_options(corrupt, corrupt_args);

  ConfigArgs train_args;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "full training run; writes metrics.csv and checkpoints");
  add_config_options(train_cmd, train_args);

  ConfigArgs eval_args;
  std::string eval_checkpoint, eval_split = "test";
  CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint");
  add_config_options(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--split", eval_split, "test | train")
      ->check(CLI::IsMember({"test", "train"}));

  ConfigArgs conf_args;
  std::string conf_checkpoint, conf_out;
  CLI::App* conf_cmd = app.add_subcommand(
      "confusion", "pseudo-label confusion matrix on the training pool");
  add_config_options(conf_cmd, conf_args);
  conf_cmd->add_option("--checkpoint", conf_checkpoint, "checkpoint file")
      ->required();
  conf_cmd->add_option("--out", conf_out, "output CSV path");

  std::string gc_preset = "tiny";
  uint64_t gc_seed = 0;
  double gc_step = 1e-5, gc_tol = 1e-4;
  CLI::App* gc_cmd = app.add_subcommand(
      "gradcheck", "finite-difference sweep over every parameter");
  gc_cmd->add_option("--preset", gc_preset, "network size")
      ->check(CLI::IsMember({"tiny"}));
  gc_cmd->add_option("--seed", gc_seed, "sweep seed");
  gc_cmd->add_option("--step", gc_step, "central-difference step");
  gc_cmd->add_option("--tol", gc_tol, "relative-error tolerance");

  ConfigArgs sched_args;
  CLI::App* sched_cmd =
      app.add_subcommand("schedule", "per-epoch lr and loss-weight table");
  add_config_options(sched_cmd, sched_args);
  sched_cmd->add_flag("--dump", "print the per-epoch table (default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (corrupt->parsed()) return cmd_corrupt(corrupt_args);
  if (train_cmd->parsed()) return cmd_train(train_args);
  if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_checkpoint, eval_split);
  if (conf_cmd->parsed()) return cmd_confusion(conf_args, conf_checkpoint, conf_out);
  if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_step, gc_tol);
  if (sched_cmd->parsed()) return cmd_schedule(sched_args);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
