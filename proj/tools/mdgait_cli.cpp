// mdgait: synthesize radar gait data, preprocess it into frames, train and
// evaluate the dual-stream classifier, export frames as images.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mdgait/mdgait.h"

namespace fs = std::filesystem;

namespace {

struct CliError {
  std::string message;
};

void check(mdg_status st) {
  if (st != MDG_OK) throw CliError{std::string(mdg_status_name(st)) + ": " + mdg_last_error()};
}

struct ConfigHandle {
  mdg_config* ptr = nullptr;
  ConfigHandle() { check(mdg_config_create(&ptr)); }
  ~ConfigHandle() { mdg_config_free(ptr); }
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;
};

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string data;
  bool no_cache = false;
  bool deterministic = false;
};

void add_run_options(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("--config", args.config, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "Override a configuration value (key=value, repeatable)");
  cmd->add_option("--data", args.data, "Frame cache root, or raw .mdrs root with --no-cache")->required();
  cmd->add_flag("--no-cache", args.no_cache, "Read raw .mdrs sequences and preprocess in memory");
  cmd->add_flag("--deterministic", args.deterministic, "Single-threaded, bitwise reproducible");
}

void build_config(ConfigHandle& cfg, const RunArgs& args) {
  if (!args.config.empty()) check(mdg_config_load(cfg.ptr, args.config.c_str()));
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CliError{"--set expects key=value, got \"" + kv + "\""};
    check(mdg_config_set(cfg.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
}

void print_census(const mdg_census* c, void* user) {
  auto& per_subject = *static_cast<std::map<std::uint32_t, std::size_t>*>(user);
  per_subject[c->subject_id] += c->frames;
  std::printf("sequence subject=%u session=%u seq=%u samples=%zu decimated=%zu columns=%zu frames=%zu\n",
              c->subject_id, c->session, c->sequence, c->raw_samples, c->decimated_samples, c->columns, c->frames);
}

void print_epoch(const mdg_epoch* e, void*) {
  std::printf("epoch=%zu lr=%.9g train_loss=%.9g train_acc=%.6f test_acc=%.6f%s\n", e->epoch, e->lr, e->train_loss,
              e->train_accuracy, e->test_accuracy, e->new_best ? " best" : "");
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micro-Doppler gait recognition with a dual-stream vision transformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mdg_version()));

  mdg_synth_options synth = mdg_synth_options_default();
  std::string synth_out;
  bool synth_force = false;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic raw radar dataset");
  synth_cmd->add_option("--subjects", synth.subjects, "Number of subjects")->capture_default_str();
  synth_cmd->add_option("--sequences-per-subject", synth.sequences_per_subject, "Sequences per subject and session")
      ->capture_default_str();
  synth_cmd->add_option("--sessions", synth.sessions, "Recording sessions per subject")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Root seed")->capture_default_str();
  synth_cmd->add_option("--duration", synth.duration_s, "Sequence length in seconds")->capture_default_str();
  synth_cmd->add_option("--rate", synth.sample_rate_hz, "Sample rate in Hz")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise_sigma, "Complex noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--clutter", synth.clutter, "Stationary clutter amplitude")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_flag("--force", synth_force, "Write into a non-empty directory");

  std::string pre_in, pre_out;
  std::size_t pre_stride = 10, pre_hop = 13;
  bool pre_deterministic = false;
  auto* pre_cmd = app.add_subcommand("preprocess", "Cut raw sequences into spectrogram and CVD frames");
  pre_cmd->add_option("--in", pre_in, "Raw dataset root")->required();
  pre_cmd->add_option("--out", pre_out, "Frame cache root")->required();
  pre_cmd->add_option("--stride", pre_stride, "Frame stride in STFT columns")->capture_default_str()
      ->check(CLI::PositiveNumber);
  pre_cmd->add_option("--hop", pre_hop, "STFT hop in samples")->capture_default_str()->check(CLI::PositiveNumber);
  pre_cmd->add_flag("--deterministic", pre_deterministic, "Single worker thread");

  RunArgs train_args;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train the dual-stream model");
  add_run_options(train_cmd, train_args);
  train_cmd->add_option("--out", train_out, "Run output directory")->required();

  RunArgs eval_args;
  std::string eval_checkpoint, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_run_options(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Model checkpoint (.mdck)")->required();
  eval_cmd->add_option("--split", eval_split, "train, test or all")->capture_default_str();

  std::string render_in, render_out, render_kind = "spec";
  std::size_t render_frame = 0;
  auto* render_cmd = app.add_subcommand("render", "Export a cached frame as a PGM image");
  render_cmd->add_option("--in", render_in, "Frame cache file (.mdtf)")->required();
  render_cmd->add_option("--frame", render_frame, "Frame index")->capture_default_str();
  render_cmd->add_option("--kind", render_kind, "spec or cvd")->capture_default_str()
      ->check(CLI::IsMember({"spec", "cvd"}));
  render_cmd->add_option("--out", render_out, "Output .pgm path")->required();

  std::string info_path;
  auto* info_cmd = app.add_subcommand("info", "Describe an .mdrs, .mdtf or .mdck file");
  info_cmd->add_option("file", info_path, "File to describe")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mdgait: usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*synth_cmd) {
      if (synth.subjects < 1 || synth.sequences_per_subject < 1 || synth.sessions < 1) {
        std::cerr << "mdgait: usage error: --subjects, --sequences-per-subject and --sessions must be at least 1\n";
        return 2;
      }
      synth.force = synth_force ? 1 : 0;
      std::size_t written = 0;
      check(mdg_synth_dataset(synth_out.c_str(), &synth, &written));
      std::printf("files=%zu\n", written);
    } else if (*pre_cmd) {
      std::map<std::uint32_t, std::size_t> per_subject;
      check(mdg_preprocess(pre_in.c_str(), pre_out.c_str(), pre_stride, pre_hop,
                           mdg_worker_threads(pre_deterministic ? 1 : 0), print_census, &per_subject));
      std::size_t total = 0;
      for (const auto& [subject, frames] : per_subject) {
        std::printf("subject=%u frames=%zu\n", subject, frames);
        total += frames;
      }
      std::printf("total_frames=%zu\n", total);
    } else if (*train_cmd) {
      ConfigHandle cfg;
      build_config(cfg, train_args);
      mdg_train_result result{};
      check(mdg_train(cfg.ptr, train_args.data.c_str(), train_args.no_cache ? 1 : 0, train_out.c_str(),
                      train_args.deterministic ? 1 : 0, print_epoch, nullptr, &result));
      std::printf("best_acc=%.6f\nbest_epoch=%zu\nmetrics=%s\nsummary=%s\ncheckpoint=%s\n", result.best_accuracy,
                  result.best_epoch, result.metrics_path, result.summary_path, result.checkpoint_path);
    } else if (*eval_cmd) {
      ConfigHandle cfg;
      // A run directory keeps its effective configuration next to the checkpoint.
      const fs::path saved = fs::path(eval_checkpoint).parent_path() / "model.cfg";
      if (eval_args.config.empty() && fs::exists(saved)) eval_args.config = saved.string();
      build_config(cfg, eval_args);
      mdg_evaluation* ev = nullptr;
      check(mdg_evaluate(cfg.ptr, eval_checkpoint.c_str(), eval_args.data.c_str(), eval_args.no_cache ? 1 : 0,
                         eval_split.c_str(), &ev));
      const std::size_t classes = mdg_evaluation_classes(ev);
      std::printf("accuracy=%.6f\ncorrect=%zu\ntotal=%zu\nclasses=%zu\n", mdg_evaluation_accuracy(ev),
                  mdg_evaluation_correct(ev), mdg_evaluation_total(ev), classes);
      for (std::size_t t = 0; t < classes; ++t) {
        std::printf("confusion %zu:", t);
        for (std::size_t p = 0; p < classes; ++p) std::printf(" %zu", mdg_evaluation_confusion(ev, t, p));
        std::printf("\n");
      }
      mdg_evaluation_free(ev);
    } else if (*render_cmd) {
      check(mdg_render_frame(render_in.c_str(), render_frame, render_kind == "cvd" ? 1 : 0, render_out.c_str()));
      std::printf("wrote=%s\n", render_out.c_str());
    } else if (*info_cmd) {
      std::size_t needed = 0;
      check(mdg_describe_file(info_path.c_str(), nullptr, 0, &needed));
      std::string text(needed + 1, '\0');
      check(mdg_describe_file(info_path.c_str(), text.data(), text.size(), &needed));
      text.resize(needed);
      std::fputs(text.c_str(), stdout);
    }
  } catch (const CliError& e) {
    std::cerr << "mdgait: error: " << e.message << '\n';
    return 1;
  }
  return 0;
}
