#include "mdgait/mdgait.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "mdgait/app.hpp"
#include "mdgait/error.hpp"
#include "mdgait/model.hpp"
#include "mdgait/radar_synth.hpp"
#include "mdgait/tfr.hpp"

struct mdg_signal {
  mdgait::radar::RawSignal sig;
};

struct mdg_config {
  mdgait::app::RunConfig cfg;
};

struct mdg_evaluation {
  mdgait::train::Evaluation ev;
};

struct mdg_model {
  mdgait::model::AdsVitModel<float> model;
};

namespace {

thread_local std::string g_last_error;

mdg_status fail(mdg_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename Fn>
mdg_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MDG_OK;
  } catch (const mdgait::InvalidArgument& e) {
    return fail(MDG_INVALID_ARGUMENT, e.what());
  } catch (const mdgait::FormatError& e) {
    return fail(MDG_FORMAT, e.what());
  } catch (const mdgait::IoError& e) {
    return fail(MDG_IO, e.what());
  } catch (const mdgait::ShapeError& e) {
    return fail(MDG_SHAPE, e.what());
  } catch (const mdgait::ConfigError& e) {
    return fail(MDG_CONFIG, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(MDG_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MDG_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MDG_INTERNAL, e.what());
  } catch (...) {
    return fail(MDG_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw mdgait::InvalidArgument(what);
}

mdg_status copy_out(const std::string& text, char* buffer, std::size_t capacity, std::size_t* needed) {
  if (needed) *needed = text.size();
  if (!buffer) return MDG_OK;
  if (capacity <= text.size()) {
    if (capacity > 0) buffer[0] = '\0';
    return fail(MDG_INVALID_ARGUMENT, "buffer of " + std::to_string(capacity) + " bytes cannot hold " +
                                          std::to_string(text.size() + 1));
  }
  std::memcpy(buffer, text.data(), text.size() + 1);
  return MDG_OK;
}

void copy_path(char* dst, const std::filesystem::path& p) {
  const std::string s = p.string();
  const std::size_t n = std::min<std::size_t>(s.size(), 1023);
  std::memcpy(dst, s.data(), n);
  dst[n] = '\0';
}

}  // namespace

extern "C" {

const char* mdg_last_error(void) { return g_last_error.c_str(); }

const char* mdg_status_name(mdg_status status) {
  switch (status) {
    case MDG_OK: return "ok";
    case MDG_INVALID_ARGUMENT: return "invalid argument";
    case MDG_FORMAT: return "format error";
    case MDG_IO: return "i/o error";
    case MDG_SHAPE: return "shape error";
    case MDG_CONFIG: return "config error";
    case MDG_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* mdg_version(void) { return "1.0.0"; }

mdg_status mdg_signal_load(const char* path, mdg_signal** out) {
  return guarded([&] {
    require(path && out, "mdg_signal_load: null argument");
    *out = new mdg_signal{mdgait::radar::load_raw(path)};
  });
}

mdg_status mdg_signal_save(const mdg_signal* signal, const char* path) {
  return guarded([&] {
    require(signal && path, "mdg_signal_save: null argument");
    mdgait::radar::save_raw(signal->sig, path);
  });
}

mdg_status mdg_signal_synth(const mdg_gait_params* params, double duration_s, double sample_rate_hz,
                            double noise_sigma, uint64_t seed, mdg_signal** out) {
  return guarded([&] {
    require(params && out, "mdg_signal_synth: null argument");
    require(params->part_count == 0 ||
                (params->part_amplitudes_mps && params->part_phases_rad && params->part_reflectivities),
            "mdg_signal_synth: null part array");
    mdgait::radar::GaitParams p;
    p.torso_velocity_mps = params->torso_velocity_mps;
    p.cadence_hz = params->cadence_hz;
    const std::size_t n = params->part_count;
    if (n > 0) {
      p.part_amplitudes_mps.assign(params->part_amplitudes_mps, params->part_amplitudes_mps + n);
      p.part_phases_rad.assign(params->part_phases_rad, params->part_phases_rad + n);
      p.part_reflectivities.assign(params->part_reflectivities, params->part_reflectivities + n);
    }
    p.doppler_scale_hz_per_mps = params->doppler_scale_hz_per_mps;
    *out = new mdg_signal{mdgait::radar::synth_sequence(p, duration_s, sample_rate_hz, noise_sigma, seed)};
  });
}

mdg_status mdg_signal_decimate(const mdg_signal* signal, size_t factor, mdg_signal** out) {
  return guarded([&] {
    require(signal && out, "mdg_signal_decimate: null argument");
    *out = new mdg_signal{mdgait::radar::decimate(signal->sig, factor)};
  });
}

size_t mdg_signal_length(const mdg_signal* signal) { return signal ? signal->sig.size() : 0; }

double mdg_signal_rate(const mdg_signal* signal) { return signal ? signal->sig.sample_rate_hz : 0.0; }

int mdg_signal_subject(const mdg_signal* signal, uint32_t* subject) {
  if (!signal || !signal->sig.subject_id) return 0;
  if (subject) *subject = *signal->sig.subject_id;
  return 1;
}

mdg_status mdg_signal_copy_samples(const mdg_signal* signal, float* iq, size_t capacity) {
  return guarded([&] {
    require(signal && iq, "mdg_signal_copy_samples: null argument");
    const auto& s = signal->sig.samples;
    require(capacity >= s.size(), "mdg_signal_copy_samples: buffer too small");
    for (std::size_t i = 0; i < s.size(); ++i) {
      iq[2 * i] = s[i].real();
      iq[2 * i + 1] = s[i].imag();
    }
  });
}

void mdg_signal_free(mdg_signal* signal) { delete signal; }

mdg_synth_options mdg_synth_options_default(void) {
  const mdgait::app::SynthOptions d;
  return {d.subjects,       d.sequences_per_subject, d.sessions, d.seed, d.duration_s,
          d.sample_rate_hz, d.noise_sigma,           d.clutter,  d.force ? 1 : 0};
}

mdg_status mdg_synth_dataset(const char* out_dir, const mdg_synth_options* options, size_t* written) {
  return guarded([&] {
    require(out_dir && options, "mdg_synth_dataset: null argument");
    mdgait::app::SynthOptions o;
    o.subjects = options->subjects;
    o.sequences_per_subject = options->sequences_per_subject;
    o.sessions = options->sessions;
    o.seed = options->seed;
    o.duration_s = options->duration_s;
    o.sample_rate_hz = options->sample_rate_hz;
    o.noise_sigma = options->noise_sigma;
    o.clutter = options->clutter;
    o.force = options->force != 0;
    const std::size_t n = mdgait::app::synth_dataset(out_dir, o);
    if (written) *written = n;
  });
}

mdg_status mdg_preprocess(const char* in_dir, const char* out_dir, size_t stride, size_t hop, unsigned threads,
                          mdg_census_fn on_sequence, void* user) {
  return guarded([&] {
    require(in_dir && out_dir, "mdg_preprocess: null argument");
    mdgait::tfr::PreprocessOptions opts;
    if (stride) opts.stride = stride;
    if (hop) opts.hop = hop;
    const auto census =
        mdgait::app::preprocess(in_dir, out_dir, opts, threads ? threads : mdgait::app::worker_threads(false));
    if (on_sequence) {
      for (const auto& c : census) {
        const mdg_census e{c.subject_id, c.session, c.sequence, c.raw_samples, c.decimated_samples, c.columns,
                           c.frames};
        on_sequence(&e, user);
      }
    }
  });
}

unsigned mdg_worker_threads(int deterministic) { return mdgait::app::worker_threads(deterministic != 0); }

size_t mdg_stft_column_count(size_t samples, size_t window_len, size_t hop) {
  try {
    return mdgait::tfr::stft_column_count(samples, window_len, hop);
  } catch (...) {
    return 0;
  }
}

size_t mdg_frame_count(size_t columns, size_t frame_size, size_t stride) {
  try {
    return mdgait::tfr::frame_count(columns, frame_size, stride);
  } catch (...) {
    return 0;
  }
}

mdg_status mdg_config_create(mdg_config** out) {
  return guarded([&] {
    require(out, "mdg_config_create: null argument");
    *out = new mdg_config{};
  });
}

mdg_status mdg_config_load(mdg_config* config, const char* path) {
  return guarded([&] {
    require(config && path, "mdg_config_load: null argument");
    mdgait::app::RunConfig next = config->cfg;
    mdgait::app::apply_file(next, path);
    config->cfg = next;
  });
}

mdg_status mdg_config_set(mdg_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config && key && value, "mdg_config_set: null argument");
    mdgait::app::set_value(config->cfg, key, value);
  });
}

mdg_status mdg_config_get(const mdg_config* config, const char* key, char* buffer, size_t capacity,
                          size_t* needed) {
  std::string value;
  const mdg_status st = guarded([&] {
    require(config && key, "mdg_config_get: null argument");
    value = mdgait::app::get_value(config->cfg, key);
  });
  return st == MDG_OK ? copy_out(value, buffer, capacity, needed) : st;
}

mdg_status mdg_config_dump(const mdg_config* config, char* buffer, size_t capacity, size_t* needed) {
  std::string text;
  const mdg_status st = guarded([&] {
    require(config, "mdg_config_dump: null argument");
    text = mdgait::app::dump(config->cfg);
  });
  return st == MDG_OK ? copy_out(text, buffer, capacity, needed) : st;
}

void mdg_config_free(mdg_config* config) { delete config; }

mdg_status mdg_train(const mdg_config* config, const char* data_dir, int raw, const char* out_dir, int deterministic,
                     mdg_epoch_fn on_epoch, void* user, mdg_train_result* result) {
  return guarded([&] {
    require(config && data_dir && out_dir, "mdg_train: null argument");
    mdgait::train::EpochFn cb;
    if (on_epoch) {
      cb = [&](const mdgait::train::EpochMetrics& m, bool new_best) {
        const mdg_epoch e{m.epoch, m.lr, m.train_loss, m.train_accuracy, m.test_accuracy, new_best ? 1 : 0};
        on_epoch(&e, user);
      };
    }
    const auto out = mdgait::app::run_training(config->cfg, data_dir, raw != 0, out_dir, deterministic != 0, cb);
    if (result) {
      result->best_accuracy = out.run.best_test_accuracy;
      result->best_epoch = out.run.best_epoch;
      result->epochs_run = out.run.epochs.size();
      result->wall_time_s = out.run.wall_time_s;
      copy_path(result->metrics_path, out.metrics);
      copy_path(result->summary_path, out.summary);
      copy_path(result->checkpoint_path, out.checkpoint);
    }
  });
}

mdg_status mdg_evaluate(const mdg_config* config, const char* checkpoint, const char* data_dir, int raw,
                        const char* split, mdg_evaluation** out) {
  return guarded([&] {
    require(config && checkpoint && data_dir && out, "mdg_evaluate: null argument");
    const auto which = mdgait::app::parse_split(split ? split : "test");
    *out = new mdg_evaluation{mdgait::app::run_evaluation(config->cfg, checkpoint, data_dir, raw != 0, which)};
  });
}

double mdg_evaluation_accuracy(const mdg_evaluation* ev) { return ev ? ev->ev.accuracy : 0.0; }
size_t mdg_evaluation_correct(const mdg_evaluation* ev) { return ev ? ev->ev.correct : 0; }
size_t mdg_evaluation_total(const mdg_evaluation* ev) { return ev ? ev->ev.total : 0; }
size_t mdg_evaluation_classes(const mdg_evaluation* ev) { return ev ? ev->ev.confusion.size() : 0; }

size_t mdg_evaluation_confusion(const mdg_evaluation* ev, size_t truth, size_t predicted) {
  if (!ev || truth >= ev->ev.confusion.size() || predicted >= ev->ev.confusion.size()) return 0;
  return ev->ev.confusion[truth][predicted];
}

void mdg_evaluation_free(mdg_evaluation* ev) { delete ev; }

mdg_status mdg_model_load(const mdg_config* config, size_t num_classes, const char* checkpoint, mdg_model** out) {
  return guarded([&] {
    require(config && checkpoint && out, "mdg_model_load: null argument");
    auto cfg = config->cfg.model;
    if (num_classes) cfg.num_classes = num_classes;
    *out = new mdg_model{mdgait::model::load_model<float>(cfg, checkpoint)};
  });
}

size_t mdg_model_parameter_count(const mdg_model* model) {
  return model ? mdgait::model::parameter_count(model->model.config) : 0;
}

void mdg_model_free(mdg_model* model) { delete model; }

mdg_status mdg_render_frame(const char* cache_file, size_t frame_index, int cvd, const char* out_pgm) {
  return guarded([&] {
    require(cache_file && out_pgm, "mdg_render_frame: null argument");
    mdgait::app::render_frame(cache_file, frame_index, cvd != 0, out_pgm);
  });
}

mdg_status mdg_describe_file(const char* path, char* buffer, size_t capacity, size_t* needed) {
  std::string text;
  const mdg_status st = guarded([&] {
    require(path, "mdg_describe_file: null argument");
    text = mdgait::app::describe_file(path);
  });
  return st == MDG_OK ? copy_out(text, buffer, capacity, needed) : st;
}

}  // extern "C"
