#ifndef MDGAIT_H
#define MDGAIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MDG_API __declspec(dllexport)
#else
#define MDG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mdg_status {
  MDG_OK = 0,
  MDG_INVALID_ARGUMENT = 1,
  MDG_FORMAT = 2,
  MDG_IO = 3,
  MDG_SHAPE = 4,
  MDG_CONFIG = 5,
  MDG_INTERNAL = 6
} mdg_status;

typedef struct mdg_signal mdg_signal;
typedef struct mdg_config mdg_config;
typedef struct mdg_model mdg_model;

/* Message of the last failing call on this thread; "" after success. */
MDG_API const char* mdg_last_error(void);
MDG_API const char* mdg_status_name(mdg_status status);
MDG_API const char* mdg_version(void);

/* Raw I/Q signals (.mdrs). */
typedef struct mdg_gait_params {
  double torso_velocity_mps;
  double cadence_hz;
  size_t part_count; /* body parts, torso first */
  const double* part_amplitudes_mps;
  const double* part_phases_rad;
  const double* part_reflectivities;
  double doppler_scale_hz_per_mps;
} mdg_gait_params;

MDG_API mdg_status mdg_signal_load(const char* path, mdg_signal** out);
MDG_API mdg_status mdg_signal_save(const mdg_signal* signal, const char* path);
MDG_API mdg_status mdg_signal_synth(const mdg_gait_params* params, double duration_s, double sample_rate_hz,
                                    double noise_sigma, uint64_t seed, mdg_signal** out);
MDG_API mdg_status mdg_signal_decimate(const mdg_signal* signal, size_t factor, mdg_signal** out);
MDG_API size_t mdg_signal_length(const mdg_signal* signal);
MDG_API double mdg_signal_rate(const mdg_signal* signal);
/* Returns 0 and leaves *subject untouched when the signal is unlabeled. */
MDG_API int mdg_signal_subject(const mdg_signal* signal, uint32_t* subject);
/* Copies interleaved I, Q pairs; iq must hold 2 * capacity floats. */
MDG_API mdg_status mdg_signal_copy_samples(const mdg_signal* signal, float* iq, size_t capacity);
MDG_API void mdg_signal_free(mdg_signal* signal);

/* Synthetic dataset. */
typedef struct mdg_synth_options {
  uint32_t subjects;
  uint32_t sequences_per_subject;
  uint32_t sessions;
  uint64_t seed;
  double duration_s;
  double sample_rate_hz;
  double noise_sigma;
  double clutter;
  int force;
} mdg_synth_options;

MDG_API mdg_synth_options mdg_synth_options_default(void);
MDG_API mdg_status mdg_synth_dataset(const char* out_dir, const mdg_synth_options* options, size_t* written);

/* Preprocessing raw sequences into frame caches (.mdtf). */
typedef struct mdg_census {
  uint32_t subject_id;
  uint32_t session;
  uint32_t sequence;
  size_t raw_samples;
  size_t decimated_samples;
  size_t columns;
  size_t frames;
} mdg_census;

typedef void (*mdg_census_fn)(const mdg_census* entry, void* user);

/* stride or hop of 0 selects the default. threads of 0 uses mdg_worker_threads(0). */
MDG_API mdg_status mdg_preprocess(const char* in_dir, const char* out_dir, size_t stride, size_t hop,
                                  unsigned threads, mdg_census_fn on_sequence, void* user);
MDG_API unsigned mdg_worker_threads(int deterministic);
MDG_API size_t mdg_stft_column_count(size_t samples, size_t window_len, size_t hop);
MDG_API size_t mdg_frame_count(size_t columns, size_t frame_size, size_t stride);

/* Run configuration: flat key = value pairs. */
MDG_API mdg_status mdg_config_create(mdg_config** out);
MDG_API mdg_status mdg_config_load(mdg_config* config, const char* path);
MDG_API mdg_status mdg_config_set(mdg_config* config, const char* key, const char* value);
/* Text out-parameters: *needed gets the length without terminator. A NULL buffer only queries the length;
   a buffer shorter than needed + 1 yields MDG_INVALID_ARGUMENT. */
MDG_API mdg_status mdg_config_get(const mdg_config* config, const char* key, char* buffer, size_t capacity,
                                  size_t* needed);
MDG_API mdg_status mdg_config_dump(const mdg_config* config, char* buffer, size_t capacity, size_t* needed);
MDG_API void mdg_config_free(mdg_config* config);

/* Training. */
typedef struct mdg_epoch {
  size_t epoch;
  double lr;
  double train_loss;
  double train_accuracy;
  double test_accuracy;
  int new_best;
} mdg_epoch;

typedef void (*mdg_epoch_fn)(const mdg_epoch* epoch, void* user);

typedef struct mdg_train_result {
  double best_accuracy;
  size_t best_epoch;
  size_t epochs_run;
  double wall_time_s;
  char metrics_path[1024];
  char summary_path[1024];
  char checkpoint_path[1024];
} mdg_train_result;

/* raw != 0 reads .mdrs files and preprocesses in memory; otherwise data_dir holds .mdtf caches. */
MDG_API mdg_status mdg_train(const mdg_config* config, const char* data_dir, int raw, const char* out_dir,
                             int deterministic, mdg_epoch_fn on_epoch, void* user, mdg_train_result* result);

/* Evaluation. split is "train", "test" or "all". */
typedef struct mdg_evaluation mdg_evaluation;

MDG_API mdg_status mdg_evaluate(const mdg_config* config, const char* checkpoint, const char* data_dir, int raw,
                                const char* split, mdg_evaluation** out);
MDG_API double mdg_evaluation_accuracy(const mdg_evaluation* ev);
MDG_API size_t mdg_evaluation_correct(const mdg_evaluation* ev);
MDG_API size_t mdg_evaluation_total(const mdg_evaluation* ev);
MDG_API size_t mdg_evaluation_classes(const mdg_evaluation* ev);
/* Frames of class truth predicted as predicted; 0 when out of range. */
MDG_API size_t mdg_evaluation_confusion(const mdg_evaluation* ev, size_t truth, size_t predicted);
MDG_API void mdg_evaluation_free(mdg_evaluation* ev);

MDG_API mdg_status mdg_model_load(const mdg_config* config, size_t num_classes, const char* checkpoint,
                                  mdg_model** out);
MDG_API size_t mdg_model_parameter_count(const mdg_model* model);
MDG_API void mdg_model_free(mdg_model* model);

/* Utilities. */
MDG_API mdg_status mdg_render_frame(const char* cache_file, size_t frame_index, int cvd, const char* out_pgm);
MDG_API mdg_status mdg_describe_file(const char* path, char* buffer, size_t capacity, size_t* needed);

#ifdef __cplusplus
}
#endif

#endif
