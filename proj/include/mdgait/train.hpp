#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdgait/model.hpp"
#include "mdgait/tensor.hpp"
#include "mdgait/tfr.hpp"

namespace mdgait::train {

using ad::Tensor;

// Stream ablation: the disabled stream receives an all-zero image.
enum class StreamMode { both, spectrogram_only, cvd_only };

const char* to_string(StreamMode mode);
StreamMode parse_stream_mode(const std::string& text);

struct TrainConfig {
  double lr_initial = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  std::size_t batch_size = 128;
  std::size_t epochs = 500;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;
  StreamMode stream = StreamMode::both;

  void validate() const;
};

// Linear warmup from 0 to lr_initial over warmup_fraction * total steps, then
// linear decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
                double weight_decay);

template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor<T>> params, double momentum, double weight_decay);

  // Parameters without an accumulated gradient are treated as grad = 0.
  void step(double lr);
  void zero_grad();
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate used by the last step of the epoch
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  double wall_time_s = 0.0;
  double best_test_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

template <typename T>
struct BatchResult {
  Tensor<T> loss;
  std::size_t correct = 0;
};

template <typename T>
using BatchFn = std::function<BatchResult<T>(std::span<const std::size_t> indices)>;
using EvalFn = std::function<double()>;
using EpochFn = std::function<void(const EpochMetrics&, bool new_best)>;

// Generic loop: seeded shuffle per epoch, batches in order (last partial batch
// kept), backward, SGD step with the scheduled rate, then evaluation.
template <typename T>
RunMetrics fit(const std::vector<Tensor<T>>& params, std::size_t train_size, const BatchFn<T>& batch_fn,
               const EvalFn& eval_fn, const TrainConfig& cfg, const EpochFn& on_epoch = {});

struct Evaluation {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Evaluation score(std::span<const std::size_t> truth, std::span<const std::size_t> predicted, std::size_t classes);

// [batch, S, S, 3] model inputs for the selected frames. `cvd` picks the
// stream; `zero` yields an all-zero batch of the same shape.
template <typename T>
Tensor<T> batch_images(std::span<const tfr::FrameSample> frames, std::span<const std::size_t> indices, bool cvd,
                       std::size_t image_size, bool zero = false);

template <typename T>
Evaluation evaluate(const model::AdsVitModel<T>& model, std::span<const tfr::FrameSample> frames,
                    StreamMode stream = StreamMode::both, std::size_t batch_size = 64);

template <typename T>
RunMetrics train_model(model::AdsVitModel<T>& model, const tfr::Dataset& data, const TrainConfig& cfg,
                       const EpochFn& on_epoch = {});

}  // namespace mdgait::train
