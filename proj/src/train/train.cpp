#include "mdgait/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "mdgait/error.hpp"
#include "mdgait/rng.hpp"

namespace mdgait::train {

const char* to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::both: return "both";
    case StreamMode::spectrogram_only: return "spectrogram";
    case StreamMode::cvd_only: return "cvd";
  }
  return "both";
}

StreamMode parse_stream_mode(const std::string& text) {
  if (text == "both") return StreamMode::both;
  if (text == "spectrogram") return StreamMode::spectrogram_only;
  if (text == "cvd") return StreamMode::cvd_only;
  throw ConfigError("stream must be one of both, spectrogram, cvd (got \"" + text + "\")");
}

void TrainConfig::validate() const {
  if (!(lr_initial >= 0.0)) throw ConfigError("lr_initial must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step >= total_steps) {
    throw InvalidArgument("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  }
  const double total = static_cast<double>(total_steps);
  const double warm = cfg.warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (s < warm) return cfg.lr_initial * s / warm;
  return cfg.lr_initial * (total - s) / (total - warm);
}

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
                double weight_decay) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size())) {
    throw ShapeError("sgd_update: parameter, gradient and velocity sizes differ");
  }
  const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T(0) : grad[i];
    velocity[i] = m * velocity[i] + g + wd * param[i];
    param[i] -= rate * velocity[i];
  }
}

template <typename T>
SgdMomentum<T>::SgdMomentum(std::vector<Tensor<T>> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
}

template <typename T>
void SgdMomentum<T>::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    sgd_update<T>(params_[i].data(), params_[i].grad(), velocity_[i], lr, momentum_, weight_decay_);
  }
}

template <typename T>
void SgdMomentum<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
RunMetrics fit(const std::vector<Tensor<T>>& params, std::size_t train_size, const BatchFn<T>& batch_fn,
               const EvalFn& eval_fn, const TrainConfig& cfg, const EpochFn& on_epoch) {
  cfg.validate();
  if (train_size == 0) throw InvalidArgument("fit: empty training set");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t batches = (train_size + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  SgdMomentum<T> opt(params, cfg.momentum, cfg.weight_decay);

  RunMetrics run;
  std::size_t step = 0;
  std::vector<std::size_t> order(train_size);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "shuffle", {epoch}));
    for (std::size_t i = train_size - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    EpochMetrics em;
    em.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(train_size, lo + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const double lr = lr_at(step, total_steps, cfg);
      opt.zero_grad();
      BatchResult<T> res = batch_fn(idx);
      ad::backward(res.loss);
      opt.step(lr);
      loss_sum += static_cast<double>(res.loss.item()) * static_cast<double>(idx.size());
      correct += res.correct;
      em.lr = lr;
      ++step;
    }
    opt.zero_grad();
    em.train_loss = loss_sum / static_cast<double>(train_size);
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_size);
    em.test_accuracy = eval_fn ? eval_fn() : 0.0;
    const bool new_best = epoch == 1 || em.test_accuracy > run.best_test_accuracy;
    if (new_best) {
      run.best_test_accuracy = em.test_accuracy;
      run.best_epoch = epoch;
    }
    run.epochs.push_back(em);
    if (on_epoch) on_epoch(em, new_best);
  }
  run.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

Evaluation score(std::span<const std::size_t> truth, std::span<const std::size_t> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) throw InvalidArgument("score: truth and prediction counts differ");
  Evaluation ev;
  ev.total = truth.size();
  ev.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw InvalidArgument("score: label out of range");
    ++ev.confusion[truth[i]][predicted[i]];
    if (truth[i] == predicted[i]) ++ev.correct;
  }
  ev.accuracy = ev.total == 0 ? 0.0 : static_cast<double>(ev.correct) / static_cast<double>(ev.total);
  return ev;
}

template <typename T>
Tensor<T> batch_images(std::span<const tfr::FrameSample> frames, std::span<const std::size_t> indices, bool cvd,
                       std::size_t image_size, bool zero) {
  const std::size_t per = image_size * image_size * 3;
  std::vector<T> data(indices.size() * per, T(0));
  if (!zero) {
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto& f = frames[indices[b]];
      const tfr::Image img = tfr::to_model_input(cvd ? f.cvd : f.spec, image_size);
      std::copy(img.data.begin(), img.data.end(), data.begin() + static_cast<std::ptrdiff_t>(b * per));
    }
  }
  return Tensor<T>::from_data({indices.size(), image_size, image_size, 3}, std::move(data));
}

namespace {

template <typename T>
std::pair<Tensor<T>, Tensor<T>> stream_inputs(std::span<const tfr::FrameSample> frames,
                                              std::span<const std::size_t> idx, std::size_t size, StreamMode mode) {
  return {batch_images<T>(frames, idx, false, size, mode == StreamMode::cvd_only),
          batch_images<T>(frames, idx, true, size, mode == StreamMode::spectrogram_only)};
}

}  // namespace

template <typename T>
Evaluation evaluate(const model::AdsVitModel<T>& model, std::span<const tfr::FrameSample> frames, StreamMode stream,
                    std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("evaluate: batch size must be positive");
  std::vector<std::size_t> truth, pred;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < frames.size(); lo += batch_size) {
    idx.resize(std::min(batch_size, frames.size() - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const auto [xs, xc] = stream_inputs<T>(frames, idx, model.config.vit.image_size, stream);
    const auto p = model::predict(model, xs, xc);
    pred.insert(pred.end(), p.begin(), p.end());
    for (std::size_t i : idx) truth.push_back(frames[i].label);
  }
  return score(truth, pred, model.config.num_classes);
}

template <typename T>
RunMetrics train_model(model::AdsVitModel<T>& model, const tfr::Dataset& data, const TrainConfig& cfg,
                       const EpochFn& on_epoch) {
  if (data.train.empty()) throw InvalidArgument("train: empty training set");
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& f : *split) {
      if (f.label >= model.config.num_classes) {
        throw InvalidArgument("train: label " + std::to_string(f.label) + " exceeds num_classes " +
                              std::to_string(model.config.num_classes));
      }
    }
  }
  const std::size_t size = model.config.vit.image_size;
  const std::span<const tfr::FrameSample> train_frames(data.train);
  BatchFn<T> batch_fn = [&](std::span<const std::size_t> idx) {
    const auto [xs, xc] = stream_inputs<T>(train_frames, idx, size, cfg.stream);
    const auto logits = model::forward(model, xs, xc);
    std::vector<std::size_t> labels;
    for (std::size_t i : idx) labels.push_back(train_frames[i].label);
    BatchResult<T> res;
    res.loss = ad::cross_entropy_logits(logits, labels);
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (model::argmax(logits.data().subspan(b * classes, classes)) == labels[b]) ++res.correct;
    }
    return res;
  };
  EvalFn eval_fn = [&]() { return data.test.empty() ? 0.0 : evaluate(model, data.test, cfg.stream).accuracy; };
  return fit<T>(model.parameters(), data.train.size(), batch_fn, eval_fn, cfg, on_epoch);
}

#define MDGAIT_INSTANTIATE(T)                                                                                     \
  template void sgd_update<T>(std::span<T>, std::span<const T>, std::span<T>, double, double, double);           \
  template class SgdMomentum<T>;                                                                                  \
  template RunMetrics fit<T>(const std::vector<Tensor<T>>&, std::size_t, const BatchFn<T>&, const EvalFn&,        \
                             const TrainConfig&, const EpochFn&);                                                 \
  template Tensor<T> batch_images<T>(std::span<const tfr::FrameSample>, std::span<const std::size_t>, bool,        \
                                     std::size_t, bool);                                                          \
  template Evaluation evaluate<T>(const model::AdsVitModel<T>&, std::span<const tfr::FrameSample>, StreamMode,     \
                                  std::size_t);                                                                   \
  template RunMetrics train_model<T>(model::AdsVitModel<T>&, const tfr::Dataset&, const TrainConfig&,             \
                                     const EpochFn&);

MDGAIT_INSTANTIATE(float)
MDGAIT_INSTANTIATE(double)

#undef MDGAIT_INSTANTIATE

}  // namespace mdgait::train
