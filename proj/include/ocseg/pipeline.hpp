// Training loop and evaluation driver shared by the command-line tool and
// the end-to-end tests: batch sampling + augmentation, deep-supervised loss
// with optional hard mining, poly-decayed SGD, TSV progress logging.
#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <vector>

#include "ocseg/config.hpp"
#include "ocseg/dataset.hpp"
#include "ocseg/inference.hpp"
#include "ocseg/metrics.hpp"
#include "ocseg/model.hpp"
#include "ocseg/training.hpp"

namespace ocseg {

template <typename T>
MiouReport run_eval(SegModel<T>& model, const std::vector<SegmentationSample<T>>& data,
                    const std::vector<double>& scales, bool flip, int ignore_label) {
  if (data.empty()) throw DataError("evaluation set is empty");
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : data) {
    auto probs = ms_flip_infer(model, sample_to_input(s), scales, flip);
    cm.accumulate(s.labels, argmax_channels(probs), ignore_label);
  }
  return miou(cm);
}

template <typename T>
struct TrainProgress {
  int64_t iteration = 0;  // one past the last completed iteration
  double last_loss = 0;
  double last_val_miou = -1;  // -1 until a validation pass has run
};

// Runs iterations [start_iter, stop_iter) of the schedule in cfg. The same
// rng drives batch sampling and augmentation, so a checkpointed rng resumes
// the exact stream. Log lines are tab-separated:
//   train\t<iter>\t<lr>\t<loss>   and   val\t<iter>\t<miou>
template <typename T>
TrainProgress<T> run_train(const RunConfig& cfg, SegModel<T>& model,
                           SgdOptimizer<T>& opt,
                           const std::vector<SegmentationSample<T>>& train,
                           const std::vector<SegmentationSample<T>>& val,
                           std::mt19937& rng, int64_t start_iter, int64_t stop_iter,
                           std::ostream* log) {
  cfg.validate();
  if (train.empty()) throw DataError("training set is empty");
  if (start_iter < 0 || stop_iter > cfg.schedule.max_iter || start_iter > stop_iter)
    throw ContractError("iteration range outside the configured schedule");

  std::vector<T> class_weights;
  if (cfg.class_balance) {
    std::vector<std::vector<int>> maps;
    maps.reserve(train.size());
    for (const auto& s : train) maps.push_back(s.labels);
    class_weights = class_balance_weights<T>(maps, cfg.num_classes, cfg.ignore_label);
  }

  auto params = model.parameters();
  if (opt.velocity.empty()) opt.init(params);

  TrainProgress<T> progress;
  progress.iteration = start_iter;
  const int64_t batch_pixels =
      static_cast<int64_t>(cfg.batch_size) * cfg.height * cfg.width;
  const OhemConfig ohem = cfg.ohem_config(batch_pixels);

  for (int64_t iter = start_iter; iter < stop_iter; ++iter) {
    auto batch = Tensor<T>::zeros({cfg.batch_size, 3, cfg.height, cfg.width});
    std::vector<int> labels(static_cast<size_t>(batch_pixels));
    const size_t plane = static_cast<size_t>(3) * cfg.height * cfg.width;
    for (int b = 0; b < cfg.batch_size; ++b) {
      std::uniform_int_distribution<size_t> pick(0, train.size() - 1);
      SegmentationSample<T> s = train[pick(rng)];
      if (cfg.augment) s = augment(s, rng, cfg.ignore_label);
      if (s.height != cfg.height || s.width != cfg.width)
        throw DataError("sample size does not match the configured crop");
      std::copy(s.image.begin(), s.image.end(),
                batch.data().begin() + static_cast<int64_t>(b) * plane);
      std::copy(s.labels.begin(), s.labels.end(),
                labels.begin() + static_cast<size_t>(b) * cfg.height * cfg.width);
    }

    auto out = model.forward(batch, /*training=*/true);
    auto loss = deep_supervised_loss(out.main_logits, out.aux_logits, labels,
                                     class_weights, cfg.ignore_label, cfg.supervision,
                                     cfg.ohem ? &ohem : nullptr);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value))
      throw NumericError("training loss became non-finite at iteration " +
                         std::to_string(iter));
    model.zero_grads();
    loss.backward();
    const double lr = poly_lr(iter, cfg.schedule);
    opt.step(params, static_cast<T>(lr), static_cast<T>(cfg.schedule.momentum),
             static_cast<T>(cfg.schedule.weight_decay));

    progress.iteration = iter + 1;
    progress.last_loss = loss_value;
    if (log && cfg.log_every > 0 &&
        (iter % cfg.log_every == 0 || iter + 1 == stop_iter))
      (*log) << "train\t" << iter << "\t" << std::setprecision(10) << lr << "\t"
             << std::setprecision(10) << loss_value << "\n";

    const bool last = iter + 1 == stop_iter;
    if (!val.empty() &&
        ((cfg.val_every > 0 && (iter + 1) % cfg.val_every == 0) || last)) {
      auto report = run_eval(model, val, cfg.eval_scales, cfg.eval_flip,
                             cfg.ignore_label);
      progress.last_val_miou = report.mean_iou;
      if (log)
        (*log) << "val\t" << iter + 1 << "\t" << std::setprecision(10)
               << report.mean_iou << "\n";
    }
  }
  return progress;
}

}  // namespace ocseg
