#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfv2/data.hpp"
#include "pfv2/metrics.hpp"
#include "pfv2/model.hpp"
#include "pfv2/params.hpp"

namespace pfv2 {

struct TrainSchedule {
  std::size_t epochs = 80;
  double lr0 = 8e-4;
  double lr_decay = 0.99;  // per epoch
  double weight_decay = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  /// Flip each training sample with probability 0.5.
  bool flip_augment = true;

  /// lr0 * lr_decay^epoch, epochs counted from 0.
  double lr_at(std::size_t epoch) const;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t epoch, std::size_t batch, const std::string& what);
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// [B, F, J, 2] input tensor and [B, J, 3] target tensor for samples[idx...].
Tensor stack_inputs(const std::vector<SkeletonSample>& samples, const std::vector<std::size_t>& idx);
Tensor stack_targets(const std::vector<SkeletonSample>& samples, const std::vector<std::size_t>& idx);

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Mini-batch AdamW on the MPJPE loss. Updates `params` in place and returns
/// the mean training loss of every epoch.
std::vector<double> train(ParamStore& params, const std::vector<SkeletonSample>& dataset,
                          const TrainSchedule& schedule, const ModelConfig& config, Variant variant,
                          const EpochCallback& on_epoch = {});

/// Predicted poses, one per sample. With `flip_test` the prediction is
/// averaged with the un-flipped prediction for the mirrored input.
std::vector<Pose> predict(const ParamStore& params, const ModelConfig& config, Variant variant,
                          const std::vector<SkeletonSample>& samples, bool flip_test = false,
                          std::size_t batch_size = 64);

MetricReport evaluate(const ParamStore& params, const ModelConfig& config, Variant variant,
                      const std::vector<SkeletonSample>& samples, bool flip_test = false);

/// A parameter set together with what it was built from.
struct TrainedModel {
  std::string id;
  ModelConfig config;
  Variant variant = Variant::v2;
  ParamStore params;
  std::size_t epochs_trained = 0;
};

/// CSV with header `epoch,loss`, epochs numbered from 1.
void write_loss_csv(const std::vector<double>& losses, std::ostream& out);

}  // namespace pfv2
