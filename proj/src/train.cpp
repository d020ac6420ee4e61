#include "pfv2/train.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>

#include "pfv2/optim.hpp"
#include "pfv2/rng.hpp"

namespace pfv2 {

double TrainSchedule::lr_at(std::size_t epoch) const {
  return lr0 * std::pow(lr_decay, static_cast<double>(epoch));
}

TrainingError::TrainingError(std::size_t epoch, std::size_t batch, const std::string& what)
    : std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                         ": " + what),
      epoch_(epoch),
      batch_(batch) {}

namespace {

void check_uniform(const std::vector<SkeletonSample>& samples, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("stack: empty index list");
  const SkeletonSample& first = samples.at(idx.front());
  for (std::size_t i : idx) {
    const SkeletonSample& s = samples.at(i);
    if (s.frames != first.frames || s.joints != first.joints) {
      throw std::invalid_argument("stack: samples differ in F or J");
    }
  }
}

Tensor stack(const std::vector<const SkeletonSample*>& batch, bool inputs) {
  const SkeletonSample& first = *batch.front();
  const std::size_t B = batch.size(), F = first.frames, J = first.joints;
  const std::size_t per = inputs ? F * J * 2 : J * 3;
  std::vector<double> v;
  v.reserve(B * per);
  for (const SkeletonSample* s : batch) {
    const std::vector<double>& src = inputs ? s->seq2d : s->pose3d;
    v.insert(v.end(), src.begin(), src.end());
  }
  return inputs ? Tensor::from({B, F, J, 2}, std::move(v)) : Tensor::from({B, J, 3}, std::move(v));
}

std::vector<const SkeletonSample*> pointers(const std::vector<SkeletonSample>& samples,
                                            const std::vector<std::size_t>& idx) {
  check_uniform(samples, idx);
  std::vector<const SkeletonSample*> out;
  for (std::size_t i : idx) out.push_back(&samples[i]);
  return out;
}

}  // namespace

Tensor stack_inputs(const std::vector<SkeletonSample>& samples, const std::vector<std::size_t>& idx) {
  return stack(pointers(samples, idx), true);
}

Tensor stack_targets(const std::vector<SkeletonSample>& samples, const std::vector<std::size_t>& idx) {
  return stack(pointers(samples, idx), false);
}

std::vector<double> train(ParamStore& params, const std::vector<SkeletonSample>& dataset,
                          const TrainSchedule& schedule, const ModelConfig& config, Variant variant,
                          const EpochCallback& on_epoch) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (schedule.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  config.validate();

  std::vector<SkeletonSample> flipped;
  if (schedule.flip_augment) {
    flipped.reserve(dataset.size());
    for (const SkeletonSample& s : dataset) flipped.push_back(horizontal_flip(s));
  }
  std::vector<Tensor> tensors = params.tensors();
  OptimizerState opt;
  opt.weight_decay = schedule.weight_decay;
  Rng rng(schedule.seed);
  std::vector<std::size_t> order(dataset.size());
  std::vector<double> curve;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    opt.lr = schedule.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      std::vector<const SkeletonSample*> batch;
      for (std::size_t k = start; k < end; ++k) {
        const bool flip = schedule.flip_augment && rng.uniform() < 0.5;
        batch.push_back(flip ? &flipped[order[k]] : &dataset[order[k]]);
      }
      params.zero_grad();
      Tensor loss = mpjpe_loss(forward(stack(batch, true), params, config, variant), stack(batch, false));
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingError(epoch, batch_index, "non-finite loss");
      backward(loss);
      adamw_step(tensors, opt);
      total += value * static_cast<double>(end - start);
    }
    curve.push_back(total / static_cast<double>(dataset.size()));
    if (on_epoch) on_epoch(epoch, curve.back());
  }
  return curve;
}

std::vector<Pose> predict(const ParamStore& params, const ModelConfig& config, Variant variant,
                          const std::vector<SkeletonSample>& samples, bool flip_test, std::size_t batch_size) {
  NoGradGuard no_grad;
  std::vector<Pose> out;
  out.reserve(samples.size());
  if (samples.empty()) return out;
  const std::vector<std::size_t> mirror = flip_test ? samples.front().meta->mirror_map() : std::vector<std::size_t>{};
  const std::size_t J = config.joints;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const SkeletonSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const Tensor y = forward(stack(batch, true), params, config, variant);
    std::vector<double> yf;
    if (flip_test) {
      std::vector<SkeletonSample> mirrored;
      for (const SkeletonSample* s : batch) mirrored.push_back(horizontal_flip(*s));
      std::vector<const SkeletonSample*> mb;
      for (const SkeletonSample& s : mirrored) mb.push_back(&s);
      const Tensor t = forward(stack(mb, true), params, config, variant);
      yf.assign(t.data().begin(), t.data().end());
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Pose p(y.data().begin() + static_cast<std::ptrdiff_t>(b * J * 3),
             y.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * J * 3));
      if (flip_test) {
        for (std::size_t j = 0; j < J; ++j) {
          const double* q = &yf[(b * J + mirror[j]) * 3];
          p[3 * j + 0] = 0.5 * (p[3 * j + 0] - q[0]);
          p[3 * j + 1] = 0.5 * (p[3 * j + 1] + q[1]);
          p[3 * j + 2] = 0.5 * (p[3 * j + 2] + q[2]);
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

MetricReport evaluate(const ParamStore& params, const ModelConfig& config, Variant variant,
                      const std::vector<SkeletonSample>& samples, bool flip_test) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<Pose> gts;
  gts.reserve(samples.size());
  for (const SkeletonSample& s : samples) gts.push_back(s.pose3d);
  return compute_metrics(predict(params, config, variant, samples, flip_test), gts);
}

void write_loss_csv(const std::vector<double>& losses, std::ostream& out) {
  out << "epoch,loss\n" << std::setprecision(17);
  for (std::size_t e = 0; e < losses.size(); ++e) out << e + 1 << ',' << losses[e] << '\n';
}

}  // namespace pfv2
