#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pfv2/data.hpp"
#include "pfv2/model.hpp"
#include "pfv2/train.hpp"

namespace pfv2 {

/// Analytic FLOPs, one multiply-accumulate = 2 FLOPs. LayerNorm, softmax,
/// GELU, residual and positional adds, and the input DCT are not counted.
///
/// For v1_temporal the temporal layers are booked under fusion_msa and
/// ffn_time (without transform terms); for dct_only_baseline under
/// fusion_msa and ffn_freq.
struct FlopsBreakdown {
  std::uint64_t joint_embed = 0;
  std::uint64_t spatial_msa = 0;
  std::uint64_t spatial_ffn = 0;
  std::uint64_t freq_embed = 0;
  std::uint64_t fusion_msa = 0;
  std::uint64_t ffn_time = 0;  // includes the FreqMLP DCT/IDCT
  std::uint64_t ffn_freq = 0;
  std::uint64_t head = 0;

  std::uint64_t total() const;
  bool operator==(const FlopsBreakdown&) const = default;
};

FlopsBreakdown count_flops(const ModelConfig& config, Variant variant = Variant::v2);

struct LatencyStats {
  double mean_s = 0.0;
  double std_s = 0.0;
  std::size_t repeats = 0;
};

/// Times single-sample forward passes on a seeded random input after 3
/// warm-up runs. Requires repeats >= 10.
LatencyStats latency_bench(const ModelConfig& config, Variant variant, const ParamStore& params,
                           std::size_t repeats, std::uint64_t seed = 0);

struct RobustnessRow {
  std::string variant;
  double sigma = 0.0;  // pixel-equivalent units
  double mpjpe = 0.0;
  double delta_mpjpe = 0.0;
  std::uint64_t flops = 0;
};

/// Evaluates every model on noise-corrupted copies of `eval` for each sigma
/// (pixel-equivalent units, converted with kPixelToNormalized). Every model
/// sees the same noise draw, center-cropped to its F. Throws std::invalid_argument for a model with
/// no training epochs. Rows are ordered model-major.
std::vector<RobustnessRow> robustness_sweep(const std::vector<TrainedModel>& models,
                                            const std::vector<SkeletonSample>& eval,
                                            const std::vector<double>& sigmas_px, std::uint64_t noise_seed,
                                            bool flip_test = false);

/// 0, 1, ..., 10.
std::vector<double> default_sigma_grid();

struct SpeedRow {
  std::string config;
  std::size_t F = 0, f = 0, n = 0;
  std::uint64_t flops = 0;
  double latency_mean_s = 0.0;
  double latency_std_s = 0.0;
  double mpjpe = 0.0;
  double pmpjpe = 0.0;
};

/// One row per model, sorted by FLOPs. `eval` samples are center-cropped to
/// each model's F, so they must be at least as long as the longest model.
std::vector<SpeedRow> speed_accuracy_sweep(const std::vector<TrainedModel>& models,
                                           const std::vector<SkeletonSample>& eval, std::size_t repeats,
                                           std::uint64_t seed = 0);

/// Exact headers: `variant,sigma,mpjpe,delta_mpjpe` and
/// `config,F,f,n,flops,latency_mean_s,latency_std_s,mpjpe,pmpjpe`.
void write_robustness_csv(const std::vector<RobustnessRow>& rows, std::ostream& out);
void write_speed_csv(const std::vector<SpeedRow>& rows, std::ostream& out);

/// `frame,original,keep_<n>...`: a trajectory and its low-pass reconstructions.
void write_dct_inspect_csv(std::span<const double> trajectory, const std::vector<std::size_t>& keeps,
                           std::ostream& out);

}  // namespace pfv2
