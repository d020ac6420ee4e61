#include "pfv2/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>

#include "pfv2/dct.hpp"
#include "pfv2/rng.hpp"

namespace pfv2 {

std::uint64_t FlopsBreakdown::total() const {
  return joint_embed + spatial_msa + spatial_ffn + freq_embed + fusion_msa + ffn_time + ffn_freq + head;
}

namespace {

using u64 = std::uint64_t;

u64 linear_flops(u64 T, u64 a, u64 b) { return 2 * T * a * b; }
u64 msa_flops(u64 T, u64 D) { return 8 * T * D * D + 4 * T * T * D; }
u64 ffn_flops(u64 T, u64 D, u64 hidden) { return 4 * T * D * hidden; }

}  // namespace

FlopsBreakdown count_flops(const ModelConfig& config, Variant variant) {
  config.validate();
  const u64 J = config.joints, c = config.embed_dim, D = config.token_dim();
  const u64 f = config.central_frames, n = config.coeffs;
  const u64 Ls = config.spatial_layers, Lf = config.fusion_layers;
  const u64 hs = config.spatial_hidden(), hf = config.fusion_hidden();
  FlopsBreakdown b;
  auto spatial = [&](u64 frames) {
    b.joint_embed = frames * linear_flops(J, 2, c);
    b.spatial_msa = Ls * frames * msa_flops(J, c);
    b.spatial_ffn = Ls * frames * ffn_flops(J, c, hs);
  };
  u64 T = 0;
  switch (variant) {
    case Variant::v2:
      spatial(f);
      b.freq_embed = linear_flops(n, 2 * J, D);
      T = f + n;
      b.fusion_msa = Lf * msa_flops(T, D);
      b.ffn_time = Lf * (ffn_flops(f, D, hf) + 2 * (2 * f * f * D));
      b.ffn_freq = Lf * ffn_flops(n, D, hf);
      break;
    case Variant::v1_temporal:
      spatial(config.frames);
      T = config.frames;
      b.fusion_msa = Lf * msa_flops(T, D);
      b.ffn_time = Lf * ffn_flops(T, D, hf);
      break;
    case Variant::dct_only_baseline:
      b.freq_embed = linear_flops(n, 2 * J, D);
      T = n;
      b.fusion_msa = Lf * msa_flops(T, D);
      b.ffn_freq = Lf * ffn_flops(T, D, hf);
      break;
  }
  b.head = 2 * T * D + linear_flops(1, D, 3 * J);
  return b;
}

LatencyStats latency_bench(const ModelConfig& config, Variant variant, const ParamStore& params,
                           std::size_t repeats, std::uint64_t seed) {
  if (repeats < 10) throw std::invalid_argument("latency_bench: repeats must be >= 10");
  Rng rng(seed);
  std::vector<double> x(config.frames * config.joints * 2);
  for (double& v : x) v = rng.normal(0.0, 0.3);
  const Tensor input = Tensor::from({config.frames, config.joints, 2}, std::move(x));
  NoGradGuard no_grad;
  for (int i = 0; i < 3; ++i) forward(input, params, config, variant);
  std::vector<double> times;
  times.reserve(repeats);
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = forward(input, params, config, variant);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  LatencyStats s;
  s.repeats = repeats;
  for (double t : times) s.mean_s += t;
  s.mean_s /= static_cast<double>(repeats);
  double var = 0.0;
  for (double t : times) var += (t - s.mean_s) * (t - s.mean_s);
  s.std_s = std::sqrt(var / static_cast<double>(repeats - 1));
  return s;
}

std::vector<double> default_sigma_grid() {
  std::vector<double> g;
  for (int s = 0; s <= 10; ++s) g.push_back(s);
  return g;
}

namespace {

std::vector<SkeletonSample> crop_all(const std::vector<SkeletonSample>& samples, std::size_t frames) {
  std::vector<SkeletonSample> out;
  out.reserve(samples.size());
  for (const SkeletonSample& s : samples) out.push_back(s.frames == frames ? s : center_crop(s, frames));
  return out;
}

}  // namespace

std::vector<RobustnessRow> robustness_sweep(const std::vector<TrainedModel>& models,
                                            const std::vector<SkeletonSample>& eval,
                                            const std::vector<double>& sigmas_px, std::uint64_t noise_seed,
                                            bool flip_test) {
  if (eval.empty()) throw std::invalid_argument("robustness_sweep: empty eval set");
  for (const TrainedModel& m : models) {
    if (m.epochs_trained == 0) {
      throw std::invalid_argument("robustness_sweep: model '" + m.id + "' has not been trained");
    }
  }
  std::vector<std::vector<SkeletonSample>> noisy;
  for (std::size_t k = 0; k < sigmas_px.size(); ++k) {
    std::vector<SkeletonSample> set;
    set.reserve(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const std::uint64_t seed = Rng(noise_seed ^ (0x9E3779B97F4A7C15ULL * (i + 1))).next_u64();
      set.push_back(add_noise(eval[i], {sigmas_px[k] * kPixelToNormalized, std::nullopt, seed}));
    }
    noisy.push_back(std::move(set));
  }
  std::vector<RobustnessRow> rows;
  for (const TrainedModel& m : models) {
    const double clean = evaluate(m.params, m.config, m.variant, crop_all(eval, m.config.frames), flip_test).mpjpe;
    const std::uint64_t flops = count_flops(m.config, m.variant).total();
    for (std::size_t k = 0; k < sigmas_px.size(); ++k) {
      const double err = sigmas_px[k] == 0.0 ? clean
                                              : evaluate(m.params, m.config, m.variant,
                                                         crop_all(noisy[k], m.config.frames), flip_test)
                                                    .mpjpe;
      rows.push_back({m.id, sigmas_px[k], err, err - clean, flops});
    }
  }
  return rows;
}

std::vector<SpeedRow> speed_accuracy_sweep(const std::vector<TrainedModel>& models,
                                           const std::vector<SkeletonSample>& eval, std::size_t repeats,
                                           std::uint64_t seed) {
  if (eval.empty()) throw std::invalid_argument("speed_accuracy_sweep: empty eval set");
  std::vector<SpeedRow> rows;
  for (const TrainedModel& m : models) {
    const MetricReport report = evaluate(m.params, m.config, m.variant, crop_all(eval, m.config.frames));
    const LatencyStats lat = latency_bench(m.config, m.variant, m.params, repeats, seed);
    rows.push_back({m.id, m.config.frames, m.config.central_frames, m.config.coeffs,
                    count_flops(m.config, m.variant).total(), lat.mean_s, lat.std_s, report.mpjpe, report.pmpjpe});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SpeedRow& a, const SpeedRow& b) { return a.flops < b.flops; });
  return rows;
}

void write_robustness_csv(const std::vector<RobustnessRow>& rows, std::ostream& out) {
  out << "variant,sigma,mpjpe,delta_mpjpe\n" << std::setprecision(17);
  for (const RobustnessRow& r : rows) out << r.variant << ',' << r.sigma << ',' << r.mpjpe << ',' << r.delta_mpjpe << '\n';
}

void write_speed_csv(const std::vector<SpeedRow>& rows, std::ostream& out) {
  out << "config,F,f,n,flops,latency_mean_s,latency_std_s,mpjpe,pmpjpe\n" << std::setprecision(17);
  for (const SpeedRow& r : rows) {
    out << r.config << ',' << r.F << ',' << r.f << ',' << r.n << ',' << r.flops << ',' << r.latency_mean_s << ','
        << r.latency_std_s << ',' << r.mpjpe << ',' << r.pmpjpe << '\n';
  }
}

void write_dct_inspect_csv(std::span<const double> trajectory, const std::vector<std::size_t>& keeps,
                           std::ostream& out) {
  const DctSpectrum spectrum = dct_forward(trajectory);
  std::vector<std::vector<double>> recon;
  for (std::size_t n : keeps) recon.push_back(idct(low_pass(spectrum, n)));
  out << "frame,original";
  for (std::size_t n : keeps) out << ",keep_" << n;
  out << '\n' << std::setprecision(17);
  for (std::size_t f = 0; f < trajectory.size(); ++f) {
    out << f << ',' << trajectory[f];
    for (const auto& r : recon) out << ',' << r[f];
    out << '\n';
  }
}

}  // namespace pfv2
