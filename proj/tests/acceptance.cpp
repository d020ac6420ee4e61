// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on failure.
// Usage: pfv2_acceptance [criterion-name ...]   (no names runs everything)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pfv2/bench.hpp"
#include "pfv2/dct.hpp"
#include "pfv2/metrics.hpp"
#include "pfv2/optim.hpp"
#include "pfv2/rng.hpp"
#include "pfv2/train.hpp"

using namespace pfv2;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : "/") + fmt(x, 4);
  return out;
}

// ---------------------------------------------------------------------------
// DCT

std::vector<double> loop_dct(const std::vector<double>& x) {
  const int F = static_cast<int>(x.size());
  std::vector<double> c(F);
  for (int i = 1; i <= F; ++i) {
    double acc = 0.0;
    for (int f = 1; f <= F; ++f) acc += x[f - 1] * std::cos(std::numbers::pi * (2 * f - 1) * (i - 1) / (2.0 * F));
    c[i - 1] = std::sqrt(2.0 / F) * acc / (i == 1 ? std::sqrt(2.0) : 1.0);
  }
  return c;
}

Outcome dct_correctness() {
  Rng rng(2024);
  double roundtrip = 0, parseval = 0, oracle = 0;
  for (std::size_t F : {9, 27, 81}) {
    for (int t = 0; t < 100; ++t) {
      std::vector<double> x(F);
      for (double& v : x) v = rng.normal();
      const DctSpectrum s = dct_forward(x);
      const auto back = idct(s);
      const auto ref = loop_dct(x);
      double ex = 0, ec = 0;
      for (std::size_t i = 0; i < F; ++i) {
        roundtrip = std::max(roundtrip, std::abs(back[i] - x[i]));
        oracle = std::max(oracle, std::abs(s.coeffs[i] - ref[i]));
        ex += x[i] * x[i];
        ec += s.coeffs[i] * s.coeffs[i];
      }
      parseval = std::max(parseval, std::abs(ex - ec));
    }
  }
  return {roundtrip < 1e-10 && parseval < 1e-9 && oracle < 1e-12,
          "roundtrip " + fmt(roundtrip) + ", parseval " + fmt(parseval) + ", oracle " + fmt(oracle)};
}

// ---------------------------------------------------------------------------
// Gradients

ModelConfig minimal_config() {
  ModelConfig c;
  c.joints = 3;
  c.frames = 9;
  c.central_frames = 3;
  c.coeffs = 3;
  c.embed_dim = 4;
  c.spatial_layers = 1;
  c.fusion_layers = 1;
  c.heads_spatial = 2;
  c.heads_fusion = 2;
  c.output_scale = 1.0;
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng, double sd) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v));
}

// Worst relative error over every parameter tensor and the number of tensors that failed.
std::pair<double, std::size_t> full_model_check(Variant variant, std::uint64_t seed) {
  const ModelConfig c = minimal_config();
  ParamStore p = init_params(c, variant, seed);
  Rng rng(seed + 100);
  for (auto& [name, t] : p)
    for (double& v : t.mutable_data()) v = (name.find("gamma") != std::string::npos ? 1.0 : 0.0) + rng.normal(0.0, 0.3);
  const Tensor x = random_tensor({2, c.frames, c.joints, 2}, rng, 0.3);
  const Tensor target = random_tensor({2, c.joints, 3}, rng, 1.0);
  double worst = 0;
  std::size_t failed = 0;
  for (auto& [name, t] : p) {
    const GradCheckResult r = grad_check([&] { return mpjpe_loss(forward(x, p, c, variant), target); }, t);
    worst = std::max(worst, r.max_rel_error);
    failed += r.passed ? 0 : 1;
  }
  return {worst, failed};
}

Outcome gradient_integrity() {
  std::string detail;
  bool ok = true;
  for (Variant v : {Variant::v2, Variant::v1_temporal, Variant::dct_only_baseline}) {
    const auto [worst, failed] = full_model_check(v, 7);
    ok = ok && failed == 0;
    detail += std::string(variant_name(v)) + " max rel " + fmt(worst) + "; ";
  }
  std::size_t caught = 0;
  {
    testing::BackwardFault fault(Primitive::matmul, 1.5);
    caught = full_model_check(Variant::v2, 7).second;
  }
  detail += "corrupted matmul rule fails " + std::to_string(caught) + " tensors";
  return {ok && caught > 0, detail};
}

// ---------------------------------------------------------------------------
// FLOPs and tokens

Outcome flops_invariance() {
  bool ok = true;
  std::string detail;
  for (Variant v : {Variant::v2, Variant::dct_only_baseline}) {
    for (std::size_t f : {1, 3, 9}) {
      ModelConfig c;
      c.central_frames = f;
      c.coeffs = ModelConfig::default_coeffs(f);
      c.frames = 9;
      const FlopsBreakdown ref = count_flops(c, v);
      for (std::size_t F : {27, 81, 243}) {
        c.frames = F;
        ok = ok && count_flops(c, v) == ref;
      }
      if (v == Variant::v2) detail += "f=" + std::to_string(f) + ":" + std::to_string(ref.total()) + " ";
    }
  }
  std::size_t forwards = 0;
  for (std::size_t f : {1, 3, 9}) {
    for (std::size_t F : {9, 27, 81, 243}) {
      ModelConfig c;
      c.frames = F;
      c.central_frames = f;
      c.coeffs = ModelConfig::default_coeffs(f);
      const ParamStore p = init_params(c, Variant::v2, F + f);
      const auto sample = generate_synthetic(1, F, c.joints, F);
      ForwardStats stats;
      NoGradGuard guard;
      forward(stack_inputs(sample, {0}), p, c, Variant::v2, &stats);
      ok = ok && stats.trunk_tokens == f + c.coeffs;
      ++forwards;
    }
  }
  detail += "; tokens == f+n in " + std::to_string(forwards) + " forwards";
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// Trained comparisons

ModelConfig desk_config(std::size_t F) {
  ModelConfig c;
  c.frames = F;
  c.central_frames = 3;
  c.coeffs = 3;
  c.embed_dim = 4;
  c.spatial_layers = 1;
  c.fusion_layers = 2;
  c.heads_spatial = 2;
  c.heads_fusion = 4;
  return c;
}

TrainSchedule desk_schedule(std::size_t epochs, std::uint64_t seed) {
  TrainSchedule s;
  s.epochs = epochs;
  s.lr0 = 2e-3;
  s.seed = seed;
  return s;
}

std::vector<SkeletonSample> crop(const std::vector<SkeletonSample>& v, std::size_t F) {
  std::vector<SkeletonSample> out;
  for (const auto& s : v) out.push_back(s.frames == F ? s : center_crop(s, F));
  return out;
}

constexpr std::size_t kSeeds = 5;

struct RfSuite {
  std::vector<SkeletonSample> train, eval;
};

RfSuite rf_suite(std::size_t seed) {
  MotionOptions mo;
  mo.input_noise = 0.03;
  return {generate_synthetic(512, 81, 17, 100 + seed, mo), generate_synthetic(256, 81, 17, 900 + seed, mo)};
}

double train_and_eval(const RfSuite& suite, std::size_t F, Variant v, std::size_t seed) {
  const ModelConfig c = desk_config(F);
  ParamStore p = init_params(c, v, seed + 1);
  train(p, crop(suite.train, F), desk_schedule(60, seed), c, v);
  return evaluate(p, c, v, crop(suite.eval, F)).mpjpe;
}

std::optional<std::vector<double>> v2_f81_errors;

std::vector<double> v2_long_errors() {
  if (!v2_f81_errors) {
    std::vector<double> e;
    for (std::size_t s = 0; s < kSeeds; ++s) e.push_back(train_and_eval(rf_suite(s), 81, Variant::v2, s));
    v2_f81_errors = e;
  }
  return *v2_f81_errors;
}

Outcome receptive_field() {
  std::vector<double> long_err, short_err;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const RfSuite suite = rf_suite(s);
    long_err.push_back(train_and_eval(suite, 81, Variant::v2, s));
    short_err.push_back(train_and_eval(suite, 9, Variant::v2, s));
  }
  v2_f81_errors = long_err;
  const double a = median(long_err), b = median(short_err);
  return {a < b, "median MPJPE F=81 " + fmt(a, 4) + " (" + join(long_err) + ") vs F=9 " + fmt(b, 4) + " (" +
                     join(short_err) + ")"};
}

Outcome baseline_ablation() {
  const std::vector<double> v2 = v2_long_errors();
  std::vector<double> base;
  for (std::size_t s = 0; s < kSeeds; ++s) base.push_back(train_and_eval(rf_suite(s), 81, Variant::dct_only_baseline, s));
  const double a = median(v2), b = median(base);
  return {a < b, "median MPJPE v2 " + fmt(a, 4) + " (" + join(v2) + ") vs dct_only " + fmt(b, 4) + " (" +
                     join(base) + ")"};
}

Outcome robustness_ordering() {
  const std::vector<double> grid = default_sigma_grid();
  const double top = grid[grid.size() - 1], second = grid[grid.size() - 2];
  std::vector<double> v2_top, v2_second, v1_top, v1_second;
  std::uint64_t flops_v2 = 0, flops_v1 = 0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    MotionOptions mo;
    mo.fast_amplitude = 0.2;
    const auto train_set = generate_synthetic(256, 27, 17, 100 + s, mo);
    const auto eval = generate_synthetic(128, 27, 17, 900 + s, mo);
    std::vector<TrainedModel> models;
    for (Variant v : {Variant::v2, Variant::v1_temporal}) {
      const ModelConfig c = desk_config(27);
      ParamStore p = init_params(c, v, s + 1);
      const std::size_t epochs = train(p, train_set, desk_schedule(120, s), c, v).size();
      models.push_back({std::string(variant_name(v)), c, v, std::move(p), epochs});
    }
    flops_v2 = count_flops(models[0].config, models[0].variant).total();
    flops_v1 = count_flops(models[1].config, models[1].variant).total();
    for (const RobustnessRow& r : robustness_sweep(models, eval, grid, 77 + s)) {
      const bool is_v2 = r.variant == "v2";
      if (r.sigma == top) (is_v2 ? v2_top : v1_top).push_back(r.delta_mpjpe);
      if (r.sigma == second) (is_v2 ? v2_second : v1_second).push_back(r.delta_mpjpe);
    }
  }
  const double a = median(v2_top), b = median(v1_top), c = median(v2_second), d = median(v1_second);
  return {a <= b && c <= d && flops_v2 < flops_v1,
          "median dMPJPE sigma=" + fmt(top) + ": v2 " + fmt(a) + " vs v1 " + fmt(b) + "; sigma=" + fmt(second) +
              ": v2 " + fmt(c) + " vs v1 " + fmt(d) + "; FLOPs " + std::to_string(flops_v2) + " < " +
              std::to_string(flops_v1)};
}

// ---------------------------------------------------------------------------
// Denoising

Outcome denoising() {
  std::string detail;
  bool ok = true;
  for (double sigma : {0.02, 0.05}) {
    double raw = 0, filtered = 0;
    std::size_t seeds = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed, ++seeds) {
      const SkeletonSample clean = generate_synthetic(1, 27, 17, seed).front();
      const SkeletonSample noisy = add_noise(clean, {sigma, std::nullopt, seed + 5000});
      for (std::size_t j = 0; j < clean.joints; ++j)
        for (std::size_t axis = 0; axis < 2; ++axis) {
          const auto c = clean.trajectory(j, axis), x = noisy.trajectory(j, axis);
          const auto r = idct(low_pass(dct_forward(x), 3));
          for (std::size_t f = 0; f < c.size(); ++f) {
            raw += (x[f] - c[f]) * (x[f] - c[f]);
            filtered += (r[f] - c[f]) * (r[f] - c[f]);
          }
        }
    }
    const double n = static_cast<double>(seeds * 17 * 2 * 27);
    const double raw_rms = std::sqrt(raw / n), rec_rms = std::sqrt(filtered / n);
    ok = ok && rec_rms < raw_rms;
    detail += "sigma " + fmt(sigma) + ": rms " + fmt(rec_rms) + " (n=3) vs " + fmt(raw_rms) + " (raw); ";
  }
  return {ok, detail + "100 seeds"};
}

// ---------------------------------------------------------------------------
// Metrics

Pose random_pose(Rng& rng, double sd = 100.0) {
  Pose p(17 * 3);
  for (double& v : p) v = rng.normal(0.0, sd);
  return p;
}

double loop_mpjpe(const Pose& a, const Pose& b) {
  double acc = 0;
  for (std::size_t j = 0; j < a.size() / 3; ++j) {
    double d = 0;
    for (std::size_t k = 0; k < 3; ++k) d += (a[3 * j + k] - b[3 * j + k]) * (a[3 * j + k] - b[3 * j + k]);
    acc += std::sqrt(d);
  }
  return acc / static_cast<double>(a.size() / 3);
}

// Similarity alignment by the unit-quaternion method, eigenvector from cyclic Jacobi.
double quaternion_p_mpjpe(const Pose& pred, const Pose& gt) {
  const std::size_t J = pred.size() / 3;
  double mp[3] = {0, 0, 0}, mg[3] = {0, 0, 0};
  for (std::size_t j = 0; j < J; ++j)
    for (int k = 0; k < 3; ++k) {
      mp[k] += pred[3 * j + k] / J;
      mg[k] += gt[3 * j + k] / J;
    }
  double S[3][3] = {}, norm_x = 0;
  for (std::size_t j = 0; j < J; ++j)
    for (int a = 0; a < 3; ++a) {
      norm_x += std::pow(pred[3 * j + a] - mp[a], 2);
      for (int b = 0; b < 3; ++b) S[a][b] += (pred[3 * j + a] - mp[a]) * (gt[3 * j + b] - mg[b]);
    }
  double N[4][4] = {{S[0][0] + S[1][1] + S[2][2], S[1][2] - S[2][1], S[2][0] - S[0][2], S[0][1] - S[1][0]},
                    {S[1][2] - S[2][1], S[0][0] - S[1][1] - S[2][2], S[0][1] + S[1][0], S[2][0] + S[0][2]},
                    {S[2][0] - S[0][2], S[0][1] + S[1][0], -S[0][0] + S[1][1] - S[2][2], S[1][2] + S[2][1]},
                    {S[0][1] - S[1][0], S[2][0] + S[0][2], S[1][2] + S[2][1], -S[0][0] - S[1][1] + S[2][2]}};
  double V[4][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < 4; ++p)
      for (int q = p + 1; q < 4; ++q) off += N[p][q] * N[p][q];
    if (off < 1e-30) break;
    for (int p = 0; p < 4; ++p)
      for (int q = p + 1; q < 4; ++q) {
        if (N[p][q] == 0.0) continue;
        const double theta = (N[q][q] - N[p][p]) / (2 * N[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int k = 0; k < 4; ++k) {
          const double a = N[k][p], b = N[k][q];
          N[k][p] = c * a - s * b;
          N[k][q] = s * a + c * b;
        }
        for (int k = 0; k < 4; ++k) {
          const double a = N[p][k], b = N[q][k];
          N[p][k] = c * a - s * b;
          N[q][k] = s * a + c * b;
        }
        for (int k = 0; k < 4; ++k) {
          const double a = V[k][p], b = V[k][q];
          V[k][p] = c * a - s * b;
          V[k][q] = s * a + c * b;
        }
      }
  }
  int best = 0;
  for (int i = 1; i < 4; ++i)
    if (N[i][i] > N[best][best]) best = i;
  const double w = V[0][best], x = V[1][best], y = V[2][best], z = V[3][best];
  const double R[3][3] = {{w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)},
                          {2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)},
                          {2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z}};
  const double scale = N[best][best] / norm_x;
  Pose aligned(pred.size());
  for (std::size_t j = 0; j < J; ++j)
    for (int r = 0; r < 3; ++r) {
      double acc = 0;
      for (int c = 0; c < 3; ++c) acc += R[r][c] * (pred[3 * j + c] - mp[c]);
      aligned[3 * j + r] = scale * acc + mg[r];
    }
  return loop_mpjpe(aligned, gt);
}

double loop_pck(const std::vector<Pose>& preds, const std::vector<Pose>& gts, double t) {
  double hit = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < preds[i].size() / 3; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < 3; ++k) d += std::pow(preds[i][3 * j + k] - gts[i][3 * j + k], 2);
      hit += std::sqrt(d) < t ? 1 : 0;
      total += 1;
    }
  return hit / total;
}

Pose random_similarity(const Pose& p, Rng& rng) {
  double q[4], n = 0;
  for (double& v : q) {
    v = rng.normal();
    n += v * v;
  }
  for (double& v : q) v /= std::sqrt(n);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                          {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                          {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
  const double s = rng.uniform(0.3, 3.0);
  const double t[3] = {rng.normal(0, 200), rng.normal(0, 200), rng.normal(0, 200)};
  Pose out(p.size());
  for (std::size_t j = 0; j < p.size() / 3; ++j)
    for (int r = 0; r < 3; ++r) {
      double acc = 0;
      for (int c = 0; c < 3; ++c) acc += R[r][c] * p[3 * j + c];
      out[3 * j + r] = s * acc + t[r];
    }
  return out;
}

Outcome metrics_oracles() {
  Rng rng(31);
  auto rel = [](double a, double b) { return std::abs(a - b); };
  double e_mpjpe = 0, e_p = 0, e_pck = 0, e_auc = 0;
  std::vector<Pose> preds, gts;
  for (int i = 0; i < 200; ++i) {
    gts.push_back(random_pose(rng));
    Pose p = gts.back();
    for (double& v : p) v += rng.normal(0.0, 60.0);
    preds.push_back(p);
    e_mpjpe = std::max(e_mpjpe, rel(mpjpe(p, gts.back()), loop_mpjpe(p, gts.back())));
    e_p = std::max(e_p, rel(p_mpjpe(p, gts.back()), quaternion_p_mpjpe(p, gts.back())));
  }
  const PckAuc pa = pck_auc(preds, gts);
  e_pck = std::abs(pa.pck150 - loop_pck(preds, gts, 150.0));
  double auc = 0;
  for (double t : default_auc_thresholds()) auc += loop_pck(preds, gts, t);
  e_auc = std::abs(pa.auc - auc / static_cast<double>(default_auc_thresholds().size()));

  double invariance = 0;
  const Pose gt = random_pose(rng), pred = random_pose(rng, 80.0);
  const double base = p_mpjpe(pred, gt);
  for (int i = 0; i < 100; ++i) invariance = std::max(invariance, std::abs(p_mpjpe(random_similarity(pred, rng), gt) - base));

  std::size_t violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    violations += p_mpjpe(a, b) <= mpjpe(a, b) ? 0 : 1;
  }
  const bool ok = e_mpjpe < 1e-12 && e_p < 1e-12 && e_pck < 1e-12 && e_auc < 1e-12 && invariance < 1e-8 && violations == 0;
  return {ok, "mpjpe " + fmt(e_mpjpe) + ", p_mpjpe " + fmt(e_p) + ", pck " + fmt(e_pck) + ", auc " + fmt(e_auc) +
                  ", invariance " + fmt(invariance) + ", pmpjpe>mpjpe " + std::to_string(violations) + "/1000"};
}

// ---------------------------------------------------------------------------
// Overfit

Outcome overfit_smoke() {
  ModelConfig c;
  c.frames = 9;
  c.embed_dim = 8;
  c.spatial_layers = 1;
  c.fusion_layers = 1;
  c.heads_spatial = 2;
  c.heads_fusion = 4;
  const auto data = generate_synthetic(8, 9, 17, 1);
  TrainSchedule s;
  s.epochs = 200;
  s.batch_size = 8;
  s.flip_augment = false;
  s.seed = 3;
  auto run = [&] {
    ParamStore p = init_params(c, Variant::v2, 1);
    return train(p, data, s, c, Variant::v2);
  };
  const auto a = run(), b = run();
  const double ratio = a.back() / a.front();
  return {ratio < 0.1 && a == b, "loss " + fmt(a.front(), 4) + " -> " + fmt(a.back(), 4) + " (ratio " + fmt(ratio) +
                                     "), rerun " + (a == b ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"dct_correctness", 5, dct_correctness},
      {"gradient_integrity", 120, gradient_integrity},
      {"flops_token_invariance", 60, flops_invariance},
      {"receptive_field", 1800, receptive_field},
      {"robustness_ordering", 2700, robustness_ordering},
      {"denoising_premise", 10, denoising},
      {"metrics_oracles", 60, metrics_oracles},
      {"overfit_smoke", 300, overfit_smoke},
      {"baseline_ablation", 1800, baseline_ablation},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && dt < c.budget_s;
    failures += pass ? 0 : 1;
    std::printf("%s %-24s %s [%.1fs of %.0fs]\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), dt, c.budget_s);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
