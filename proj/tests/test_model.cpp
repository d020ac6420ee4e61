#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pfv2/dct.hpp"
#include "pfv2/model.hpp"
#include "pfv2/optim.hpp"
#include "pfv2/rng.hpp"

using namespace pfv2;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return Tensor::from(std::move(shape), std::move(v));
}

void fill(Tensor t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

void fill_prefix(ParamStore& p, const std::string& prefix, double value) {
  for (auto& [name, t] : p)
    if (name.rfind(prefix, 0) == 0) fill(t, value);
}

void set_identity(Tensor t) {
  fill(t, 0.0);
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) t.mutable_data()[i * cols + i] = 1.0;
}

/// Randomizes every parameter so no branch is trivially zero.
void randomize(ParamStore& p, Rng& rng, double sd = 0.3) {
  for (auto& [name, t] : p)
    for (double& v : t.mutable_data()) v = (name.find("gamma") != std::string::npos ? 1.0 : 0.0) + rng.normal(0.0, sd);
}

ModelConfig small_config() {
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
  return c;
}

Tensor random_sequence(const ModelConfig& c, Rng& rng, std::size_t batch = 0) {
  if (batch == 0) return random_tensor({c.frames, c.joints, 2}, rng, 0.3);
  return random_tensor({batch, c.frames, c.joints, 2}, rng, 0.3);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

MlpWeights random_mlp(std::size_t D, std::size_t H, Rng& rng, bool rg = false) {
  auto lin = [&](std::size_t a, std::size_t b) {
    LinearWeights w{random_tensor({a, b}, rng, 0.5), random_tensor({b}, rng, 0.5)};
    w.weight.set_requires_grad(rg);
    w.bias.set_requires_grad(rg);
    return w;
  };
  return {lin(D, H), lin(H, D), Activation::gelu};
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.central_frames = 4;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.frames = 9;
  c.central_frames = 11;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.frames = 9;
  c.coeffs = 10;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.embed_dim = 6;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.heads_fusion = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("default coefficient pairing") {
  CHECK(ModelConfig::default_coeffs(1) == 3);
  CHECK(ModelConfig::default_coeffs(3) == 3);
  CHECK(ModelConfig::default_coeffs(9) == 9);
  CHECK(ModelConfig::default_coeffs(27) == 27);
}

TEST_CASE("central crop indices") {
  CHECK(center_index(81) == 40);
  CHECK(central_frame_indices(81, 3) == std::vector<std::size_t>{39, 40, 41});
  CHECK(central_frame_indices(9, 9).front() == 0);
  CHECK(central_frame_indices(9, 9).back() == 8);
  CHECK_THROWS(central_frame_indices(9, 2));
  CHECK_THROWS(central_frame_indices(9, 11));
}

TEST_CASE("variant names round trip") {
  for (Variant v : {Variant::v2, Variant::v1_temporal, Variant::dct_only_baseline}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("v3"), std::invalid_argument);
}

TEST_CASE("parameter shapes depend only on the config") {
  const ModelConfig c = small_config();
  for (Variant v : {Variant::v2, Variant::v1_temporal, Variant::dct_only_baseline}) {
    const ParamStore a = init_params(c, v, 1), b = init_params(c, v, 2);
    REQUIRE(a.size() == b.size());
    auto ia = a.begin();
    for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
      CHECK(ia->first == ib->first);
      CHECK(ia->second.shape() == ib->second.shape());
    }
  }
  const ParamStore p = init_params(c, Variant::v2, 3);
  CHECK(p.get("spatial.pos").shape() == Shape{3, 4});
  CHECK(p.get("time_pos").shape() == Shape{3, 12});
  CHECK(p.get("freq_pos").shape() == Shape{3, 12});
  CHECK(p.get("freq.embed.weight").shape() == Shape{6, 12});
  CHECK(p.get("head.conv.weight").shape() == Shape{1, 6, 1});
  CHECK(p.get("head.linear.weight").shape() == Shape{12, 9});
}

TEST_CASE("initialization statistics") {
  ModelConfig c;
  const ParamStore p = init_params(c, Variant::v2, 4);
  const Tensor& w = p.get("fusion.block0.attn.qkv.weight");
  double mean = 0, sq = 0, maxabs = 0;
  for (double v : w.data()) {
    mean += v;
    sq += v * v;
    maxabs = std::max(maxabs, std::abs(v));
  }
  mean /= static_cast<double>(w.numel());
  const double sd = std::sqrt(sq / static_cast<double>(w.numel()) - mean * mean);
  CHECK(std::abs(mean) < 1e-3);
  CHECK(sd < 0.02);
  CHECK(sd > 0.015);
  CHECK(maxabs <= 0.04);
  for (double v : p.get("fusion.block0.attn.qkv.bias").data()) CHECK(v == 0.0);
  for (double v : p.get("trunk_norm.gamma").data()) CHECK(v == 1.0);
}

TEST_CASE("spatial encoder shape contract") {
  ModelConfig c = small_config();
  c.joints = 2;
  c.embed_dim = 4;
  c.central_frames = 1;
  c.coeffs = 1;
  const ParamStore p = init_params(c, Variant::v2, 5);
  Rng rng(6);
  CHECK(spatial_encode(random_tensor({1, 2, 2}, rng), p, c).shape() == Shape{1, 8});
  CHECK(spatial_encode(random_tensor({4, 1, 2, 2}, rng), p, c).shape() == Shape{4, 1, 8});
  CHECK_THROWS_AS(spatial_encode(random_tensor({3, 2, 2}, rng), p, c), ShapeError);
}

TEST_CASE("spatial encoder processes frames independently") {
  const ModelConfig c = small_config();
  ParamStore p = init_params(c, Variant::v2, 7);
  Rng rng(8);
  randomize(p, rng);
  fill(p.get("time_pos"), 0.0);
  const Tensor x = random_tensor({3, c.joints, 2}, rng);
  std::vector<double> swapped(x.data().begin(), x.data().end());
  const std::size_t row = c.joints * 2;
  std::swap_ranges(swapped.begin(), swapped.begin() + row, swapped.begin() + 2 * row);
  const Tensor y = spatial_encode(x, p, c);
  const Tensor ys = spatial_encode(Tensor::from(x.shape(), swapped), p, c);
  const std::size_t D = c.token_dim();
  for (std::size_t k = 0; k < D; ++k) {
    CHECK(ys.at({0, k}) == y.at({2, k}));
    CHECK(ys.at({1, k}) == y.at({1, k}));
    CHECK(ys.at({2, k}) == y.at({0, k}));
  }
}

TEST_CASE("spatial encoder with zeroed branches passes the embedding through") {
  const ModelConfig c = small_config();
  ParamStore p = init_params(c, Variant::v2, 9);
  Rng rng(10);
  randomize(p, rng);
  fill_prefix(p, "spatial.block0.attn.proj", 0.0);
  fill_prefix(p, "spatial.block0.mlp.fc2", 0.0);
  fill_prefix(p, "spatial.norm.gamma", 1.0);
  fill_prefix(p, "spatial.norm.beta", 0.0);
  fill(p.get("time_pos"), 0.0);
  const Tensor x = random_tensor({3, c.joints, 2}, rng);
  const Tensor y = spatial_encode(x, p, c);
  const std::size_t cd = c.embed_dim;
  const Tensor& w = p.get("spatial.joint_embed.weight");
  const Tensor& b = p.get("spatial.joint_embed.bias");
  const Tensor& pos = p.get("spatial.pos");
  for (std::size_t f = 0; f < 3; ++f) {
    for (std::size_t j = 0; j < c.joints; ++j) {
      std::vector<double> e(cd);
      for (std::size_t k = 0; k < cd; ++k) {
        e[k] = x.at({f, j, 0}) * w.at({0, k}) + x.at({f, j, 1}) * w.at({1, k}) + b.at({k}) + pos.at({j, k});
      }
      double mu = 0, var = 0;
      for (double v : e) mu += v;
      mu /= static_cast<double>(cd);
      for (double v : e) var += (v - mu) * (v - mu);
      var /= static_cast<double>(cd);
      for (std::size_t k = 0; k < cd; ++k) {
        CHECK(std::abs(y.at({f, j * cd + k}) - (e[k] - mu) / std::sqrt(var + 1e-5)) < 1e-12);
      }
    }
  }
}

TEST_CASE("frequency encoder matches the dct module") {
  ModelConfig c = small_config();
  c.embed_dim = 2;  // D = 2J so the embedding can be the identity
  c.heads_spatial = 1;
  c.heads_fusion = 2;
  ParamStore p = init_params(c, Variant::v2, 11);
  set_identity(p.get("freq.embed.weight"));
  fill(p.get("freq.embed.bias"), 0.0);
  fill(p.get("freq_pos"), 0.0);
  Rng rng(12);
  const Tensor x = random_sequence(c, rng);
  const Tensor z = freq_encode(x, p, c);
  CHECK(z.shape() == Shape{3, 6});
  for (std::size_t j = 0; j < c.joints; ++j) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      std::vector<double> traj(c.frames);
      for (std::size_t f = 0; f < c.frames; ++f) traj[f] = x.at({f, j, axis});
      const DctSpectrum s = dct_forward(traj);
      for (std::size_t i = 0; i < c.coeffs; ++i) CHECK(std::abs(z.at({i, j * 2 + axis}) - s.coeffs[i]) < 1e-12);
    }
  }

  std::vector<double> constant(c.frames * c.joints * 2);
  for (std::size_t k = 0; k < constant.size(); ++k) constant[k] = 0.1 * static_cast<double>(k % (c.joints * 2)) - 0.2;
  const Tensor zc = freq_encode(Tensor::from({c.frames, c.joints, 2}, constant), p, c);
  for (std::size_t i = 1; i < c.coeffs; ++i)
    for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(zc.at({i, k})) < 1e-12);
  bool any = false;
  for (std::size_t k = 0; k < 6; ++k) any = any || std::abs(zc.at({0, k})) > 1e-6;
  CHECK(any);
}

TEST_CASE("frequency tokens have the same shape for any F") {
  for (std::size_t F : {9, 81}) {
    ModelConfig c = small_config();
    c.frames = F;
    const ParamStore p = init_params(c, Variant::v2, 13);
    Rng rng(14);
    CHECK(freq_encode(random_sequence(c, rng), p, c).shape() == Shape{3, c.token_dim()});
  }
}

TEST_CASE("freq_mlp") {
  Rng rng(15);
  SUBCASE("one token reduces to the plain MLP") {
    const MlpWeights w = random_mlp(5, 7, rng);
    const Tensor x = random_tensor({2, 1, 5}, rng);
    CHECK(max_abs_diff(freq_mlp(x, w), mlp(x, w)) < 1e-12);
  }
  SUBCASE("identity middle gives the input back") {
    MlpWeights w = random_mlp(6, 6, rng);
    set_identity(w.fc1.weight);
    set_identity(w.fc2.weight);
    fill(w.fc1.bias, 0.0);
    fill(w.fc2.bias, 0.0);
    w.activation = Activation::identity;
    const Tensor x = random_tensor({2, 5, 6}, rng);
    CHECK(max_abs_diff(freq_mlp(x, w), x) < 1e-9);
  }
  SUBCASE("gradients match finite differences") {
    MlpWeights w = random_mlp(8, 16, rng);
    const Tensor probe = random_tensor({1, 3, 8}, rng);
    auto f = [&](const Tensor& x) { return sum(mul(freq_mlp(x, w), probe)); };
    const GradCheckResult r = grad_check(f, random_tensor({1, 3, 8}, rng));
    CHECK(r.passed);
    Tensor w1 = w.fc1.weight;
    CHECK(grad_check([&] { return sum(mul(freq_mlp(probe, w), probe)); }, w1).passed);
  }
}

TEST_CASE("fusion layer") {
  ModelConfig c = small_config();
  ParamStore p = init_params(c, Variant::v2, 16);
  Rng rng(17);
  randomize(p, rng);
  const std::size_t f = c.central_frames, T = c.central_frames + c.coeffs, D = c.token_dim();
  const Tensor z = random_tensor({1, T, D}, rng);

  SUBCASE("zeroed residual branches give the identity") {
    fill_prefix(p, "fusion.block0.attn.proj", 0.0);
    fill_prefix(p, "fusion.block0.ffn_time.fc2", 0.0);
    fill_prefix(p, "fusion.block0.ffn_freq.fc2", 0.0);
    CHECK(max_abs_diff(fusion_layer(z, f, fusion_block(p, 0, c)), z) == 0.0);
  }
  SUBCASE("shared attention mixes time into frequency tokens") {
    const Tensor y = fusion_layer(z, f, fusion_block(p, 0, c));
    std::vector<double> v(z.data().begin(), z.data().end());
    v[1 * D + 2] += 0.5;  // time token 1
    const Tensor y2 = fusion_layer(Tensor::from(z.shape(), v), f, fusion_block(p, 0, c));
    double delta = 0;
    for (std::size_t t = f; t < T; ++t)
      for (std::size_t k = 0; k < D; ++k) delta = std::max(delta, std::abs(y2.at({0, t, k}) - y.at({0, t, k})));
    CHECK(delta > 1e-6);
  }
  SUBCASE("time path differs from a plain MLP with the same weights") {
    FusionBlockWeights w = fusion_block(p, 0, c);
    const Tensor y = fusion_layer(z, f, w);
    const Tensor mixed = add(z, multi_head_attention(layer_norm(z, w.norm1), w.attn));
    const Tensor time = slice(mixed, 1, 0, f);
    const Tensor plain = add(time, mlp(layer_norm(time, w.norm_time), w.ffn_time));
    CHECK(max_abs_diff(slice(y, 1, 0, f), plain) > 1e-6);
    const Tensor freq = slice(mixed, 1, f, T);
    CHECK(max_abs_diff(slice(y, 1, f, T), add(freq, mlp(layer_norm(freq, w.norm_freq), w.ffn_freq))) < 1e-12);
  }
  SUBCASE("split point must fall inside the token range") {
    CHECK_THROWS_AS(fusion_layer(z, 0, fusion_block(p, 0, c)), std::out_of_range);
    CHECK_THROWS_AS(fusion_layer(z, T, fusion_block(p, 0, c)), std::out_of_range);
  }
}

TEST_CASE("regression head") {
  Rng rng(18);
  const std::size_t T = 4, D = 6, J = 2;
  HeadWeights w{Tensor::full({1, T, 1}, 1.0 / T), Tensor::zeros({1}), {Tensor::zeros({D, 3 * J}), Tensor::zeros({3 * J})}};
  set_identity(w.linear.weight);
  const Tensor z = random_tensor({1, T, D}, rng);
  const Tensor y = regress_head(z, w, J);
  CHECK(y.shape() == Shape{1, 2, 3});
  for (std::size_t k = 0; k < D; ++k) {
    double m = 0;
    for (std::size_t t = 0; t < T; ++t) m += z.at({0, t, k});
    CHECK(std::abs(y.data()[k] - m / T) < 1e-12);
  }

  HeadWeights r{random_tensor({1, T, 1}, rng), random_tensor({1}, rng),
                {random_tensor({D, 3 * J}, rng), random_tensor({3 * J}, rng)}};
  const Tensor probe = random_tensor({1, J, 3}, rng);
  CHECK(grad_check([&](const Tensor& x) { return sum(mul(regress_head(x, r, J), probe)); }, z).passed);
  Tensor cw = r.conv_weight;
  CHECK(grad_check([&] { return sum(mul(regress_head(z, r, J), probe)); }, cw).passed);
  Tensor lw = r.linear.weight;
  CHECK(grad_check([&] { return sum(mul(regress_head(z, r, J), probe)); }, lw).passed);
}

TEST_CASE("sub-block gradients match finite differences") {
  const ModelConfig c = small_config();
  ParamStore p = init_params(c, Variant::v2, 19);
  Rng rng(20);
  randomize(p, rng);
  SUBCASE("spatial layer") {
    const EncoderBlockWeights w = spatial_block(p, 0, c);
    const Tensor probe = random_tensor({2, c.joints, c.embed_dim}, rng);
    auto f = [&](const Tensor& x) { return sum(mul(encoder_block(x, w), probe)); };
    CHECK(grad_check(f, random_tensor({2, c.joints, c.embed_dim}, rng)).passed);
    for (const char* name : {"spatial.block0.attn.qkv.weight", "spatial.block0.mlp.fc1.weight", "spatial.block0.norm1.gamma"}) {
      const Tensor x = random_tensor({2, c.joints, c.embed_dim}, rng);
      CHECK(grad_check([&] { return sum(mul(encoder_block(x, w), probe)); }, p.get(name)).passed);
    }
  }
  SUBCASE("fusion layer") {
    const FusionBlockWeights w = fusion_block(p, 0, c);
    const Tensor probe = random_tensor({1, 6, c.token_dim()}, rng);
    auto f = [&](const Tensor& x) { return sum(mul(fusion_layer(x, 3, w), probe)); };
    CHECK(grad_check(f, random_tensor({1, 6, c.token_dim()}, rng)).passed);
    const Tensor x = random_tensor({1, 6, c.token_dim()}, rng);
    for (const char* name : {"fusion.block0.attn.proj.weight", "fusion.block0.ffn_time.fc1.weight",
                             "fusion.block0.ffn_freq.fc2.bias", "fusion.block0.norm_time.beta"}) {
      CHECK(grad_check([&] { return sum(mul(fusion_layer(x, 3, w), probe)); }, p.get(name)).passed);
    }
  }
}

TEST_CASE("forward shapes and token counts") {
  ModelConfig c;
  c.frames = 9;
  const ParamStore p = init_params(c, Variant::v2, 21);
  Rng rng(22);
  ForwardStats stats;
  const Tensor y = forward(random_sequence(c, rng), p, c, Variant::v2, &stats);
  CHECK(y.shape() == Shape{17, 3});
  CHECK(stats.trunk_tokens == 6);

  const ModelConfig s = small_config();
  for (Variant v : {Variant::v2, Variant::v1_temporal, Variant::dct_only_baseline}) {
    const ParamStore q = init_params(s, v, 23);
    CHECK(forward(random_sequence(s, rng), q, s, v).shape() == Shape{3, 3});
    CHECK(forward(random_sequence(s, rng, 4), q, s, v).shape() == Shape{4, 3, 3});
  }
  ModelConfig wrong = s;
  wrong.frames = 11;
  CHECK_THROWS(forward(random_sequence(wrong, rng), init_params(s, Variant::v2, 1), s, Variant::v2));
}

TEST_CASE("forward is deterministic") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, Variant::v2, 24);
  Rng rng(25);
  const Tensor x = random_sequence(c, rng);
  CHECK(max_abs_diff(forward(x, p, c, Variant::v2), forward(x, p, c, Variant::v2)) == 0.0);
  const ParamStore q = init_params(c, Variant::v2, 24);
  CHECK(max_abs_diff(forward(x, p, c, Variant::v2), forward(x, q, c, Variant::v2)) == 0.0);
}

TEST_CASE("outer frames reach the output only through frequency tokens") {
  ModelConfig c = small_config();
  c.coeffs = c.frames;
  ParamStore p = init_params(c, Variant::v2, 26);
  Rng rng(27);
  randomize(p, rng, 0.1);
  const Tensor x = random_sequence(c, rng);
  std::vector<double> v(x.data().begin(), x.data().end());
  v[0] += 0.3;  // frame 0 is outside the central three
  const Tensor x2 = Tensor::from(x.shape(), v);
  CHECK(max_abs_diff(forward(x, p, c, Variant::v2), forward(x2, p, c, Variant::v2)) > 1e-9);
  fill(p.get("freq.embed.weight"), 0.0);
  CHECK(max_abs_diff(forward(x, p, c, Variant::v2), forward(x2, p, c, Variant::v2)) == 0.0);
}

TEST_CASE("dct-only baseline with full spectrum sees every frame") {
  ModelConfig c = small_config();
  c.coeffs = c.frames;
  ParamStore p = init_params(c, Variant::dct_only_baseline, 28);
  Rng rng(29);
  randomize(p, rng, 0.1);
  const Tensor x = random_sequence(c, rng);
  const Tensor y = forward(x, p, c, Variant::dct_only_baseline);
  for (std::size_t f = 0; f < c.frames; ++f) {
    std::vector<double> v(x.data().begin(), x.data().end());
    v[f * c.joints * 2 + 1] += 0.2;
    CHECK(max_abs_diff(forward(Tensor::from(x.shape(), v), p, c, Variant::dct_only_baseline), y) > 1e-9);
  }
}

TEST_CASE("every input frame has a nonzero gradient") {
  ModelConfig c = small_config();
  c.frames = 27;
  c.coeffs = 2;
  ParamStore p = init_params(c, Variant::v2, 30);
  Rng rng(31);
  randomize(p, rng, 0.1);
  Tensor x = random_sequence(c, rng);
  x.set_requires_grad(true);
  backward(sum(forward(x, p, c, Variant::v2)));
  for (std::size_t f = 0; f < c.frames; ++f) {
    double mag = 0;
    for (std::size_t k = 0; k < c.joints * 2; ++k) mag += std::abs(x.grad()[f * c.joints * 2 + k]);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("loss on a one-layer model matches finite differences") {
  ModelConfig c = small_config();
  c.output_scale = 1.0;
  ParamStore p = init_params(c, Variant::v2, 32);
  Rng rng(33);
  randomize(p, rng);
  const Tensor x = random_sequence(c, rng);
  const Tensor target = random_tensor({c.joints, 3}, rng);
  for (auto& [name, t] : p) {
    const GradCheckResult r = grad_check([&] { return mpjpe_loss(forward(x, p, c, Variant::v2), target); }, t);
    CHECK_MESSAGE(r.passed, name << " max rel error " << r.max_rel_error);
  }
}

TEST_CASE("mpjpe loss is the mean joint distance") {
  const Tensor a = Tensor::from({2, 3}, {0, 0, 0, 3, 4, 0});
  const Tensor b = Tensor::zeros({2, 3});
  CHECK(mpjpe_loss(a, b).item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(mpjpe_loss(a, Tensor::zeros({3, 3})), ShapeError);
}

}  // TEST_SUITE
