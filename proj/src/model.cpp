#include "pfv2/model.hpp"

#include <cmath>
#include <stdexcept>

#include "pfv2/dct.hpp"
#include "pfv2/rng.hpp"

namespace pfv2 {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::v2: return "v2";
    case Variant::v1_temporal: return "v1_temporal";
    case Variant::dct_only_baseline: return "dct_only_baseline";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "v2") return Variant::v2;
  if (name == "v1_temporal") return Variant::v1_temporal;
  if (name == "dct_only_baseline") return Variant::dct_only_baseline;
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected v2, v1_temporal or dct_only_baseline)");
}

std::size_t ModelConfig::spatial_hidden() const {
  return static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(embed_dim)));
}

std::size_t ModelConfig::fusion_hidden() const {
  return static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(token_dim())));
}

std::size_t ModelConfig::default_coeffs(std::size_t central_frames) {
  return central_frames == 1 ? 3 : central_frames;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
  if (joints == 0) fail("J must be positive");
  if (frames == 0) fail("F must be positive");
  if (embed_dim == 0) fail("c must be positive");
  if (heads_spatial == 0 || heads_fusion == 0) fail("head counts must be positive");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (spatial_hidden() == 0 || fusion_hidden() == 0) fail("mlp_ratio yields an empty hidden layer");
  if (token_dim() % heads_fusion != 0) fail("J*c = " + std::to_string(token_dim()) + " not divisible by heads_fusion = " + std::to_string(heads_fusion));
  if (embed_dim % heads_spatial != 0) fail("c = " + std::to_string(embed_dim) + " not divisible by heads_spatial = " + std::to_string(heads_spatial));
  if (central_frames < 1 || central_frames > frames) fail("f = " + std::to_string(central_frames) + " outside [1, F = " + std::to_string(frames) + "]");
  if (central_frames % 2 == 0) fail("f = " + std::to_string(central_frames) + " must be odd");
  if (coeffs < 1 || coeffs > frames) fail("n = " + std::to_string(coeffs) + " outside [1, F = " + std::to_string(frames) + "]");
}

std::size_t center_index(std::size_t frames) { return frames / 2; }

std::vector<std::size_t> central_frame_indices(std::size_t frames, std::size_t central_frames) {
  if (central_frames == 0 || central_frames % 2 == 0) {
    throw std::invalid_argument("central crop: f = " + std::to_string(central_frames) + " must be odd");
  }
  const std::size_t center = center_index(frames);
  const std::size_t half = central_frames / 2;
  if (center < half || center + half >= frames) {
    throw std::invalid_argument("central crop: f = " + std::to_string(central_frames) + " exceeds F = " + std::to_string(frames));
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = center - half; i <= center + half; ++i) idx.push_back(i);
  return idx;
}

// ---------------------------------------------------------------------------
// Blocks

Tensor linear(const Tensor& x, const LinearWeights& w) { return add(matmul(x, w.weight), w.bias); }

Tensor layer_norm(const Tensor& x, const LayerNormWeights& w) {
  return layernorm_lastdim(x, w.gamma, w.beta, 1e-5);
}

Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w) {
  if (x.rank() != 3) throw ShapeError("multi_head_attention: expected [B, T, D], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  const std::size_t H = w.heads;
  if (H == 0 || D % H != 0) throw ShapeError("multi_head_attention: D = " + std::to_string(D) + " not divisible by heads = " + std::to_string(H));
  const std::size_t dh = D / H;
  Tensor qkv = linear(x, w.qkv);                           // [B, T, 3D]
  qkv = transpose(reshape(qkv, {B, T, 3 * H, dh}), 1, 2);  // [B, 3H, T, dh]
  Tensor q = slice(qkv, 1, 0, H);
  Tensor k = slice(qkv, 1, H, 2 * H);
  Tensor v = slice(qkv, 1, 2 * H, 3 * H);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax_lastdim(scores);  // [B, H, T, T]
  Tensor ctx = transpose(matmul(attn, v), 1, 2);  // [B, T, H, dh]
  return linear(reshape(ctx, {B, T, D}), w.proj);
}

Tensor mlp(const Tensor& x, const MlpWeights& w) {
  Tensor h = linear(x, w.fc1);
  if (w.activation == Activation::gelu) h = gelu(h);
  return linear(h, w.fc2);
}

Tensor freq_mlp(const Tensor& x, const MlpWeights& w) {
  if (x.rank() != 3) throw ShapeError("freq_mlp: expected [B, f, D], got " + shape_str(x.shape()));
  const std::size_t f = x.dim(1);
  std::vector<double> m = dct_matrix(f);
  std::vector<double> mt(f * f);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < f; ++j) mt[j * f + i] = m[i * f + j];
  const Tensor forward_basis = Tensor::from({f, f}, std::move(m));
  const Tensor inverse_basis = Tensor::from({f, f}, std::move(mt));
  Tensor spectrum = matmul(forward_basis, x);
  return matmul(inverse_basis, mlp(spectrum, w));
}

Tensor encoder_block(const Tensor& x, const EncoderBlockWeights& w) {
  Tensor h = add(x, multi_head_attention(layer_norm(x, w.norm1), w.attn));
  return add(h, mlp(layer_norm(h, w.norm2), w.mlp));
}

Tensor fusion_layer(const Tensor& z, std::size_t split, const FusionBlockWeights& w) {
  if (z.rank() != 3) throw ShapeError("fusion_layer: expected [B, T, D], got " + shape_str(z.shape()));
  const std::size_t T = z.dim(1);
  if (split == 0 || split >= T) {
    throw std::out_of_range("fusion_layer: split " + std::to_string(split) + " outside [1, " + std::to_string(T) + ")");
  }
  Tensor mixed = add(z, multi_head_attention(layer_norm(z, w.norm1), w.attn));
  Tensor time = slice(mixed, 1, 0, split);
  Tensor freq = slice(mixed, 1, split, T);
  time = add(time, freq_mlp(layer_norm(time, w.norm_time), w.ffn_time));
  freq = add(freq, mlp(layer_norm(freq, w.norm_freq), w.ffn_freq));
  return concat({time, freq}, 1);
}

Tensor regress_head(const Tensor& z, const HeadWeights& w, std::size_t joints) {
  if (z.rank() != 3) throw ShapeError("regress_head: expected [B, T, D], got " + shape_str(z.shape()));
  const std::size_t B = z.dim(0);
  const std::size_t D = z.dim(2);
  // Tokens act as input channels; a width-1 kernel mixes all T of them.
  Tensor pooled = reshape(conv1d_valid(z, w.conv_weight, w.conv_bias), {B, D});
  return reshape(linear(pooled, w.linear), {B, joints, 3});
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

struct Initializer {
  Rng rng;
  ParamStore* store;

  Tensor normal(const std::string& name, Shape shape) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (double& x : v) x = rng.truncated_normal(0.02);
    return store->add(name, Tensor::from(std::move(shape), std::move(v), true));
  }
  Tensor constant(const std::string& name, Shape shape, double value) {
    return store->add(name, Tensor::full(std::move(shape), value, true));
  }
  void linear(const std::string& name, std::size_t in, std::size_t out) {
    normal(name + ".weight", {in, out});
    constant(name + ".bias", {out}, 0.0);
  }
  void norm(const std::string& name, std::size_t width) {
    constant(name + ".gamma", {width}, 1.0);
    constant(name + ".beta", {width}, 0.0);
  }
  void encoder_block(const std::string& name, std::size_t width, std::size_t hidden) {
    norm(name + ".norm1", width);
    linear(name + ".attn.qkv", width, 3 * width);
    linear(name + ".attn.proj", width, width);
    norm(name + ".norm2", width);
    linear(name + ".mlp.fc1", width, hidden);
    linear(name + ".mlp.fc2", hidden, width);
  }
};

LinearWeights linear_at(const ParamStore& p, const std::string& name) {
  return {p.get(name + ".weight"), p.get(name + ".bias")};
}

LayerNormWeights norm_at(const ParamStore& p, const std::string& name) {
  return {p.get(name + ".gamma"), p.get(name + ".beta")};
}

EncoderBlockWeights encoder_at(const ParamStore& p, const std::string& name, std::size_t heads) {
  EncoderBlockWeights w;
  w.norm1 = norm_at(p, name + ".norm1");
  w.attn = {linear_at(p, name + ".attn.qkv"), linear_at(p, name + ".attn.proj"), heads};
  w.norm2 = norm_at(p, name + ".norm2");
  w.mlp = {linear_at(p, name + ".mlp.fc1"), linear_at(p, name + ".mlp.fc2"), Activation::gelu};
  return w;
}

std::size_t trunk_tokens(const ModelConfig& c, Variant v) {
  switch (v) {
    case Variant::v2: return c.central_frames + c.coeffs;
    case Variant::v1_temporal: return c.frames;
    case Variant::dct_only_baseline: return c.coeffs;
  }
  return 0;
}

}  // namespace

ParamStore init_params(const ModelConfig& config, Variant variant, std::uint64_t seed) {
  config.validate();
  ParamStore store;
  Initializer init{Rng(seed), &store};
  const std::size_t J = config.joints, c = config.embed_dim, D = config.token_dim();

  if (variant != Variant::dct_only_baseline) {
    init.linear("spatial.joint_embed", 2, c);
    init.normal("spatial.pos", {J, c});
    for (std::size_t i = 0; i < config.spatial_layers; ++i) {
      init.encoder_block("spatial.block" + std::to_string(i), c, config.spatial_hidden());
    }
    init.norm("spatial.norm", c);
    const std::size_t time_tokens = variant == Variant::v2 ? config.central_frames : config.frames;
    init.normal("time_pos", {time_tokens, D});
  }
  if (variant != Variant::v1_temporal) {
    init.linear("freq.embed", 2 * J, D);
    init.normal("freq_pos", {config.coeffs, D});
  }
  for (std::size_t i = 0; i < config.fusion_layers; ++i) {
    const std::string name = (variant == Variant::v2 ? "fusion.block" : "temporal.block") + std::to_string(i);
    if (variant == Variant::v2) {
      init.norm(name + ".norm1", D);
      init.linear(name + ".attn.qkv", D, 3 * D);
      init.linear(name + ".attn.proj", D, D);
      init.norm(name + ".norm_time", D);
      init.linear(name + ".ffn_time.fc1", D, config.fusion_hidden());
      init.linear(name + ".ffn_time.fc2", config.fusion_hidden(), D);
      init.norm(name + ".norm_freq", D);
      init.linear(name + ".ffn_freq.fc1", D, config.fusion_hidden());
      init.linear(name + ".ffn_freq.fc2", config.fusion_hidden(), D);
    } else {
      init.encoder_block(name, D, config.fusion_hidden());
    }
  }
  init.norm("trunk_norm", D);
  const std::size_t T = trunk_tokens(config, variant);
  init.constant("head.conv.weight", {1, T, 1}, 1.0 / static_cast<double>(T));
  init.constant("head.conv.bias", {1}, 0.0);
  init.linear("head.linear", D, 3 * J);
  return store;
}

EncoderBlockWeights spatial_block(const ParamStore& p, std::size_t layer, const ModelConfig& config) {
  return encoder_at(p, "spatial.block" + std::to_string(layer), config.heads_spatial);
}

EncoderBlockWeights temporal_block(const ParamStore& p, std::size_t layer, const ModelConfig& config) {
  return encoder_at(p, "temporal.block" + std::to_string(layer), config.heads_fusion);
}

FusionBlockWeights fusion_block(const ParamStore& p, std::size_t layer, const ModelConfig& config) {
  const std::string name = "fusion.block" + std::to_string(layer);
  FusionBlockWeights w;
  w.norm1 = norm_at(p, name + ".norm1");
  w.attn = {linear_at(p, name + ".attn.qkv"), linear_at(p, name + ".attn.proj"), config.heads_fusion};
  w.norm_time = norm_at(p, name + ".norm_time");
  w.ffn_time = {linear_at(p, name + ".ffn_time.fc1"), linear_at(p, name + ".ffn_time.fc2"), Activation::gelu};
  w.norm_freq = norm_at(p, name + ".norm_freq");
  w.ffn_freq = {linear_at(p, name + ".ffn_freq.fc1"), linear_at(p, name + ".ffn_freq.fc2"), Activation::gelu};
  return w;
}

HeadWeights head_weights(const ParamStore& p) {
  return {p.get("head.conv.weight"), p.get("head.conv.bias"), linear_at(p, "head.linear")};
}

// ---------------------------------------------------------------------------
// Forward

namespace {

Tensor as_batch(const Tensor& x, const ModelConfig& config, const char* who) {
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(2) != config.joints || x.dim(3) != 2) {
    throw ShapeError(std::string(who) + ": expected [B, F, " + std::to_string(config.joints) + ", 2], got " +
                     shape_str(x.shape()));
  }
  return x;
}

}  // namespace

Tensor spatial_encode(const Tensor& frames, const ParamStore& params, const ModelConfig& config) {
  const Tensor x = as_batch(frames, config, "spatial_encode");
  const std::size_t B = x.dim(0), f = x.dim(1), J = config.joints, c = config.embed_dim;
  const Tensor& time_pos = params.get("time_pos");
  if (time_pos.dim(0) != f) {
    throw ShapeError("spatial_encode", x.shape(), time_pos.shape(), "frame count differs from the temporal table");
  }
  Tensor h = linear(reshape(x, {B * f * J, 2}), {params.get("spatial.joint_embed.weight"), params.get("spatial.joint_embed.bias")});
  h = add(reshape(h, {B * f, J * c}), reshape(params.get("spatial.pos"), {J * c}));
  h = reshape(h, {B * f, J, c});
  for (std::size_t i = 0; i < config.spatial_layers; ++i) h = encoder_block(h, spatial_block(params, i, config));
  h = layer_norm(h, norm_at(params, "spatial.norm"));
  h = add(reshape(h, {B, f * J * c}), reshape(time_pos, {f * J * c}));
  return frames.rank() == 3 ? reshape(h, {f, J * c}) : reshape(h, {B, f, J * c});
}

Tensor freq_encode(const Tensor& sequence, const ParamStore& params, const ModelConfig& config) {
  const Tensor x = as_batch(sequence, config, "freq_encode");
  const std::size_t B = x.dim(0), F = x.dim(1), J = config.joints, n = config.coeffs;
  if (n < 1 || n > F) throw std::invalid_argument("freq_encode: n = " + std::to_string(n) + " exceeds F = " + std::to_string(F));
  std::vector<double> basis = dct_matrix(F);
  basis.resize(n * F);  // first n rows: low-pass
  const Tensor low = Tensor::from({n, F}, std::move(basis));
  Tensor coeffs = matmul(low, reshape(x, {B, F, 2 * J}));  // [B, n, 2J]
  Tensor z = linear(coeffs, linear_at(params, "freq.embed"));
  const std::size_t D = config.token_dim();
  z = add(reshape(z, {B, n * D}), reshape(params.get("freq_pos"), {n * D}));
  return sequence.rank() == 3 ? reshape(z, {n, D}) : reshape(z, {B, n, D});
}

Tensor forward(const Tensor& sequence, const ParamStore& params, const ModelConfig& config, Variant variant,
               ForwardStats* stats) {
  config.validate();
  const bool single = sequence.rank() == 3;
  const Tensor x = as_batch(sequence, config, "forward");
  if (x.dim(1) != config.frames) {
    throw ShapeError("forward: sequence has " + std::to_string(x.dim(1)) + " frames, config expects F = " +
                     std::to_string(config.frames));
  }
  Tensor z;
  switch (variant) {
    case Variant::v2: {
      const auto idx = central_frame_indices(config.frames, config.central_frames);
      Tensor central = slice(x, 1, idx.front(), idx.back() + 1);
      z = concat({spatial_encode(central, params, config), freq_encode(x, params, config)}, 1);
      if (z.dim(1) != config.central_frames + config.coeffs) {
        throw std::logic_error("forward: fused token count " + std::to_string(z.dim(1)) + " != f + n");
      }
      for (std::size_t i = 0; i < config.fusion_layers; ++i) {
        z = fusion_layer(z, config.central_frames, fusion_block(params, i, config));
      }
      break;
    }
    case Variant::v1_temporal:
      z = spatial_encode(x, params, config);
      for (std::size_t i = 0; i < config.fusion_layers; ++i) z = encoder_block(z, temporal_block(params, i, config));
      break;
    case Variant::dct_only_baseline:
      z = freq_encode(x, params, config);
      for (std::size_t i = 0; i < config.fusion_layers; ++i) z = encoder_block(z, temporal_block(params, i, config));
      break;
  }
  if (stats) {
    stats->trunk_tokens = z.dim(1);
    stats->trunk_layers = config.fusion_layers;
  }
  z = layer_norm(z, norm_at(params, "trunk_norm"));
  Tensor y = scale(regress_head(z, head_weights(params), config.joints), config.output_scale);
  if (single) y = reshape(y, {config.joints, 3});
  return y;
}

Tensor mpjpe_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape() || pred.rank() < 2 || pred.shape().back() != 3) {
    throw ShapeError("mpjpe_loss", pred.shape(), target.shape(), "expected equal [..., J, 3]");
  }
  return mean(norm_lastdim(sub(pred, target)));
}

}  // namespace pfv2
