#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "pfv2/params.hpp"
#include "pfv2/tensor.hpp"

namespace pfv2 {

enum class Variant {
  /// Central-frame spatial tokens fused with low-frequency DCT tokens.
  v2,
  /// Spatial encoder on every frame followed by vanilla temporal layers.
  v1_temporal,
  /// DCT coefficient tokens only, vanilla layers.
  dct_only_baseline,
};

std::string_view variant_name(Variant v);
/// Throws std::invalid_argument on an unknown name.
Variant parse_variant(std::string_view name);

struct ModelConfig {
  std::size_t joints = 17;          // J
  std::size_t frames = 81;          // F, full sequence length
  std::size_t central_frames = 3;   // f, must be odd
  std::size_t coeffs = 3;           // n, kept DCT coefficients
  std::size_t embed_dim = 32;       // c, per-joint
  std::size_t spatial_layers = 4;
  std::size_t fusion_layers = 4;
  std::size_t heads_spatial = 8;
  std::size_t heads_fusion = 8;
  double mlp_ratio = 2.0;
  /// Constant multiplier on the head output (world units per model unit).
  double output_scale = 1000.0;

  std::size_t token_dim() const { return joints * embed_dim; }
  std::size_t spatial_hidden() const;
  std::size_t fusion_hidden() const;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  /// Default pairing used throughout: n = f, except n = 3 when f = 1.
  static std::size_t default_coeffs(std::size_t central_frames);
};

/// Frame index treated as the sequence center: F / 2 (the middle for odd F).
std::size_t center_index(std::size_t frames);

/// Frame indices of the f-frame crop around the center.
std::vector<std::size_t> central_frame_indices(std::size_t frames, std::size_t central_frames);

// ---------------------------------------------------------------------------
// Building blocks. Weight structs hold tensor handles that alias a ParamStore.

struct LinearWeights {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct LayerNormWeights {
  Tensor gamma;
  Tensor beta;
};

struct AttentionWeights {
  LinearWeights qkv;   // [D, 3D]: query, key, value column blocks in that order
  LinearWeights proj;  // [D, D]
  std::size_t heads = 1;
};

enum class Activation { gelu, identity };

struct MlpWeights {
  LinearWeights fc1;
  LinearWeights fc2;
  Activation activation = Activation::gelu;
};

struct EncoderBlockWeights {
  LayerNormWeights norm1;
  AttentionWeights attn;
  LayerNormWeights norm2;
  MlpWeights mlp;
};

struct FusionBlockWeights {
  LayerNormWeights norm1;
  AttentionWeights attn;
  LayerNormWeights norm_time;
  MlpWeights ffn_time;  // wrapped in DCT/IDCT over the time tokens
  LayerNormWeights norm_freq;
  MlpWeights ffn_freq;
};

struct HeadWeights {
  Tensor conv_weight;  // [1, T, 1]
  Tensor conv_bias;    // [1]
  LinearWeights linear;  // [D, 3J]
};

Tensor linear(const Tensor& x, const LinearWeights& w);
Tensor layer_norm(const Tensor& x, const LayerNormWeights& w);
Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w);
Tensor mlp(const Tensor& x, const MlpWeights& w);

/// x [B, f, D]: DCT along the token axis, per-token MLP, inverse DCT.
Tensor freq_mlp(const Tensor& x, const MlpWeights& w);

/// Pre-norm transformer block: x + MSA(LN(x)), then + MLP(LN(.)).
Tensor encoder_block(const Tensor& x, const EncoderBlockWeights& w);

/// z [B, T, D] with tokens [0, split) in the time domain and [split, T) in
/// the frequency domain. Attention is shared over all T tokens; the two
/// groups then take separate feed-forward paths.
Tensor fusion_layer(const Tensor& z, std::size_t split, const FusionBlockWeights& w);

/// z [B, T, D] -> [B, J, 3]: token-axis convolution to one token, then linear.
Tensor regress_head(const Tensor& z, const HeadWeights& w, std::size_t joints);

// ---------------------------------------------------------------------------
// Parameter layout

ParamStore init_params(const ModelConfig& config, Variant variant, std::uint64_t seed);

EncoderBlockWeights spatial_block(const ParamStore& p, std::size_t layer, const ModelConfig& config);
EncoderBlockWeights temporal_block(const ParamStore& p, std::size_t layer, const ModelConfig& config);
FusionBlockWeights fusion_block(const ParamStore& p, std::size_t layer, const ModelConfig& config);
HeadWeights head_weights(const ParamStore& p);

// ---------------------------------------------------------------------------
// Forward passes. Inputs are [B, F, J, 2] (or [F, J, 2] for one sample).

/// Per-frame spatial transformer over J joint tokens; [B, f, J, 2] -> [B, f, J*c].
/// Unbatched input [f, J, 2] gives [f, J*c]; likewise for freq_encode.
Tensor spatial_encode(const Tensor& frames, const ParamStore& params, const ModelConfig& config);

/// DCT of every trajectory, first n coefficients, linear embedding plus the
/// frequency positional table; [B, F, J, 2] -> [B, n, J*c].
Tensor freq_encode(const Tensor& sequence, const ParamStore& params, const ModelConfig& config);

struct ForwardStats {
  std::size_t trunk_tokens = 0;
  std::size_t trunk_layers = 0;
};

/// Returns [B, J, 3] (or [J, 3] for single-sample input), in world units.
Tensor forward(const Tensor& sequence, const ParamStore& params, const ModelConfig& config,
               Variant variant, ForwardStats* stats = nullptr);

/// Mean per-joint Euclidean distance, differentiable; pred and target [..., J, 3].
Tensor mpjpe_loss(const Tensor& pred, const Tensor& target);

}  // namespace pfv2
