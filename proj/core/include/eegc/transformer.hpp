#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eegc/autograd.hpp"

namespace eegc {

// Architecture hyperparameters of one encoder-decoder stage.
struct ModelConfig {
  int n_encoders = 6;
  int n_decoders = 6;
  int d_qkv = 16;   // size of each query/key/value head
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int seq_len = 100;
  double ln_eps = 1e-5;

  static ModelConfig paper_preset(int seq_len = 100);
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct AttentionHeadWeights {
  ag::TensorPtr wq, wk, wv;  // each [d_model, d_qkv]
};

struct MultiHeadWeights {
  std::vector<AttentionHeadWeights> heads;
  ag::TensorPtr w_out;  // [n_heads * d_qkv, d_model]
};

struct LayerNormWeights {
  ag::TensorPtr gain, bias;  // [d_model]
};

struct FeedForwardWeights {
  ag::TensorPtr w1;  // [d_model, d_ff]
  ag::TensorPtr w2;  // [d_ff, d_model]
};

struct EncoderLayerWeights {
  MultiHeadWeights self_attn;
  LayerNormWeights ln1;
  FeedForwardWeights ff;
  LayerNormWeights ln2;
};

struct DecoderLayerWeights {
  MultiHeadWeights self_attn;
  LayerNormWeights ln1;
  MultiHeadWeights cross_attn;
  LayerNormWeights ln2;
  FeedForwardWeights ff;
  LayerNormWeights ln3;
};

// All trainable parameters of one stage. There are no biases outside the
// layer norms; the embedding and output head are plain linear maps.
struct ModelWeights {
  ModelConfig config;
  ag::TensorPtr embed_w;  // [1, d_model]
  std::vector<EncoderLayerWeights> encoders;
  std::vector<DecoderLayerWeights> decoders;
  ag::TensorPtr head_w;  // [d_model, 1]

  std::vector<ag::TensorPtr> params() const;
  std::vector<std::pair<std::string, ag::TensorPtr>> named_params() const;
  void set_requires_grad(bool on);
};

// Fresh weights, uniform on +-sqrt(6/(fan_in+fan_out)) per matrix, layer
// norm gains 1 and biases 0. Parameter draw order is fixed, so a seed pins
// every value.
ModelWeights make_model(const ModelConfig& config, std::uint64_t seed);

// softmax(q k^T / sqrt(d_qkv)) v; works on [n,d_qkv] or batched [b,n,d_qkv].
ag::TensorPtr attention(const ag::TensorPtr& q, const ag::TensorPtr& k,
                        const ag::TensorPtr& v);

// Ensemble of per-head attentions over the same stream, concatenated and
// projected back to d_model.
ag::TensorPtr multi_head(const ag::TensorPtr& x, const MultiHeadWeights& w);
// Cross flavour: queries from query_stream, keys/values from memory.
ag::TensorPtr multi_head(const ag::TensorPtr& query_stream,
                         const ag::TensorPtr& memory,
                         const MultiHeadWeights& w);

ag::TensorPtr encoder_layer(const ag::TensorPtr& x,
                            const EncoderLayerWeights& w, double eps);
ag::TensorPtr decoder_layer(const ag::TensorPtr& x,
                            const ag::TensorPtr& encoder_out,
                            const DecoderLayerWeights& w, double eps);

// Full stage on a [b, seq_len] batch: linear per-sample embedding (no
// positional encoding), n_encoders encoders, n_decoders decoders fed the
// same embedded stream with cross-attention into the last encoder output,
// linear head, tanh. One shot, no causal masking.
ag::TensorPtr forward_batch(const ModelWeights& w, const ag::TensorPtr& input);

// Convenience single-segment inference path; gradients are not recorded.
std::vector<double> forward(const ModelWeights& w,
                            const std::vector<double>& masked_input);

}  // namespace eegc
