#include "eegc/transformer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace eegc {

using ag::TensorPtr;

ModelConfig ModelConfig::paper_preset(int seq_len) {
  ModelConfig c;
  c.seq_len = seq_len;
  return c;
}

void ModelConfig::validate() const {
  if (n_encoders < 1 || n_decoders < 1)
    throw std::invalid_argument("config: need at least one encoder and decoder");
  if (d_qkv < 1 || n_heads < 1 || d_model < 1 || d_ff < 1)
    throw std::invalid_argument("config: dimensions must be positive");
  if (seq_len < 1) throw std::invalid_argument("config: seq_len must be positive");
  if (!(ln_eps > 0.0)) throw std::invalid_argument("config: ln_eps must be positive");
}

namespace {

struct Init {
  std::mt19937_64 rng;

  TensorPtr matrix(int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto t = ag::Tensor::leaf({rows, cols}, true);
    for (auto& v : t->value) v = dist(rng);
    return t;
  }

  LayerNormWeights norm(int d) {
    LayerNormWeights ln;
    ln.gain = ag::Tensor::full({d}, 1.0, true);
    ln.bias = ag::Tensor::full({d}, 0.0, true);
    return ln;
  }

  MultiHeadWeights mha(const ModelConfig& c) {
    MultiHeadWeights w;
    for (int h = 0; h < c.n_heads; ++h)
      w.heads.push_back({matrix(c.d_model, c.d_qkv), matrix(c.d_model, c.d_qkv),
                         matrix(c.d_model, c.d_qkv)});
    w.w_out = matrix(c.n_heads * c.d_qkv, c.d_model);
    return w;
  }

  FeedForwardWeights ff(const ModelConfig& c) {
    return {matrix(c.d_model, c.d_ff), matrix(c.d_ff, c.d_model)};
  }
};

void collect_mha(const std::string& prefix, const MultiHeadWeights& w,
                 std::vector<std::pair<std::string, TensorPtr>>& out) {
  for (size_t h = 0; h < w.heads.size(); ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    out.emplace_back(hp + ".wq", w.heads[h].wq);
    out.emplace_back(hp + ".wk", w.heads[h].wk);
    out.emplace_back(hp + ".wv", w.heads[h].wv);
  }
  out.emplace_back(prefix + ".out", w.w_out);
}

void collect_norm(const std::string& prefix, const LayerNormWeights& w,
                  std::vector<std::pair<std::string, TensorPtr>>& out) {
  out.emplace_back(prefix + ".g", w.gain);
  out.emplace_back(prefix + ".b", w.bias);
}

TensorPtr feed_forward(const TensorPtr& x, const FeedForwardWeights& w) {
  return ag::matmul(ag::tanh(ag::matmul(x, w.w1)), w.w2);
}

}  // namespace

ModelWeights make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights m;
  m.config = config;
  Init init{std::mt19937_64{seed}};
  m.embed_w = init.matrix(1, config.d_model);
  for (int i = 0; i < config.n_encoders; ++i) {
    EncoderLayerWeights e;
    e.self_attn = init.mha(config);
    e.ln1 = init.norm(config.d_model);
    e.ff = init.ff(config);
    e.ln2 = init.norm(config.d_model);
    m.encoders.push_back(std::move(e));
  }
  for (int i = 0; i < config.n_decoders; ++i) {
    DecoderLayerWeights d;
    d.self_attn = init.mha(config);
    d.ln1 = init.norm(config.d_model);
    d.cross_attn = init.mha(config);
    d.ln2 = init.norm(config.d_model);
    d.ff = init.ff(config);
    d.ln3 = init.norm(config.d_model);
    m.decoders.push_back(std::move(d));
  }
  m.head_w = init.matrix(config.d_model, 1);
  return m;
}

std::vector<std::pair<std::string, TensorPtr>> ModelWeights::named_params()
    const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("embed.w", embed_w);
  for (size_t i = 0; i < encoders.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    collect_mha(p + ".self", encoders[i].self_attn, out);
    collect_norm(p + ".ln1", encoders[i].ln1, out);
    out.emplace_back(p + ".ff.w1", encoders[i].ff.w1);
    out.emplace_back(p + ".ff.w2", encoders[i].ff.w2);
    collect_norm(p + ".ln2", encoders[i].ln2, out);
  }
  for (size_t i = 0; i < decoders.size(); ++i) {
    const std::string p = "dec" + std::to_string(i);
    collect_mha(p + ".self", decoders[i].self_attn, out);
    collect_norm(p + ".ln1", decoders[i].ln1, out);
    collect_mha(p + ".cross", decoders[i].cross_attn, out);
    collect_norm(p + ".ln2", decoders[i].ln2, out);
    out.emplace_back(p + ".ff.w1", decoders[i].ff.w1);
    out.emplace_back(p + ".ff.w2", decoders[i].ff.w2);
    collect_norm(p + ".ln3", decoders[i].ln3, out);
  }
  out.emplace_back("head.w", head_w);
  return out;
}

std::vector<TensorPtr> ModelWeights::params() const {
  std::vector<TensorPtr> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

void ModelWeights::set_requires_grad(bool on) {
  for (auto& t : params()) t->requires_grad = on;
}

TensorPtr attention(const TensorPtr& q, const TensorPtr& k,
                    const TensorPtr& v) {
  const int d = q->last_dim();
  if (k->last_dim() != d || v->last_dim() != d)
    throw std::invalid_argument("attention: d_qkv mismatch");
  auto scores = ag::matmul_scaled(q, ag::transpose_last2(k),
                                  1.0 / std::sqrt(static_cast<double>(d)));
  return ag::matmul(ag::softmax_rows(scores), v);
}

TensorPtr multi_head(const TensorPtr& x, const MultiHeadWeights& w) {
  return multi_head(x, x, w);
}

TensorPtr multi_head(const TensorPtr& query_stream, const TensorPtr& memory,
                     const MultiHeadWeights& w) {
  std::vector<TensorPtr> outs;
  outs.reserve(w.heads.size());
  for (const auto& h : w.heads)
    outs.push_back(attention(ag::matmul(query_stream, h.wq),
                             ag::matmul(memory, h.wk),
                             ag::matmul(memory, h.wv)));
  return ag::matmul(concat_last(outs), w.w_out);
}

TensorPtr encoder_layer(const TensorPtr& x, const EncoderLayerWeights& w,
                        double eps) {
  auto a = ag::layer_norm(ag::add(x, multi_head(x, w.self_attn)), w.ln1.gain,
                          w.ln1.bias, eps);
  return ag::layer_norm(ag::add(a, feed_forward(a, w.ff)), w.ln2.gain,
                        w.ln2.bias, eps);
}

TensorPtr decoder_layer(const TensorPtr& x, const TensorPtr& encoder_out,
                        const DecoderLayerWeights& w, double eps) {
  auto a = ag::layer_norm(ag::add(x, multi_head(x, w.self_attn)), w.ln1.gain,
                          w.ln1.bias, eps);
  auto c = ag::layer_norm(
      ag::add(a, multi_head(a, encoder_out, w.cross_attn)), w.ln2.gain,
      w.ln2.bias, eps);
  return ag::layer_norm(ag::add(c, feed_forward(c, w.ff)), w.ln3.gain,
                        w.ln3.bias, eps);
}

TensorPtr forward_batch(const ModelWeights& w, const TensorPtr& input) {
  const auto& cfg = w.config;
  if (input->shape.size() != 2 || input->shape[1] != cfg.seq_len)
    throw std::invalid_argument("forward: input must be [batch, seq_len]");
  const int b = input->shape[0];

  auto emb = ag::matmul(ag::reshape(input, {b, cfg.seq_len, 1}), w.embed_w);
  auto enc = emb;
  for (const auto& layer : w.encoders)
    enc = encoder_layer(enc, layer, cfg.ln_eps);
  auto dec = emb;
  for (const auto& layer : w.decoders)
    dec = decoder_layer(dec, enc, layer, cfg.ln_eps);
  auto out = ag::tanh(ag::matmul(dec, w.head_w));
  return ag::reshape(out, {b, cfg.seq_len});
}

std::vector<double> forward(const ModelWeights& w,
                            const std::vector<double>& masked_input) {
  if (static_cast<int>(masked_input.size()) != w.config.seq_len)
    throw std::invalid_argument("forward: input length != seq_len");
  ag::NoGradGuard no_grad;
  auto in = ag::Tensor::from_values({1, w.config.seq_len},
                                    masked_input);
  return forward_batch(w, in)->value;
}

}  // namespace eegc
