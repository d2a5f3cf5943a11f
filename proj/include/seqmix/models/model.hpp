#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "seqmix/mixers/attention.hpp"
#include "seqmix/mixers/linear_attention.hpp"
#include "seqmix/mixers/mamba.hpp"
#include "seqmix/mixers/retnet.hpp"
#include "seqmix/models/config.hpp"
#include "seqmix/ops.hpp"

namespace seqmix {

struct SpecialTokens {
  int pad = 0, bos = 1, eos = 2, sep = 3, unk = 4;
  static constexpr std::size_t count = 5;
};

namespace detail {

// Constant 0/1 row mask as a [n x d] tensor (1 keeps the row).
template <class T>
Tensor<T> row_keep_mask(const std::vector<uint8_t>& pad, std::size_t d) {
  Tensor<T> m = Tensor<T>::full({pad.size(), d}, T(1));
  for (std::size_t i = 0; i < pad.size(); ++i)
    if (pad[i]) std::fill(m.data() + i * d, m.data() + (i + 1) * d, T(0));
  return m;
}

}  // namespace detail

template <class T>
struct FfnParams {
  bool swiglu_kind = true;
  Tensor<T> norm_w, norm_b;
  Tensor<T> w1, b1, w2, b2, w3;  // relu: w1,b1,w2,b2; swiglu: w1 gate, w3 value, w2 out
};

template <class T>
struct LayerParams {
  LayerKind kind = LayerKind::transformer_block;
  Tensor<T> norm_w, norm_b;  // pre-norm of the self-mixing sublayer
  // attention (transformer_block, mha_block, local_mha_block)
  Tensor<T> wq, wk, wv, wo;
  // retention
  Tensor<T> ret_norm_w;  // per-head output norm weight, length d_model
  // mamba
  MambaLayerParams<T> mamba;
  // cross-attention (enc-dec decoder layers)
  bool has_cross = false;
  Tensor<T> cross_norm_w, cross_norm_b;
  Tensor<T> cwq, cwk, cwv, cwo;
  // feed-forward
  bool has_ffn = false;
  FfnParams<T> ffn;
};

// Per-layer decode state; exactly one decoding stream owns an instance.
template <class T>
struct LayerState {
  KvCache<T> kv;
  MambaState<T> mamba;
  std::vector<std::vector<T>> ret_S;  // one [d_head x d_head] state per head

  std::size_t bytes() const {
    std::size_t b = kv.bytes() + mamba.bytes();
    for (const auto& s : ret_S) b += s.size() * sizeof(T);
    return b;
  }
};

template <class T>
class DecodeSession;

// One of the seven architectures, assembled from the mixer layers. All
// parameters live in a named registry used by the optimizer and checkpoints.
template <class T>
class Model {
 public:
  static Model build(const ModelConfig& cfg, Prng& rng) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.layout_ = build_layout(cfg);
    const std::size_t d = cfg.d_model, v = cfg.vocab_size;
    const double sd = 1.0 / std::sqrt(double(d));
    m.embedding_ = Tensor<T>::uniform({v, d}, -sd, sd, rng, true);
    m.reg("embedding", m.embedding_);

    if (cfg.is_encdec()) {
      for (std::size_t l = 0; l < cfg.enc_layers(); ++l) {
        LayerParams<T> lp = m.make_layer(
            cfg.arch == Arch::transformer_encdec ? LayerKind::transformer_block
                                                 : LayerKind::mamba_block,
            rng, /*cross=*/false, /*causal_attn=*/false);
        m.reg_layer("encoder." + std::to_string(l), lp);
        m.enc_layers_.push_back(std::move(lp));
      }
      m.enc_norm_w_ = Tensor<T>::full({d}, T(1), true);
      m.enc_norm_b_ = Tensor<T>::zeros({d}, true);
      m.reg("encoder.norm.w", m.enc_norm_w_);
      m.reg("encoder.norm.b", m.enc_norm_b_);
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      LayerParams<T> lp = m.make_layer(m.layout_[l], rng, /*cross=*/cfg.is_encdec(),
                                       /*causal_attn=*/true);
      m.reg_layer("decoder." + std::to_string(l), lp);
      m.dec_layers_.push_back(std::move(lp));
    }

    m.final_norm_w_ = Tensor<T>::full({d}, T(1), true);
    m.reg("final_norm.w", m.final_norm_w_);
    if (m.use_layernorm()) {
      m.final_norm_b_ = Tensor<T>::zeros({d}, true);
      m.reg("final_norm.b", m.final_norm_b_);
    }
    m.head_ = Tensor<T>::uniform({d, v}, -sd, sd, rng, true);
    m.reg("head", m.head_);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  const LayerLayout& layout() const { return layout_; }
  std::vector<std::pair<std::string, Tensor<T>>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  bool use_layernorm() const { return cfg_.is_encdec(); }

  // --- parallel (training) forward -----------------------------------------

  // Decoder-only hidden states over a left-padded token row.
  Tensor<T> decoder_hidden(const std::vector<int>& tokens, std::size_t n_pads,
                           Prng* drop = nullptr) const {
    if (cfg_.is_encdec())
      throw ContractError("decoder_hidden: encoder-decoder model needs encode() first");
    std::vector<uint8_t> pad = pad_mask(tokens.size(), n_pads);
    Tensor<T> h = embed(tokens, n_pads, drop);
    for (auto& lp : dec_layers_)
      h = layer_forward(lp, h, n_pads, &pad, /*enc=*/nullptr, nullptr, drop);
    return final_norm(h);
  }

  Tensor<T> encode(const std::vector<int>& src, std::size_t n_pads, Prng* drop = nullptr) const {
    if (!cfg_.is_encdec()) throw ContractError("encode: not an encoder-decoder model");
    std::vector<uint8_t> pad = pad_mask(src.size(), n_pads);
    Tensor<T> h = embed(src, n_pads, drop);
    for (auto& lp : enc_layers_)
      h = layer_forward(lp, h, n_pads, &pad, nullptr, nullptr, drop, /*is_encoder=*/true);
    return layernorm(h, enc_norm_w_, enc_norm_b_);
  }

  Tensor<T> decoder_hidden_encdec(const std::vector<int>& tgt_in, std::size_t tgt_pads,
                                  const Tensor<T>& enc_h, const std::vector<uint8_t>& enc_pad,
                                  Prng* drop = nullptr) const {
    std::vector<uint8_t> pad = pad_mask(tgt_in.size(), tgt_pads);
    Tensor<T> h = embed(tgt_in, tgt_pads, drop);
    for (auto& lp : dec_layers_)
      h = layer_forward(lp, h, tgt_pads, &pad, &enc_h, &enc_pad, drop);
    return final_norm(h);
  }

  // Vocabulary logits for hidden rows [lo, hi).
  Tensor<T> logits_rows(const Tensor<T>& hidden, std::size_t lo, std::size_t hi) const {
    return matmul(slice_rows(hidden, lo, hi), head_);
  }

  // Full-sequence logits, decoder-only convenience for eval and tests.
  Tensor<T> full_logits(const std::vector<int>& tokens, std::size_t n_pads = 0) const {
    Tensor<T> h = decoder_hidden(tokens, n_pads, nullptr);
    return matmul(h, head_);
  }

  DecodeSession<T> start_session(const std::vector<int>& src_tokens) const;

 private:
  friend class DecodeSession<T>;

  void reg(const std::string& name, const Tensor<T>& t) { params_.emplace_back(name, t); }

  void reg_layer(const std::string& prefix, const LayerParams<T>& lp) {
    auto add = [&](const char* n, const Tensor<T>& t) {
      if (t.defined()) reg(prefix + "." + n, t);
    };
    add("norm.w", lp.norm_w);
    add("norm.b", lp.norm_b);
    add("attn.wq", lp.wq);
    add("attn.wk", lp.wk);
    add("attn.wv", lp.wv);
    add("attn.wo", lp.wo);
    add("ret.norm.w", lp.ret_norm_w);
    if (lp.kind == LayerKind::mamba_block) {
      add("mamba.w_in", lp.mamba.w_in);
      add("mamba.w_gate", lp.mamba.w_gate);
      add("mamba.conv_kernel", lp.mamba.conv_kernel);
      add("mamba.conv_bias", lp.mamba.conv_bias);
      add("mamba.w_B", lp.mamba.w_B);
      add("mamba.w_C", lp.mamba.w_C);
      add("mamba.w_delta", lp.mamba.w_delta);
      add("mamba.b_delta", lp.mamba.b_delta);
      add("mamba.a_log", lp.mamba.a_log);
      add("mamba.w_out", lp.mamba.w_out);
    }
    add("cross.norm.w", lp.cross_norm_w);
    add("cross.norm.b", lp.cross_norm_b);
    add("cross.wq", lp.cwq);
    add("cross.wk", lp.cwk);
    add("cross.wv", lp.cwv);
    add("cross.wo", lp.cwo);
    add("ffn.norm.w", lp.ffn.norm_w);
    add("ffn.norm.b", lp.ffn.norm_b);
    add("ffn.w1", lp.ffn.w1);
    add("ffn.b1", lp.ffn.b1);
    add("ffn.w2", lp.ffn.w2);
    add("ffn.b2", lp.ffn.b2);
    add("ffn.w3", lp.ffn.w3);
  }

  LayerParams<T> make_layer(LayerKind kind, Prng& rng, bool cross, bool causal_attn) {
    (void)causal_attn;
    const std::size_t d = cfg_.d_model;
    const double sd = 1.0 / std::sqrt(double(d));
    LayerParams<T> lp;
    lp.kind = kind;
    lp.norm_w = Tensor<T>::full({d}, T(1), true);
    if (use_layernorm()) lp.norm_b = Tensor<T>::zeros({d}, true);
    const bool wants_attn = kind == LayerKind::transformer_block ||
                            kind == LayerKind::mha_block ||
                            kind == LayerKind::local_mha_block ||
                            kind == LayerKind::retention_block;
    if (wants_attn) {
      lp.wq = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
      lp.wk = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
      lp.wv = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
      lp.wo = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
    }
    if (kind == LayerKind::retention_block)
      lp.ret_norm_w = Tensor<T>::full({d}, T(1), true);
    if (kind == LayerKind::mamba_block)
      lp.mamba = MambaLayerParams<T>::init(d, rng, cfg_.mamba_r, cfg_.mamba_expand,
                                           cfg_.mamba_conv, cfg_.dropout_p);
    if (cross) {
      lp.has_cross = true;
      lp.cross_norm_w = Tensor<T>::full({d}, T(1), true);
      lp.cross_norm_b = Tensor<T>::zeros({d}, true);
      lp.cwq = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
      lp.cwk = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
      lp.cwv = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
      lp.cwo = Tensor<T>::uniform({d, d}, -sd, sd, rng, true);
    }
    // FFN: every transformer/retention block; also enc-dec mamba layers.
    lp.has_ffn = kind == LayerKind::transformer_block || kind == LayerKind::retention_block ||
                 (kind == LayerKind::mamba_block && cfg_.is_encdec());
    if (lp.has_ffn) {
      auto& f = lp.ffn;
      f.swiglu_kind = !cfg_.is_encdec();
      f.norm_w = Tensor<T>::full({d}, T(1), true);
      if (use_layernorm()) f.norm_b = Tensor<T>::zeros({d}, true);
      const std::size_t df = cfg_.d_ffn;
      const double sf = 1.0 / std::sqrt(double(df));
      f.w1 = Tensor<T>::uniform({d, df}, -sd, sd, rng, true);
      f.w2 = Tensor<T>::uniform({df, d}, -sf, sf, rng, true);
      if (f.swiglu_kind) {
        f.w3 = Tensor<T>::uniform({d, df}, -sd, sd, rng, true);
      } else {
        f.b1 = Tensor<T>::zeros({df}, true);
        f.b2 = Tensor<T>::zeros({d}, true);
      }
    }
    return lp;
  }

  std::vector<uint8_t> pad_mask(std::size_t n, std::size_t n_pads) const {
    std::vector<uint8_t> pad(n, 0);
    for (std::size_t i = 0; i < n_pads && i < n; ++i) pad[i] = 1;
    return pad;
  }

  Tensor<T> norm1(const LayerParams<T>& lp, const Tensor<T>& h) const {
    return use_layernorm() ? layernorm(h, lp.norm_w, lp.norm_b) : rmsnorm(h, lp.norm_w);
  }

  Tensor<T> final_norm(const Tensor<T>& h) const {
    return use_layernorm() ? layernorm(h, final_norm_w_, final_norm_b_)
                           : rmsnorm(h, final_norm_w_);
  }

  Tensor<T> embed(const std::vector<int>& tokens, std::size_t n_pads, Prng* drop) const {
    Tensor<T> h = embedding_lookup(embedding_, tokens);
    if (cfg_.is_encdec()) {
      // Sinusoidal positions; left pads shift real tokens to position 0.
      h = scale(h, static_cast<T>(std::sqrt(double(cfg_.d_model))));
      h = add(h, sinusoidal_positions<T>(tokens.size(), cfg_.d_model,
                                         -static_cast<long long>(n_pads)));
    }
    if (drop && cfg_.dropout_p > 0) h = dropout(h, cfg_.dropout_p, *drop);
    return h;
  }

  AttentionConfig attn_cfg(const LayerParams<T>& lp, bool causal) const {
    AttentionConfig ac;
    ac.d_model = cfg_.d_model;
    ac.n_heads = cfg_.n_heads;
    ac.causal = causal;
    ac.max_seq_len = cfg_.max_seq_len;
    if (lp.kind == LayerKind::local_mha_block) ac.window = cfg_.window;
    ac.positional = cfg_.is_encdec() ? Positional::none : Positional::rotary;
    return ac;
  }

  Tensor<T> attention_sublayer(const LayerParams<T>& lp, const Tensor<T>& h,
                               std::size_t n_pads, const std::vector<uint8_t>* pad,
                               bool causal, Prng* drop) const {
    Tensor<T> x = norm1(lp, h);
    Tensor<T> q = matmul(x, lp.wq);
    Tensor<T> k = matmul(x, lp.wk);
    Tensor<T> v = matmul(x, lp.wv);
    Tensor<T> y = attention_parallel(q, k, v, attn_cfg(lp, causal),
                                     -static_cast<long long>(n_pads), pad);
    y = matmul(y, lp.wo);
    if (drop && cfg_.dropout_p > 0) y = dropout(y, cfg_.dropout_p, *drop);
    return add(h, y);
  }

  Tensor<T> retention_sublayer(const LayerParams<T>& lp, const Tensor<T>& h,
                               std::size_t n_pads, const std::vector<uint8_t>* pad,
                               Prng* drop) const {
    Tensor<T> x = norm1(lp, h);
    if (pad && n_pads > 0) x = mul(x, detail::row_keep_mask<T>(*pad, cfg_.d_model));
    Tensor<T> q = matmul(x, lp.wq);
    Tensor<T> k = matmul(x, lp.wk);
    Tensor<T> v = matmul(x, lp.wv);
    const std::size_t dh = cfg_.d_model / cfg_.n_heads;
    const auto gammas = RetNetConfig::default_gammas(cfg_.n_heads);
    RotaryConfig rc;
    std::vector<Tensor<T>> heads;
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      Tensor<T> qh = slice_cols(q, hd * dh, (hd + 1) * dh);
      Tensor<T> kh = slice_cols(k, hd * dh, (hd + 1) * dh);
      Tensor<T> vh = slice_cols(v, hd * dh, (hd + 1) * dh);
      const long long pos0 = -static_cast<long long>(n_pads);
      qh = apply_rotary(qh, pos0, Positional::rotary_decay, rc, +1);
      kh = apply_rotary(kh, pos0, Positional::rotary_decay, rc, -1);
      qh = scale(qh, static_cast<T>(1.0 / std::sqrt(double(dh))));
      Tensor<T> yh = retnet_parallel(qh, kh, vh, gammas[hd]);
      yh = rmsnorm(yh, slice_head_weights(lp.ret_norm_w, hd, dh));
      heads.push_back(yh);
    }
    Tensor<T> y = cfg_.n_heads == 1 ? heads[0] : concat_cols(heads);
    y = matmul(y, lp.wo);
    if (drop && cfg_.dropout_p > 0) y = dropout(y, cfg_.dropout_p, *drop);
    return add(h, y);
  }

  Tensor<T> slice_head_weights(const Tensor<T>& w, std::size_t hd, std::size_t dh) const {
    return reshape(slice_cols(reshape(w, {std::size_t(1), w.size()}), hd * dh, (hd + 1) * dh),
                   {dh});
  }

  Tensor<T> mamba_sublayer(const LayerParams<T>& lp, const Tensor<T>& h, std::size_t n_pads,
                           const std::vector<uint8_t>* pad, Prng* drop) const {
    const auto& mp = lp.mamba;
    Tensor<T> x = norm1(lp, h);
    Tensor<T> xin = matmul(x, mp.w_in);
    Tensor<T> gate = matmul(x, mp.w_gate);
    // Padding rule: zero the inner stream before and after the convolution.
    Tensor<T> keep;
    if (pad && n_pads > 0) {
      keep = detail::row_keep_mask<T>(*pad, mp.d_inner());
      xin = mul(xin, keep);
    }
    Tensor<T> conv = add_rowvec(causal_depthwise_conv1d(xin, mp.conv_kernel), mp.conv_bias);
    if (keep.defined()) conv = mul(conv, keep);
    Tensor<T> u = silu(conv);
    Tensor<T> B = matmul(u, mp.w_B);
    Tensor<T> C = matmul(u, mp.w_C);
    Tensor<T> delta = softplus(add_rowvec(matmul(u, mp.w_delta), mp.b_delta));
    Tensor<T> a_cont = scale(exp(mp.a_log), T(-1));
    Tensor<T> y = selective_scan(u, delta, a_cont, B, C);
    y = swiglu(gate, y);
    y = matmul(y, mp.w_out);
    // Dropout after the last linear projection of the block.
    if (drop && cfg_.dropout_p > 0) y = dropout(y, cfg_.dropout_p, *drop);
    return add(h, y);
  }

  Tensor<T> cross_sublayer(const LayerParams<T>& lp, const Tensor<T>& h,
                           const Tensor<T>& enc_h, const std::vector<uint8_t>* enc_pad,
                           Prng* drop) const {
    Tensor<T> x = layernorm(h, lp.cross_norm_w, lp.cross_norm_b);
    Tensor<T> q = matmul(x, lp.cwq);
    Tensor<T> k = matmul(enc_h, lp.cwk);
    Tensor<T> v = matmul(enc_h, lp.cwv);
    AttentionConfig ac;
    ac.d_model = cfg_.d_model;
    ac.n_heads = cfg_.n_heads;
    ac.causal = false;
    ac.positional = Positional::none;
    ac.max_seq_len = cfg_.max_seq_len;
    Tensor<T> y = attention_parallel(q, k, v, ac, 0, enc_pad);
    y = matmul(y, lp.cwo);
    if (drop && cfg_.dropout_p > 0) y = dropout(y, cfg_.dropout_p, *drop);
    return add(h, y);
  }

  Tensor<T> ffn_sublayer(const LayerParams<T>& lp, const Tensor<T>& h, Prng* drop) const {
    const auto& f = lp.ffn;
    Tensor<T> x = use_layernorm() ? layernorm(h, f.norm_w, f.norm_b) : rmsnorm(h, f.norm_w);
    Tensor<T> y;
    if (f.swiglu_kind) {
      y = matmul(swiglu(matmul(x, f.w1), matmul(x, f.w3)), f.w2);
    } else {
      y = add_rowvec(matmul(relu(add_rowvec(matmul(x, f.w1), f.b1)), f.w2), f.b2);
    }
    if (drop && cfg_.dropout_p > 0) y = dropout(y, cfg_.dropout_p, *drop);
    return add(h, y);
  }

  // Encoder layers mix bidirectionally; every decoder self-mixer is causal.
  Tensor<T> layer_forward(const LayerParams<T>& lp, Tensor<T> h, std::size_t n_pads,
                          const std::vector<uint8_t>* pad, const Tensor<T>* enc_h,
                          const std::vector<uint8_t>* enc_pad, Prng* drop,
                          bool is_encoder = false) const {
    switch (lp.kind) {
      case LayerKind::transformer_block:
      case LayerKind::mha_block:
      case LayerKind::local_mha_block:
        h = attention_sublayer(lp, h, n_pads, pad, /*causal=*/!is_encoder, drop);
        break;
      case LayerKind::retention_block:
        h = retention_sublayer(lp, h, n_pads, pad, drop);
        break;
      case LayerKind::mamba_block:
        h = mamba_sublayer(lp, h, n_pads, pad, drop);
        break;
    }
    if (lp.has_cross && enc_h) h = cross_sublayer(lp, h, *enc_h, enc_pad, drop);
    if (lp.has_ffn) h = ffn_sublayer(lp, h, drop);
    return h;
  }

  ModelConfig cfg_;
  LayerLayout layout_;
  Tensor<T> embedding_;
  std::vector<LayerParams<T>> enc_layers_;
  std::vector<LayerParams<T>> dec_layers_;
  Tensor<T> enc_norm_w_, enc_norm_b_;
  Tensor<T> final_norm_w_, final_norm_b_;
  Tensor<T> head_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

}  // namespace seqmix

#include "seqmix/models/session.hpp"
