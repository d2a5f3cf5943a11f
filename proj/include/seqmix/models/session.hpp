#pragma once

// Stepwise decoding session for Model<T>. Included at the end of model.hpp.

namespace seqmix {

// Owns the per-layer recurrent state of one decoding stream. Copyable, so
// beam search can snapshot hypotheses. All arithmetic runs untaped.
template <class T>
class DecodeSession {
 public:
  DecodeSession(const Model<T>* model) : model_(model) {
    states_.resize(model_->dec_layers_.size());
  }

  // Encoder context for enc-dec models: encode once, cache cross K/V.
  void init_encoder(const std::vector<int>& src_tokens) {
    typename Tape<T>::NoGrad off;
    enc_h_ = model_->encode(src_tokens, 0, nullptr);
    enc_pad_.assign(src_tokens.size(), 0);
    cross_k_.clear();
    cross_v_.clear();
    for (const auto& lp : model_->dec_layers_) {
      cross_k_.push_back(matmul(enc_h_, lp.cwk));
      cross_v_.push_back(matmul(enc_h_, lp.cwv));
    }
  }

  // Advance one token; hidden row retained for logits().
  void feed(int token) {
    typename Tape<T>::NoGrad off;
    const auto& cfg = model_->cfg_;
    Tensor<T> h = embedding_lookup(model_->embedding_, {token});
    if (cfg.is_encdec()) {
      h = scale(h, static_cast<T>(std::sqrt(double(cfg.d_model))));
      h = add(h, sinusoidal_positions<T>(1, cfg.d_model, static_cast<long long>(pos_)));
    }
    for (std::size_t l = 0; l < model_->dec_layers_.size(); ++l)
      h = layer_step(model_->dec_layers_[l], states_[l], h, l);
    last_hidden_ = model_->final_norm(h);
    ++pos_;
  }

  // Vocabulary logits for the most recently fed token, shape [vocab].
  Tensor<T> logits() const {
    typename Tape<T>::NoGrad off;
    if (!last_hidden_.defined()) throw ContractError("DecodeSession: no token fed yet");
    Tensor<T> row = matmul(last_hidden_, model_->head_);
    return reshape(row, {row.cols()});
  }

  std::size_t position() const { return pos_; }

  // Bytes of recurrent state: per-layer caches plus the cached encoder
  // context for enc-dec models (constant in generated length).
  std::size_t state_bytes() const {
    std::size_t b = 0;
    for (const auto& st : states_) b += st.bytes();
    if (enc_h_.defined()) b += enc_h_.size() * sizeof(T);
    for (const auto& t : cross_k_) b += t.size() * sizeof(T);
    for (const auto& t : cross_v_) b += t.size() * sizeof(T);
    return b;
  }

  // Bytes of the growing caches only (KV entries), for scaling probes.
  std::size_t cache_bytes() const {
    std::size_t b = 0;
    for (const auto& st : states_) b += st.kv.bytes();
    return b;
  }

 private:
  Tensor<T> layer_step(const LayerParams<T>& lp, LayerState<T>& st, const Tensor<T>& h,
                       std::size_t layer_idx) {
    const auto& cfg = model_->cfg_;
    Tensor<T> out = h;
    switch (lp.kind) {
      case LayerKind::transformer_block:
      case LayerKind::mha_block:
      case LayerKind::local_mha_block: {
        Tensor<T> x = model_->norm1(lp, h);
        auto row = [](Tensor<T> t) { return reshape(t, {t.cols()}); };
        Tensor<T> q = row(matmul(x, lp.wq));
        Tensor<T> k = row(matmul(x, lp.wk));
        Tensor<T> v = row(matmul(x, lp.wv));
        Tensor<T> y = attention_step(q, k, v, st.kv, model_->attn_cfg(lp, true));
        out = add(h, matmul(reshape(y, {std::size_t(1), y.size()}), lp.wo));
        break;
      }
      case LayerKind::retention_block: {
        Tensor<T> x = model_->norm1(lp, h);
        Tensor<T> q = matmul(x, lp.wq);
        Tensor<T> k = matmul(x, lp.wk);
        Tensor<T> v = matmul(x, lp.wv);
        const std::size_t dh = cfg.d_model / cfg.n_heads;
        const auto gammas = RetNetConfig::default_gammas(cfg.n_heads);
        if (st.ret_S.empty()) st.ret_S.resize(cfg.n_heads);
        RotaryConfig rc;
        std::vector<Tensor<T>> heads;
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
          Tensor<T> qh = apply_rotary(slice_cols(q, hd * dh, (hd + 1) * dh),
                                      static_cast<long long>(pos_),
                                      Positional::rotary_decay, rc, +1);
          Tensor<T> kh = apply_rotary(slice_cols(k, hd * dh, (hd + 1) * dh),
                                      static_cast<long long>(pos_),
                                      Positional::rotary_decay, rc, -1);
          qh = scale(qh, static_cast<T>(1.0 / std::sqrt(double(dh))));
          Tensor<T> vh = slice_cols(v, hd * dh, (hd + 1) * dh);
          auto row = [](Tensor<T> t) { return reshape(t, {t.cols()}); };
          Tensor<T> yh = retnet_step(row(qh), row(kh), row(vh), st.ret_S[hd], gammas[hd]);
          yh = reshape(yh, {std::size_t(1), dh});
          yh = rmsnorm(yh, model_->slice_head_weights(lp.ret_norm_w, hd, dh));
          heads.push_back(yh);
        }
        Tensor<T> y = cfg.n_heads == 1 ? heads[0] : concat_cols(heads);
        out = add(h, matmul(y, lp.wo));
        break;
      }
      case LayerKind::mamba_block: {
        const auto& mp = lp.mamba;
        Tensor<T> x = model_->norm1(lp, h);
        Tensor<T> xin = matmul(x, mp.w_in);
        Tensor<T> gate = matmul(x, mp.w_gate);
        Tensor<T> y_in = mamba_step(reshape(xin, {xin.cols()}), st.mamba, mp);
        Tensor<T> y = swiglu(gate, reshape(y_in, {std::size_t(1), y_in.size()}));
        out = add(h, matmul(y, mp.w_out));
        break;
      }
    }
    if (lp.has_cross && enc_h_.defined()) {
      Tensor<T> x = layernorm(out, lp.cross_norm_w, lp.cross_norm_b);
      Tensor<T> q = matmul(x, lp.cwq);
      AttentionConfig ac;
      ac.d_model = cfg.d_model;
      ac.n_heads = cfg.n_heads;
      ac.causal = false;
      ac.positional = Positional::none;
      ac.max_seq_len = cfg.max_seq_len;
      Tensor<T> y = attention_parallel(q, cross_k_[layer_idx], cross_v_[layer_idx], ac, 0,
                                       &enc_pad_);
      out = add(out, matmul(y, lp.cwo));
    }
    if (lp.has_ffn) out = model_->ffn_sublayer(lp, out, nullptr);
    return out;
  }

  const Model<T>* model_;
  std::vector<LayerState<T>> states_;
  Tensor<T> enc_h_;
  std::vector<uint8_t> enc_pad_;
  std::vector<Tensor<T>> cross_k_, cross_v_;
  Tensor<T> last_hidden_;
  std::size_t pos_ = 0;
};

template <class T>
DecodeSession<T> Model<T>::start_session(const std::vector<int>& src_tokens) const {
  DecodeSession<T> sess(this);
  SpecialTokens sp;
  if (cfg_.is_encdec()) {
    std::vector<int> src = src_tokens;
    src.push_back(sp.eos);
    sess.init_encoder(src);
    sess.feed(sp.bos);
  } else {
    sess.feed(sp.bos);
    for (int t : src_tokens) sess.feed(t);
    sess.feed(sp.sep);
  }
  return sess;
}

}  // namespace seqmix
