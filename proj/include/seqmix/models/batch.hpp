#pragma once

#include <vector>

#include "seqmix/models/model.hpp"

namespace seqmix {

// Left-padded token batch. Decoder-only rows hold [bos] src [sep] tgt [eos];
// enc-dec keeps separate source and target matrices. The loss mask marks
// prediction positions whose next token is a target token (or eos).
struct Batch {
  bool encdec = false;
  std::vector<std::vector<int>> tokens;     // decoder-only rows, left-padded
  std::vector<std::size_t> n_pads;          // per row
  std::vector<std::size_t> loss_lo;         // first prediction position
  std::vector<std::size_t> loss_hi;         // one past last prediction position

  std::vector<std::vector<int>> src;        // enc-dec: src [eos], left-padded
  std::vector<std::size_t> src_pads;
  std::vector<std::vector<int>> tgt_in;     // enc-dec: [bos] tgt, left-padded
  std::vector<std::vector<int>> labels;     // enc-dec: tgt [eos] aligned to tgt_in
  std::vector<std::size_t> tgt_pads;

  std::size_t size() const { return encdec ? src.size() : tokens.size(); }
};

using TokenPair = std::pair<std::vector<int>, std::vector<int>>;  // (src, tgt) ids

inline Batch make_decoder_batch(const std::vector<TokenPair>& samples,
                                const SpecialTokens& sp = {},
                                std::size_t extra_left_pad = 0) {
  Batch b;
  std::size_t width = 0;
  std::vector<std::vector<int>> raw;
  std::vector<std::size_t> sep_at;
  for (const auto& [src, tgt] : samples) {
    std::vector<int> row;
    row.reserve(src.size() + tgt.size() + 3);
    row.push_back(sp.bos);
    row.insert(row.end(), src.begin(), src.end());
    row.push_back(sp.sep);
    sep_at.push_back(row.size() - 1);
    row.insert(row.end(), tgt.begin(), tgt.end());
    row.push_back(sp.eos);
    width = std::max(width, row.size() + extra_left_pad);
    raw.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t pads = width - raw[i].size();
    std::vector<int> row(pads, sp.pad);
    row.insert(row.end(), raw[i].begin(), raw[i].end());
    b.tokens.push_back(std::move(row));
    b.n_pads.push_back(pads);
    // Position p predicts token p+1; targets start right after <sep>.
    b.loss_lo.push_back(pads + sep_at[i]);
    b.loss_hi.push_back(width - 1);
  }
  return b;
}

inline Batch make_encdec_batch(const std::vector<TokenPair>& samples,
                               const SpecialTokens& sp = {},
                               std::size_t extra_left_pad = 0) {
  Batch b;
  b.encdec = true;
  std::size_t src_w = 0, tgt_w = 0;
  for (const auto& [src, tgt] : samples) {
    src_w = std::max(src_w, src.size() + 1 + extra_left_pad);
    tgt_w = std::max(tgt_w, tgt.size() + 1 + extra_left_pad);
  }
  for (const auto& [src, tgt] : samples) {
    std::vector<int> s(src_w - src.size() - 1, sp.pad);
    b.src_pads.push_back(s.size());
    s.insert(s.end(), src.begin(), src.end());
    s.push_back(sp.eos);
    b.src.push_back(std::move(s));

    std::vector<int> ti(tgt_w - tgt.size() - 1, sp.pad);
    b.tgt_pads.push_back(ti.size());
    ti.push_back(sp.bos);
    // labels align with tgt_in: position p predicts labels[p].
    std::vector<int> lab(b.tgt_pads.back(), sp.pad);
    ti.insert(ti.end(), tgt.begin(), tgt.end());
    lab.insert(lab.end(), tgt.begin(), tgt.end());
    lab.push_back(sp.eos);
    b.tgt_in.push_back(std::move(ti));
    b.labels.push_back(std::move(lab));
  }
  return b;
}

// Mean cross-entropy over loss-masked prediction positions (Appendix-style
// target-only loss). Returns the scalar loss tensor; masked_count reports
// how many positions contributed.
template <class T>
Tensor<T> batch_loss(const Model<T>& model, const Batch& batch, Prng* drop,
                     std::size_t* masked_count = nullptr) {
  std::vector<Tensor<T>> losses;
  std::size_t count = 0;
  if (!batch.encdec) {
    for (std::size_t i = 0; i < batch.tokens.size(); ++i) {
      const auto& row = batch.tokens[i];
      const std::size_t lo = batch.loss_lo[i], hi = batch.loss_hi[i];
      if (lo >= hi) continue;
      Tensor<T> h = model.decoder_hidden(row, batch.n_pads[i], drop);
      Tensor<T> logits = model.logits_rows(h, lo, hi);
      std::vector<int> targets(row.begin() + lo + 1, row.begin() + hi + 1);
      losses.push_back(sum(cross_entropy_rows(logits, targets)));
      count += targets.size();
    }
  } else {
    for (std::size_t i = 0; i < batch.src.size(); ++i) {
      Tensor<T> enc_h = model.encode(batch.src[i], batch.src_pads[i], drop);
      std::vector<uint8_t> enc_pad(batch.src[i].size(), 0);
      for (std::size_t p = 0; p < batch.src_pads[i]; ++p) enc_pad[p] = 1;
      Tensor<T> h = model.decoder_hidden_encdec(batch.tgt_in[i], batch.tgt_pads[i], enc_h,
                                                enc_pad, drop);
      const std::size_t lo = batch.tgt_pads[i], hi = batch.tgt_in[i].size();
      Tensor<T> logits = model.logits_rows(h, lo, hi);
      std::vector<int> targets(batch.labels[i].begin() + lo, batch.labels[i].end());
      losses.push_back(sum(cross_entropy_rows(logits, targets)));
      count += targets.size();
    }
  }
  if (count == 0) throw ContractError("batch_loss: every position is masked");
  if (masked_count) *masked_count = count;
  Tensor<T> total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, static_cast<T>(1.0 / double(count)));
}

}  // namespace seqmix
