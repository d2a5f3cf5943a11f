#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqmix/errors.hpp"

namespace seqmix {

enum class Arch {
  transformer_encdec,
  transformer_pp,
  retnet,
  mamba,
  mamba_mha,
  mamba_local,
  mamba_encdec,
};

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::transformer_encdec: return "transformer_encdec";
    case Arch::transformer_pp: return "transformer_pp";
    case Arch::retnet: return "retnet";
    case Arch::mamba: return "mamba";
    case Arch::mamba_mha: return "mamba_mha";
    case Arch::mamba_local: return "mamba_local";
    case Arch::mamba_encdec: return "mamba_encdec";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  for (Arch a : {Arch::transformer_encdec, Arch::transformer_pp, Arch::retnet, Arch::mamba,
                 Arch::mamba_mha, Arch::mamba_local, Arch::mamba_encdec})
    if (s == arch_name(a)) return a;
  throw ConfigError("unknown arch '" + s + "'");
}

enum class LayerKind { mamba_block, mha_block, local_mha_block, transformer_block,
                       retention_block };

// Ordered decoder layer kinds; hybrids place attention exactly at
// attention_positions (1-based) and nowhere else.
using LayerLayout = std::vector<LayerKind>;

struct ModelConfig {
  Arch arch = Arch::transformer_pp;
  std::size_t n_layers = 2;      // decoder layers
  std::size_t n_enc_layers = 0;  // encoder layers; 0 means same as n_layers
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  double dropout_p = 0.0;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 512;
  std::vector<std::size_t> attention_positions;  // 1-based, hybrids only
  std::optional<std::size_t> window;             // sliding-window size
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 4000;
  double weight_decay = 0.001;
  // Mamba block internals
  std::size_t mamba_r = 16;
  std::size_t mamba_expand = 2;
  std::size_t mamba_conv = 4;

  bool is_encdec() const {
    return arch == Arch::transformer_encdec || arch == Arch::mamba_encdec;
  }
  bool is_hybrid() const { return arch == Arch::mamba_mha || arch == Arch::mamba_local; }
  std::size_t enc_layers() const { return n_enc_layers ? n_enc_layers : n_layers; }

  // Attention at N/2 and N, the ablation winner used by the hybrids.
  static std::vector<std::size_t> default_hybrid_positions(std::size_t n_layers) {
    if (n_layers < 2) return {n_layers};
    return {n_layers / 2, n_layers};
  }

  void validate() const {
    if (n_layers == 0) throw ConfigError("model: n_layers must be positive");
    if (d_model == 0) throw ConfigError("model: d_model must be positive");
    if (vocab_size == 0) throw ConfigError("model: vocab_size must be positive");
    const bool needs_heads = arch != Arch::mamba;
    if (needs_heads && (n_heads == 0 || d_model % n_heads != 0))
      throw ConfigError("model: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    if (is_hybrid()) {
      if (attention_positions.empty())
        throw ConfigError("model: hybrid arch requires attention_positions");
      for (std::size_t p : attention_positions)
        if (p < 1 || p > n_layers)
          throw ConfigError("model: attention position " + std::to_string(p) +
                            " outside [1, " + std::to_string(n_layers) + "]");
    }
    if (arch == Arch::mamba_local && !window)
      throw ConfigError("model: mamba_local requires a window size");
    if (window && (*window == 0 || *window > max_seq_len))
      throw ConfigError("model: window outside (0, max_seq_len]");
  }
};

inline LayerLayout build_layout(const ModelConfig& cfg) {
  cfg.validate();
  LayerLayout layout;
  layout.reserve(cfg.n_layers);
  switch (cfg.arch) {
    case Arch::transformer_pp:
    case Arch::transformer_encdec:
      layout.assign(cfg.n_layers, LayerKind::transformer_block);
      break;
    case Arch::retnet:
      layout.assign(cfg.n_layers, LayerKind::retention_block);
      break;
    case Arch::mamba:
    case Arch::mamba_encdec:
      layout.assign(cfg.n_layers, LayerKind::mamba_block);
      break;
    case Arch::mamba_mha:
    case Arch::mamba_local: {
      layout.assign(cfg.n_layers, LayerKind::mamba_block);
      const LayerKind attn =
          cfg.arch == Arch::mamba_mha ? LayerKind::mha_block : LayerKind::local_mha_block;
      for (std::size_t p : cfg.attention_positions) layout[p - 1] = attn;
      break;
    }
  }
  return layout;
}

}  // namespace seqmix
