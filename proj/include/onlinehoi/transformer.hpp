#pragma once

// Pre-norm transformer block used as the attention baseline, and a tagged
// wrapper so models can swap it for a Mamba block by configuration.

#include "onlinehoi/nn.hpp"
#include "onlinehoi/ssm.hpp"

#include <string>
#include <variant>

namespace onlinehoi {

struct TransformerBlockConfig {
  int model_dim = 32;
  int heads = 4;
  int mlp_width = 64;

  void validate() const;
};

/// x + out(attn(LN(x))), then + MLP(LN(.)). With `causal`, frame t attends to
/// frames <= t only.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(nn::ParamStore& store, const std::string& name, const TransformerBlockConfig& cfg, Rng& rng);

  ag::Var forward(const ag::Var& x, bool causal) const;

  static std::size_t parameter_count(const TransformerBlockConfig& cfg);

 private:
  TransformerBlockConfig cfg_;
  nn::LayerNorm ln1_, ln2_;
  nn::Linear q_, k_, v_, o_, fc1_, fc2_;
};

/// MLP width giving a transformer block the parameter count closest to a
/// Mamba block of the same width.
int matched_mlp_width(const ssm::MambaBlockConfig& mamba, int heads);

enum class BlockKind { mamba, causal_transformer };

std::string to_string(BlockKind k);
BlockKind parse_block_kind(const std::string& s);

struct TemporalBlockConfig {
  BlockKind kind = BlockKind::mamba;
  ssm::MambaBlockConfig mamba;
  int heads = 4;  // transformer only; MLP width is matched to the Mamba block
};

class TemporalBlock {
 public:
  TemporalBlock() = default;
  TemporalBlock(nn::ParamStore& store, const std::string& name, const TemporalBlockConfig& cfg, Rng& rng);

  /// `causal` only affects the transformer; the Mamba scan is causal always.
  ag::Var forward(const ag::Var& x, bool causal, bool check_inputs = true) const;

  static std::size_t parameter_count(const TemporalBlockConfig& cfg);

 private:
  std::variant<std::monostate, ssm::MambaBlock, TransformerBlock> block_;
};

}  // namespace onlinehoi
