#include "onlinehoi/transformer.hpp"

#include "onlinehoi/errors.hpp"

#include <cmath>
#include <numeric>

namespace onlinehoi {

void TransformerBlockConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || mlp_width <= 0) throw ConfigError("transformer: dimensions must be positive");
  if (model_dim % heads != 0) throw ConfigError("transformer: model_dim must be divisible by heads");
}

TransformerBlock::TransformerBlock(nn::ParamStore& store, const std::string& name, const TransformerBlockConfig& cfg,
                                   Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const int d = cfg.model_dim;
  ln1_ = nn::LayerNorm(store, name + ".ln1", d);
  q_ = nn::Linear(store, name + ".q", d, d, rng, false);
  k_ = nn::Linear(store, name + ".k", d, d, rng, false);
  v_ = nn::Linear(store, name + ".v", d, d, rng, false);
  o_ = nn::Linear(store, name + ".o", d, d, rng, false);
  ln2_ = nn::LayerNorm(store, name + ".ln2", d);
  fc1_ = nn::Linear(store, name + ".fc1", d, cfg.mlp_width, rng);
  fc2_ = nn::Linear(store, name + ".fc2", cfg.mlp_width, d, rng);
}

ag::Var TransformerBlock::forward(const ag::Var& x, bool causal) const {
  if (x.cols() != cfg_.model_dim) throw ShapeError("transformer: input width mismatch");
  std::vector<int> time(static_cast<std::size_t>(x.rows()));
  std::iota(time.begin(), time.end(), 0);
  const ag::Var n1 = ln1_(x);
  const ag::Var att = ag::attention(q_(n1), k_(n1), v_(n1), cfg_.heads, time, time, causal);
  const ag::Var h = ag::add(x, o_(att));
  return ag::add(h, fc2_(ag::silu(fc1_(ln2_(h)))));
}

std::size_t TransformerBlock::parameter_count(const TransformerBlockConfig& cfg) {
  const std::size_t d = cfg.model_dim, m = cfg.mlp_width;
  return 4 * d + 4 * d * d + d * m + m + m * d + d;
}

int matched_mlp_width(const ssm::MambaBlockConfig& mamba, int heads) {
  const double target = static_cast<double>(ssm::MambaBlock::parameter_count(mamba));
  TransformerBlockConfig t{mamba.model_dim, heads, 1};
  const double fixed = static_cast<double>(TransformerBlock::parameter_count(t)) - (2.0 * mamba.model_dim + 1.0);
  const double m = (target - fixed) / (2.0 * mamba.model_dim + 1.0);
  return std::max(1, static_cast<int>(std::lround(m)));
}

std::string to_string(BlockKind k) { return k == BlockKind::mamba ? "mamba" : "causal_transformer"; }

BlockKind parse_block_kind(const std::string& s) {
  if (s == "mamba") return BlockKind::mamba;
  if (s == "causal_transformer") return BlockKind::causal_transformer;
  throw ConfigError("unknown model kind '" + s + "'");
}

TemporalBlock::TemporalBlock(nn::ParamStore& store, const std::string& name, const TemporalBlockConfig& cfg, Rng& rng) {
  if (cfg.kind == BlockKind::mamba) {
    block_.emplace<ssm::MambaBlock>(store, name, cfg.mamba, rng);
  } else {
    TransformerBlockConfig t{cfg.mamba.model_dim, cfg.heads, matched_mlp_width(cfg.mamba, cfg.heads)};
    block_.emplace<TransformerBlock>(store, name, t, rng);
  }
}

ag::Var TemporalBlock::forward(const ag::Var& x, bool causal, bool check_inputs) const {
  if (const auto* m = std::get_if<ssm::MambaBlock>(&block_)) return m->forward(x, check_inputs);
  if (const auto* t = std::get_if<TransformerBlock>(&block_)) return t->forward(x, causal);
  throw InvalidState("temporal block used before construction");
}

std::size_t TemporalBlock::parameter_count(const TemporalBlockConfig& cfg) {
  if (cfg.kind == BlockKind::mamba) return ssm::MambaBlock::parameter_count(cfg.mamba);
  return TransformerBlock::parameter_count(
      {cfg.mamba.model_dim, cfg.heads, matched_mlp_width(cfg.mamba, cfg.heads)});
}

}  // namespace onlinehoi
