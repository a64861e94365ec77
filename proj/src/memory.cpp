#include "onlinehoi/memory.hpp"

#include "onlinehoi/errors.hpp"

#include <algorithm>
#include <cmath>

namespace onlinehoi::memory {

namespace {

Sources combine_sources(const Sources& a, double wa, const Sources& b, double wb) {
  Sources out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      out.emplace_back(a[i].first, wa * a[i].second);
      ++i;
    } else if (i == a.size() || b[j].first < a[i].first) {
      out.emplace_back(b[j].first, wb * b[j].second);
      ++j;
    } else {
      out.emplace_back(a[i].first, wa * a[i].second + wb * b[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

MemorySlot make_slot(const Vec& frame, int source) {
  if (!frame.allFinite()) throw InvalidParameter("memory frame must be finite");
  MemorySlot s;
  s.value = frame;
  s.count = 1;
  if (source >= 0) s.sources = {{source, 1.0}};
  return s;
}

}  // namespace

ShortTermMemory::ShortTermMemory(int capacity) : capacity_(capacity) {
  if (capacity <= 0) throw ConfigError("short-term memory capacity must be positive");
}

std::optional<MemorySlot> ShortTermMemory::push(const Vec& frame, int source) {
  if (!buffer_.empty() && buffer_.front().value.size() != frame.size()) {
    throw ShapeError("short-term memory frame dimension " + std::to_string(frame.size()) + " != " +
                     std::to_string(buffer_.front().value.size()));
  }
  MemorySlot slot;
  slot.value = frame;
  if (source >= 0) slot.sources = {{source, 1.0}};
  if (buffer_.empty()) {
    buffer_.assign(static_cast<std::size_t>(capacity_), slot);
    return std::nullopt;
  }
  MemorySlot evicted = std::move(buffer_.front());
  buffer_.pop_front();
  buffer_.push_back(std::move(slot));
  return evicted;
}

double similarity(const Vec& a, const Vec& b, Similarity kind) {
  const double d = a.dot(b);
  if (kind == Similarity::dot) return d;
  const double n = a.norm() * b.norm();
  return n > 0.0 ? d / n : 0.0;
}

LongTermMemory::LongTermMemory(LongTermOptions options) : options_(options) {
  if (options_.capacity <= 0) throw ConfigError("long-term memory capacity must be positive");
}

void LongTermMemory::admit(const Vec& frame, int source) { admit(make_slot(frame, source)); }

void LongTermMemory::admit(MemorySlot slot) {
  if (options_.reject_nonfinite && !slot.value.allFinite()) throw InvalidParameter("memory frame must be finite");
  if (!buffer_.empty() && buffer_.front().value.size() != slot.value.size()) {
    throw ShapeError("long-term memory frame dimension mismatch");
  }
  buffer_.push_back(std::move(slot));
  consolidate();
}

void LongTermMemory::assign(std::vector<MemorySlot> slots) { buffer_ = std::move(slots); }

MemorySlot LongTermMemory::merge(const MemorySlot& a, const MemorySlot& b) const {
  MemorySlot m;
  m.count = a.count + b.count;
  if (options_.merge == MergeRule::mean) {
    m.value = (a.value + b.value) / 2.0;
    m.sources = combine_sources(a.sources, 0.5, b.sources, 0.5);
  } else {
    const double na = static_cast<double>(a.count);
    const double nb = static_cast<double>(b.count);
    m.value = (na * a.value + nb * b.value) / (na + nb);
    m.sources = combine_sources(a.sources, na / (na + nb), b.sources, nb / (na + nb));
  }
  return m;
}

void LongTermMemory::consolidate() {
  if (buffer_.empty()) throw InvalidState("cannot consolidate an empty long-term memory");
  const std::size_t cap = static_cast<std::size_t>(options_.capacity);
  if (buffer_.size() <= cap) return;
  std::vector<double> sims = similarity_row();
  while (buffer_.size() > cap) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sims.size(); ++i) {
      if (sims[i] > sims[best]) best = i;
    }
    buffer_[best] = merge(buffer_[best], buffer_[best + 1]);
    buffer_.erase(buffer_.begin() + static_cast<std::ptrdiff_t>(best + 1));
    // Only the two similarities touching the merged slot change.
    sims.erase(sims.begin() + static_cast<std::ptrdiff_t>(best));
    if (best > 0) sims[best - 1] = similarity(buffer_[best - 1].value, buffer_[best].value, options_.similarity);
    if (best < sims.size()) sims[best] = similarity(buffer_[best].value, buffer_[best + 1].value, options_.similarity);
  }
}

std::vector<double> LongTermMemory::similarity_row() const {
  std::vector<double> sims;
  if (buffer_.size() < 2) return sims;
  sims.reserve(buffer_.size() - 1);
  for (std::size_t i = 0; i + 1 < buffer_.size(); ++i) {
    sims.push_back(similarity(buffer_[i].value, buffer_[i + 1].value, options_.similarity));
  }
  return sims;
}

std::int64_t LongTermMemory::total_count() const {
  std::int64_t n = 0;
  for (const auto& s : buffer_) n += s.count;
  return n;
}

void MemoryConfig::validate() const {
  if (short_capacity <= 0) throw ConfigError("S (short-term capacity) must be positive");
  if (long_capacity <= 0) throw ConfigError("L_cap (long-term capacity) must be positive");
}

MemoryTracker::MemoryTracker(const MemoryConfig& cfg)
    : cfg_(cfg), ms_(cfg.short_capacity), ml_(LongTermOptions{cfg.long_capacity, cfg.merge, cfg.similarity, false}) {
  cfg_.validate();
}

const MemorySnapshot& MemoryTracker::step(const Vec& frame, int source) {
  auto evicted = ms_.push(frame, source);
  if (cfg_.policy == LongTermPolicy::accumulate) {
    if (evicted) ml_.admit(std::move(*evicted));
  } else {
    ml_.assign(std::vector<MemorySlot>(ms_.buffer().begin(), ms_.buffer().end()));
    ml_.consolidate();
  }
  snap_.short_term.assign(ms_.buffer().begin(), ms_.buffer().end());
  snap_.long_term = ml_.buffer();
  return snap_;
}

std::vector<MemorySnapshot> track_memory(const ag::Mat& frames, const MemoryConfig& cfg) {
  MemoryTracker tracker(cfg);
  std::vector<MemorySnapshot> out;
  out.reserve(static_cast<std::size_t>(frames.rows()));
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    out.push_back(tracker.step(frames.row(t).transpose(), static_cast<int>(t)));
  }
  return out;
}

namespace {

template <typename Range>
void pool_into(Vec& acc, bool& any, const Range& slots) {
  for (const auto& s : slots) {
    if (!any) {
      acc = s.value;
      any = true;
    } else {
      acc = acc.cwiseMax(s.value);
    }
  }
}

bool uses_short(MemoryMode m) { return m == MemoryMode::ms_only || m == MemoryMode::me; }
bool uses_long(MemoryMode m) { return m == MemoryMode::ml_only || m == MemoryMode::me; }

}  // namespace

Vec pool_memory(const MemorySnapshot& snap, MemoryMode mode, Eigen::Index dim) {
  Vec acc = Vec::Zero(dim);
  bool any = false;
  if (uses_short(mode)) pool_into(acc, any, snap.short_term);
  if (uses_long(mode)) pool_into(acc, any, snap.long_term);
  if (acc.size() != dim) throw ShapeError("pooled memory width does not match hidden width");
  return acc;
}

Vec pool_memory(const ShortTermMemory& ms, const LongTermMemory& ml, MemoryMode mode, Eigen::Index dim) {
  Vec acc = Vec::Zero(dim);
  bool any = false;
  if (uses_short(mode)) pool_into(acc, any, ms.buffer());
  if (uses_long(mode)) pool_into(acc, any, ml.buffer());
  if (acc.size() != dim) throw ShapeError("pooled memory width does not match hidden width");
  return acc;
}

Eigen::RowVectorXd fuse_row(const Eigen::RowVectorXd& hidden, const Vec& pooled, Fusion fusion) {
  if (hidden.size() != pooled.size()) throw ShapeError("pooled memory width does not match hidden width");
  switch (fusion) {
    case Fusion::concat_maxpool: {
      Eigen::RowVectorXd out(hidden.size() * 2);
      out << hidden, pooled.transpose();
      return out;
    }
    case Fusion::add:
      return hidden + pooled.transpose();
    case Fusion::max:
      return hidden.cwiseMax(pooled.transpose());
  }
  throw ConfigError("unknown fusion");
}

int fused_width(int dim, const MemoryConfig& cfg) {
  if (cfg.mode == MemoryMode::off) return dim;
  return cfg.fusion == Fusion::concat_maxpool ? 2 * dim : dim;
}

ag::Var memory_fuse(const ag::Var& hidden, const MemoryConfig& cfg) {
  cfg.validate();
  if (cfg.mode == MemoryMode::off) return hidden;
  const auto snaps = track_memory(hidden.value(), cfg);
  ag::SparseRows mix;
  std::vector<std::vector<int>> groups(snaps.size());
  auto add_slots = [&](std::size_t t, const std::vector<MemorySlot>& slots) {
    for (const auto& s : slots) {
      groups[t].push_back(static_cast<int>(mix.rows.size()));
      mix.rows.push_back(s.sources);
    }
  };
  for (std::size_t t = 0; t < snaps.size(); ++t) {
    if (uses_short(cfg.mode)) add_slots(t, snaps[t].short_term);
    if (uses_long(cfg.mode)) add_slots(t, snaps[t].long_term);
  }
  const ag::Var slots = ag::sparse_mix(hidden, mix);
  const ag::Var pooled = ag::group_max(slots, groups);
  switch (cfg.fusion) {
    case Fusion::concat_maxpool:
      return ag::concat_cols({hidden, pooled});
    case Fusion::add:
      return ag::add(hidden, pooled);
    case Fusion::max:
      return ag::maximum(hidden, pooled);
  }
  throw ConfigError("unknown fusion");
}

nlohmann::json to_json(const MemorySlot& slot) {
  nlohmann::json j;
  j["value"] = std::vector<double>(slot.value.data(), slot.value.data() + slot.value.size());
  j["count"] = slot.count;
  nlohmann::json src = nlohmann::json::array();
  for (const auto& [i, w] : slot.sources) src.push_back({i, w});
  j["sources"] = src;
  return j;
}

nlohmann::json to_json(const MemorySnapshot& snap) {
  nlohmann::json j;
  j["short_term"] = nlohmann::json::array();
  for (const auto& s : snap.short_term) j["short_term"].push_back(to_json(s));
  j["long_term"] = nlohmann::json::array();
  for (const auto& s : snap.long_term) j["long_term"].push_back(to_json(s));
  return j;
}

nlohmann::json to_json(const LongTermMemory& ml) {
  nlohmann::json j;
  j["capacity"] = ml.options().capacity;
  j["merge"] = ml.options().merge == MergeRule::mean ? "mean" : "count_weighted";
  j["similarity"] = ml.options().similarity == Similarity::dot ? "dot" : "cosine";
  j["slots"] = nlohmann::json::array();
  for (const auto& s : ml.buffer()) j["slots"].push_back(to_json(s));
  return j;
}

MemorySlot slot_from_json(const nlohmann::json& j) {
  MemorySlot s;
  const auto v = j.at("value").get<std::vector<double>>();
  s.value = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  s.count = j.at("count").get<std::int64_t>();
  for (const auto& p : j.at("sources")) s.sources.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
  return s;
}

std::string to_string(MemoryMode m) {
  switch (m) {
    case MemoryMode::off: return "off";
    case MemoryMode::ms_only: return "ms_only";
    case MemoryMode::ml_only: return "ml_only";
    case MemoryMode::me: return "me";
  }
  return "?";
}

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::concat_maxpool: return "concat_maxpool";
    case Fusion::add: return "add";
    case Fusion::max: return "max";
  }
  return "?";
}

std::string to_string(LongTermPolicy p) { return p == LongTermPolicy::accumulate ? "accumulate" : "literal"; }

MemoryMode parse_memory_mode(const std::string& s) {
  if (s == "off") return MemoryMode::off;
  if (s == "ms_only") return MemoryMode::ms_only;
  if (s == "ml_only") return MemoryMode::ml_only;
  if (s == "me") return MemoryMode::me;
  throw ConfigError("unknown memory mode '" + s + "' (expected off|ms_only|ml_only|me)");
}

Fusion parse_fusion(const std::string& s) {
  if (s == "concat_maxpool") return Fusion::concat_maxpool;
  if (s == "add") return Fusion::add;
  if (s == "max") return Fusion::max;
  throw ConfigError("unknown fusion '" + s + "' (expected concat_maxpool|add|max)");
}

LongTermPolicy parse_long_term_policy(const std::string& s) {
  if (s == "accumulate") return LongTermPolicy::accumulate;
  if (s == "literal") return LongTermPolicy::literal;
  throw ConfigError("unknown long-term policy '" + s + "' (expected accumulate|literal)");
}

}  // namespace onlinehoi::memory
