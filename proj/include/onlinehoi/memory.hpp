#pragma once

// Short-term (FIFO) and long-term (similarity-merged) frame memories, their
// max-pooled fusion, and injection into a decoder input sequence.
//
// Every slot carries its provenance: a weighted list of source frame indices
// whose combination reproduces the slot value. Models use it to route
// gradients through the memory; the data-level API ignores it.

#include "onlinehoi/autograd.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace onlinehoi::memory {

using Vec = Eigen::VectorXd;
using Sources = std::vector<std::pair<int, double>>;

struct MemorySlot {
  Vec value;
  std::int64_t count = 1;  // raw frames absorbed
  Sources sources;         // sorted by frame index
};

class ShortTermMemory {
 public:
  explicit ShortTermMemory(int capacity);

  /// The first push fills the whole buffer with copies of the frame. Later
  /// pushes evict the oldest slot and return it.
  std::optional<MemorySlot> push(const Vec& frame, int source = -1);

  const std::deque<MemorySlot>& buffer() const { return buffer_; }
  int capacity() const { return capacity_; }
  bool empty() const { return buffer_.empty(); }
  std::size_t size() const { return buffer_.size(); }

 private:
  int capacity_;
  std::deque<MemorySlot> buffer_;
};

enum class MergeRule { mean, count_weighted };
enum class Similarity { dot, cosine };

struct LongTermOptions {
  int capacity = 8;
  MergeRule merge = MergeRule::mean;
  Similarity similarity = Similarity::dot;
  bool reject_nonfinite = true;
};

double similarity(const Vec& a, const Vec& b, Similarity kind);

class LongTermMemory {
 public:
  explicit LongTermMemory(LongTermOptions options);

  /// Appends the frame with count 1, then consolidates.
  void admit(const Vec& frame, int source = -1);
  void admit(MemorySlot slot);

  /// While the buffer exceeds capacity, merge the adjacent pair with the
  /// highest similarity (ties resolve to the smallest index).
  void consolidate();

  /// Replaces the contents (without consolidating).
  void assign(std::vector<MemorySlot> slots);

  /// Adjacent-pair similarities of the current buffer.
  std::vector<double> similarity_row() const;

  const std::vector<MemorySlot>& buffer() const { return buffer_; }
  const LongTermOptions& options() const { return options_; }
  std::size_t size() const { return buffer_.size(); }
  bool empty() const { return buffer_.empty(); }
  std::int64_t total_count() const;

 private:
  MemorySlot merge(const MemorySlot& a, const MemorySlot& b) const;

  LongTermOptions options_;
  std::vector<MemorySlot> buffer_;
};

enum class MemoryMode { off, ms_only, ml_only, me };
enum class Fusion { concat_maxpool, add, max };
/// accumulate: frames evicted from the short-term buffer feed the long-term
/// one. literal: the long-term memory is re-derived from a copy of the
/// short-term buffer at every step.
enum class LongTermPolicy { accumulate, literal };

struct MemoryConfig {
  MemoryMode mode = MemoryMode::me;
  Fusion fusion = Fusion::concat_maxpool;
  LongTermPolicy policy = LongTermPolicy::accumulate;
  int short_capacity = 8;
  int long_capacity = 8;
  MergeRule merge = MergeRule::mean;
  Similarity similarity = Similarity::dot;

  void validate() const;
};

/// The memory contents visible at one time step.
struct MemorySnapshot {
  std::vector<MemorySlot> short_term;
  std::vector<MemorySlot> long_term;
};

/// Streams a single sequence of encoder frames (rows of `frames`) through a
/// fresh pair of memories; snapshot t depends on rows 0..t only.
class MemoryTracker {
 public:
  explicit MemoryTracker(const MemoryConfig& cfg);

  const MemorySnapshot& step(const Vec& frame, int source);
  const MemorySnapshot& snapshot() const { return snap_; }

 private:
  MemoryConfig cfg_;
  ShortTermMemory ms_;
  LongTermMemory ml_;
  MemorySnapshot snap_;
};

std::vector<MemorySnapshot> track_memory(const ag::Mat& frames, const MemoryConfig& cfg);

/// Max-pool over the selected memory entries. Empty selections pool to zero.
Vec pool_memory(const MemorySnapshot& snap, MemoryMode mode, Eigen::Index dim);
Vec pool_memory(const ShortTermMemory& ms, const LongTermMemory& ml, MemoryMode mode, Eigen::Index dim);

/// Combines a hidden row with pooled memory: [h | m], h + m, or max(h, m).
Eigen::RowVectorXd fuse_row(const Eigen::RowVectorXd& hidden, const Vec& pooled, Fusion fusion);

/// Width of the fused decoder input for a hidden width `dim`.
int fused_width(int dim, const MemoryConfig& cfg);

/// Differentiable fusion of encoder output with its own causal memory.
/// Memory structure (which frames merged) is treated as fixed for the
/// backward pass. With mode == off the hidden sequence is returned as is.
ag::Var memory_fuse(const ag::Var& hidden, const MemoryConfig& cfg);

nlohmann::json to_json(const MemorySlot& slot);
nlohmann::json to_json(const MemorySnapshot& snap);
nlohmann::json to_json(const LongTermMemory& ml);
MemorySlot slot_from_json(const nlohmann::json& j);

std::string to_string(MemoryMode m);
std::string to_string(Fusion f);
std::string to_string(LongTermPolicy p);
MemoryMode parse_memory_mode(const std::string& s);
Fusion parse_fusion(const std::string& s);
LongTermPolicy parse_long_term_policy(const std::string& s);

}  // namespace onlinehoi::memory
