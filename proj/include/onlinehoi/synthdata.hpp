#pragma once

// Deterministic synthetic stand-ins for two-agent interaction motion and
// labeled point-cloud action clips.

#include "onlinehoi/geometry.hpp"
#include "onlinehoi/percept.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace onlinehoi::synth {

using ag::Mat;

struct SynthGenSpec {
  std::uint64_t seed = 0;
  int T_seq = 48;
  int D_pose = 6;
  int object_pose_dim = 6;
  int n_action_classes = 4;
  int lag = 2;  // reactor reads the actor this many frames back
  double noise = 0.01;
  int geometry_points = 32;
  /// Fraction of sequences carrying an early actor cue whose sign sets a
  /// reactor offset from frame cue + cue_delay onwards.
  double long_range_rate = 0.5;
  int cue_delay = 16;
  double cue_strength = 0.8;

  void validate() const;
};

/// Fixed mixing matrices shared by every sequence of a dataset.
struct Coupling {
  Mat actor_mix;  // D x D
  Mat pose_mix;   // P x D
  Eigen::RowVectorXd offset_dir;  // 1 x D
};

Coupling make_coupling(const SynthGenSpec& spec);

struct MotionPair {
  Mat actor;        // T x D
  Mat reactor;      // T x D
  Mat object_pose;  // T x P
  geometry::Points geometry;
  int label = 0;
  int cue_frame = -1;  // -1 when the sequence has no cue
  double cue_sign = 0.0;
};

/// Sequence `index` of the stream defined by the spec; independent of any
/// other index.
MotionPair gen_motion_pair(const SynthGenSpec& spec, const Coupling& coupling, std::uint64_t index);

/// `count` pairs starting at stream index `first`.
std::vector<MotionPair> gen_motion_pairs(const SynthGenSpec& spec, int count, std::uint64_t first = 0);

/// Noise-free reactor rebuilt from the actor's history, the object pose
/// and the cue.
Mat reactor_from_history(const MotionPair& pair, const SynthGenSpec& spec, const Coupling& coupling);

struct SynthPcdSpec {
  std::uint64_t seed = 0;
  int T_seq = 150;
  int n_pts = 64;
  int n_classes = 19;
  int min_segment = 12;
  int max_segment = 40;
  double speed = 0.06;  // translation per frame
  /// Classes with an odd id >= twin_from share their motion with the class
  /// below and differ only by a brief scale pulse at segment start.
  int twin_from = -1;  // -1 disables twins

  void validate() const;
};

percept::PointCloudSequence gen_pcd_action(const SynthPcdSpec& spec, std::uint64_t index);
std::vector<percept::PointCloudSequence> gen_pcd_actions(const SynthPcdSpec& spec, int count, std::uint64_t first = 0);

/// Disjoint index ranges of one generator stream: [0, train), [train,
/// train + val), [train + val, train + val + test).
struct Split {
  std::uint64_t first;
  int count;
};
struct Splits {
  Split train, val, test;
};
Splits make_splits(int train, int val, int test);

/// Text layout:
///   onlinehoi-motion 1
///   items <N>
///   item <i> <label> <T> <D> <P> <G> <cue_frame> <cue_sign>
///   T rows actor, T rows reactor, T rows object pose, G rows geometry
void write_motion_pairs(std::ostream& os, const std::vector<MotionPair>& pairs);
std::vector<MotionPair> read_motion_pairs(std::istream& is);

}  // namespace onlinehoi::synth
