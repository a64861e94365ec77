#pragma once

// Point-cloud sequence perception: point 4D convolution, a four-level
// encoder/decoder backbone, temporal enhancement with memory and a per-frame
// classification head.

#include "onlinehoi/geometry.hpp"
#include "onlinehoi/memory.hpp"
#include "onlinehoi/nn.hpp"
#include "onlinehoi/transformer.hpp"

#include <array>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace onlinehoi::percept {

using ag::Mat;
using ag::Var;
using geometry::Points;

struct PointFrame {
  Points points;
  Points normals;
};

struct PointCloudSequence {
  std::vector<PointFrame> frames;
  std::vector<int> labels;  // empty or one per frame

  int length() const { return static_cast<int>(frames.size()); }
  void validate() const;
};

/// Points of one resolution level for every frame, stacked frame by frame.
struct Level {
  std::vector<Points> points;
  std::vector<int> offset;  // first stacked row of each frame
  int total = 0;

  static Level from_frames(std::vector<Points> points);
  int frames() const { return static_cast<int>(points.size()); }
};

/// One spatial neighbor: a stacked source row and its displacement
/// (dx, dy, dz, dt) from the anchor.
struct Neighbor {
  int row;
  std::array<double, 4> disp;
};

/// For every anchor, one group per valid temporal offset.
struct Neighborhoods {
  std::vector<std::vector<std::vector<Neighbor>>> anchors;
};

enum class TemporalWindow { causal, symmetric };

/// Radius query from every anchor of `anchors` into frames t+dt of `source`,
/// dt in [-r_t, 0] (causal) or [-r_t, r_t] (symmetric). Offsets that fall
/// outside the sequence are skipped; empty spatial groups are kept.
Neighborhoods build_neighborhoods(const Level& source, const Level& anchors, double r_s, int r_t, TemporalWindow window);

/// out[a, c] = sum over groups of max over neighbors of
///   proj[row, c] + disp . Wd[:, c]
/// An empty group contributes zero.
Var point4d_aggregate(const Var& proj, const Var& Wd, std::shared_ptr<const Neighborhoods> nb);

struct Conv4DParams {
  int in_channels = 3;
  int out_channels = 16;
  double r_s = 0.5;
  int r_t = 1;
  TemporalWindow window = TemporalWindow::causal;

  void validate() const;
};

/// W_f (in x out) and W_d (4 x out) applied through point4d_aggregate.
class Point4DConv {
 public:
  Point4DConv() = default;
  Point4DConv(nn::ParamStore& store, const std::string& name, const Conv4DParams& p, Rng& rng);

  Var forward(const Var& features, const Level& source, const Level& anchors) const;
  const Conv4DParams& params() const { return p_; }

 private:
  Conv4DParams p_;
  Var wd_;
  nn::Linear wf_;
};

/// Anchor subsampling: farthest-point sampling of ceil(n / stride) points per frame.
Level subsample(const Level& level, int stride);

/// Inverse-distance interpolation of features from `coarse` onto `fine`,
/// frame by frame.
Var interpolate(const Var& coarse_features, const Level& coarse, const Level& fine, int k = 3);

enum class Granularity { per_frame, per_point };

struct PerceptionConfig {
  std::array<int, 4> channels{16, 24, 32, 48};
  int stride = 2;
  double radius = 0.35;  // level 0 spatial radius; doubles per level
  int r_t = 1;
  bool causal_conv = true;      // temporal windows of the 4D convolutions
  bool causal_temporal = true;  // temporal enhancement layer
  int point_features = 32;      // backbone output width per point
  int model_dim = 32;
  int blocks = 1;
  int state_dim = 8;
  int conv_width = 4;
  int expansion = 2;
  int heads = 4;
  BlockKind temporal = BlockKind::mamba;
  Granularity granularity = Granularity::per_frame;
  memory::MemoryConfig memory;
  int num_classes = 19;

  void set_online(bool online) { causal_conv = causal_temporal = online; }
  bool online() const { return causal_conv && causal_temporal; }
  void validate() const;
};

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& s);

class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParamStore& store, const PerceptionConfig& cfg, Rng& rng);

  /// Per-point features (stacked over frames) at the input points.
  Var forward(const PointCloudSequence& seq, Level* input_level = nullptr) const;

 private:
  PerceptionConfig cfg_;
  std::vector<Point4DConv> enc_;
  std::vector<nn::Linear> dec_;
};

/// Spatial max-pool of stacked per-point features, one row per frame.
Var pool_frames(const Var& features, const Level& level);

/// Temporal model over per-frame features with memory injection:
///   proj -> blocks -> memory fusion -> fuse projection.
class TemporalEnhance {
 public:
  TemporalEnhance() = default;
  TemporalEnhance(nn::ParamStore& store, const std::string& name, int in_dim, const PerceptionConfig& cfg, Rng& rng);

  Var forward(const Var& frames, bool check_inputs = true) const;
  /// Per-point variant: one scan per point index, pooled per frame before
  /// memory fusion. Needs equal point counts in every frame.
  Var forward_per_point(const Var& features, const Level& level, bool check_inputs = true) const;

  /// Sets the fusion projection to pass the hidden part through and ignore memory.
  void set_identity_fusion();
  std::vector<TemporalBlock>& blocks() { return blocks_; }

 private:
  Var after_blocks(const Var& h) const;

  PerceptionConfig cfg_;
  nn::Linear in_;
  std::vector<TemporalBlock> blocks_;
  nn::Linear fuse_;
};

struct SegmentPrediction {
  Mat logits;
  std::vector<int> labels;
};

/// Row-wise argmax; ties go to the smallest class id.
std::vector<int> argmax_rows(const Mat& logits);

class PerceptionModel {
 public:
  PerceptionModel(nn::ParamStore& store, const PerceptionConfig& cfg, Rng& rng);

  Var logits(const PointCloudSequence& seq, bool check_inputs = true) const;
  SegmentPrediction predict(const PointCloudSequence& seq, bool check_inputs = true) const;
  /// Mean per-frame cross-entropy; throws ConfigError on labels outside [0, K).
  Var loss(const PointCloudSequence& seq) const;

  const PerceptionConfig& config() const { return cfg_; }
  nn::ParamStore& store() const { return *store_; }
  TemporalEnhance& temporal() { return temporal_; }
  const Backbone& backbone() const { return backbone_; }

 private:
  PerceptionConfig cfg_;
  nn::ParamStore* store_;
  Backbone backbone_;
  TemporalEnhance temporal_;
  nn::Linear head_;
};

/// Text clip layout:
///   onlinehoi-clip 1
///   frames <T>
///   frame <t> <n_pts> <label>
///   <x> <y> <z> <nx> <ny> <nz>     (n_pts lines)
/// label is -1 for unlabeled frames.
void write_clip(std::ostream& os, const PointCloudSequence& seq);
PointCloudSequence read_clip(std::istream& is);

}  // namespace onlinehoi::percept
