#include "onlinehoi/percept.hpp"

#include "onlinehoi/errors.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace onlinehoi::percept {

void PointCloudSequence::validate() const {
  if (frames.empty()) throw InvalidParameter("point cloud sequence has no frames");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = frames[t];
    if (f.points.rows() == 0) throw InvalidParameter("frame " + std::to_string(t) + " is empty");
    if (f.normals.rows() != f.points.rows()) throw ShapeError("frame " + std::to_string(t) + ": normals/points count mismatch");
    if (!f.points.allFinite() || !f.normals.allFinite()) {
      throw InvalidParameter("frame " + std::to_string(t) + " has non-finite coordinates");
    }
  }
  if (!labels.empty() && labels.size() != frames.size()) throw ShapeError("label count does not match frame count");
}

Level Level::from_frames(std::vector<Points> points) {
  Level l;
  l.points = std::move(points);
  for (const auto& p : l.points) {
    l.offset.push_back(l.total);
    l.total += static_cast<int>(p.rows());
  }
  return l;
}

Neighborhoods build_neighborhoods(const Level& source, const Level& anchors, double r_s, int r_t, TemporalWindow window) {
  if (source.frames() != anchors.frames()) throw ShapeError("neighborhoods: frame count mismatch");
  const int T = source.frames();
  Neighborhoods nb;
  nb.anchors.resize(static_cast<std::size_t>(anchors.total));
  const int hi = window == TemporalWindow::causal ? 0 : r_t;
  for (int t = 0; t < T; ++t) {
    const Points& ap = anchors.points[t];
    for (Eigen::Index a = 0; a < ap.rows(); ++a) {
      auto& groups = nb.anchors[static_cast<std::size_t>(anchors.offset[t] + a)];
      const Eigen::RowVector3d centre = ap.row(a);
      for (int dt = -r_t; dt <= hi; ++dt) {
        const int s = t + dt;
        if (s < 0 || s >= T) continue;
        std::vector<Neighbor> group;
        for (int j : geometry::radius_neighbors(source.points[s], centre, r_s)) {
          const Eigen::RowVector3d d = source.points[s].row(j) - centre;
          group.push_back({source.offset[s] + j, {d(0), d(1), d(2), static_cast<double>(dt)}});
        }
        groups.push_back(std::move(group));
      }
    }
  }
  return nb;
}

Var point4d_aggregate(const Var& proj, const Var& Wd, std::shared_ptr<const Neighborhoods> nbp) {
  const Neighborhoods& nb = *nbp;
  const Eigen::Index C = proj.cols();
  if (Wd.rows() != 4 || Wd.cols() != C) throw ShapeError("point4d_aggregate: W_d must be 4 x out_channels");
  const Mat& pv = proj.value();
  const Mat& wd = Wd.value();
  const Eigen::Index A = static_cast<Eigen::Index>(nb.anchors.size());
  Mat out = Mat::Zero(A, C);
  // Winner (neighbor position within its group) per anchor, group and channel.
  std::vector<std::vector<int>> winner(static_cast<std::size_t>(A));
  for (Eigen::Index a = 0; a < A; ++a) {
    const auto& groups = nb.anchors[static_cast<std::size_t>(a)];
    auto& win = winner[static_cast<std::size_t>(a)];
    win.assign(groups.size() * static_cast<std::size_t>(C), -1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& group = groups[g];
      if (group.empty()) continue;
      for (Eigen::Index c = 0; c < C; ++c) {
        double best = 0.0;
        int arg = -1;
        for (std::size_t n = 0; n < group.size(); ++n) {
          const auto& nbr = group[n];
          double v = pv(nbr.row, c);
          for (int k = 0; k < 4; ++k) v += nbr.disp[k] * wd(k, c);
          if (arg < 0 || v > best) {
            best = v;
            arg = static_cast<int>(n);
          }
        }
        out(a, c) += best;
        win[g * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)] = arg;
      }
    }
  }
  return ag::make_result(std::move(out), {proj, Wd}, [proj, Wd, nbp, winner = std::move(winner), C](const Mat& g) {
    const Neighborhoods& nb = *nbp;
    Mat gp = Mat::Zero(proj.rows(), proj.cols());
    Mat gw = Mat::Zero(4, C);
    for (std::size_t a = 0; a < winner.size(); ++a) {
      const auto& groups = nb.anchors[a];
      for (std::size_t grp = 0; grp < groups.size(); ++grp) {
        for (Eigen::Index c = 0; c < C; ++c) {
          const int arg = winner[a][grp * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)];
          if (arg < 0) continue;
          const auto& nbr = groups[grp][static_cast<std::size_t>(arg)];
          const double gv = g(static_cast<Eigen::Index>(a), c);
          gp(nbr.row, c) += gv;
          for (int k = 0; k < 4; ++k) gw(k, c) += gv * nbr.disp[k];
        }
      }
    }
    ag::accumulate(proj, gp);
    ag::accumulate(Wd, gw);
  });
}

void Conv4DParams::validate() const {
  if (in_channels <= 0 || out_channels <= 0) throw ConfigError("point4d_conv: channels must be positive");
  if (!(r_s > 0.0) || !std::isfinite(r_s)) throw ConfigError("point4d_conv: spatial radius must be positive");
  if (r_t < 0) throw ConfigError("point4d_conv: temporal radius must be non-negative");
}

Point4DConv::Point4DConv(nn::ParamStore& store, const std::string& name, const Conv4DParams& p, Rng& rng) : p_(p) {
  p.validate();
  wd_ = store.add(name + ".wd", nn::uniform_init(rng, 4, p.out_channels, 0.5));
  wf_ = nn::Linear(store, name + ".wf", p.in_channels, p.out_channels, rng, false);
}

Var Point4DConv::forward(const Var& features, const Level& source, const Level& anchors) const {
  if (features.rows() != source.total || features.cols() != p_.in_channels) {
    throw ShapeError("point4d_conv: feature shape does not match source level");
  }
  auto nb = std::make_shared<const Neighborhoods>(build_neighborhoods(source, anchors, p_.r_s, p_.r_t, p_.window));
  return point4d_aggregate(wf_(features), wd_, std::move(nb));
}

Level subsample(const Level& level, int stride) {
  std::vector<Points> pts;
  for (const auto& p : level.points) {
    const int n = static_cast<int>(p.rows());
    const auto idx = geometry::farthest_point_sample(p, std::max(1, (n + stride - 1) / stride));
    Points sel(static_cast<Eigen::Index>(idx.size()), 3);
    for (std::size_t i = 0; i < idx.size(); ++i) sel.row(static_cast<Eigen::Index>(i)) = p.row(idx[i]);
    pts.push_back(std::move(sel));
  }
  return Level::from_frames(std::move(pts));
}

Var interpolate(const Var& coarse_features, const Level& coarse, const Level& fine, int k) {
  if (coarse.frames() != fine.frames()) throw ShapeError("interpolate: frame count mismatch");
  ag::SparseRows mix;
  mix.rows.resize(static_cast<std::size_t>(fine.total));
  for (int t = 0; t < fine.frames(); ++t) {
    const auto w = geometry::inverse_distance_weights(coarse.points[t], fine.points[t], k);
    for (Eigen::Index i = 0; i < fine.points[t].rows(); ++i) {
      auto& row = mix.rows[static_cast<std::size_t>(fine.offset[t] + i)];
      for (int j = 0; j < w.k; ++j) {
        const std::size_t e = static_cast<std::size_t>(i * w.k + j);
        row.emplace_back(coarse.offset[t] + w.index[e], w.weight[e]);
      }
    }
  }
  return ag::sparse_mix(coarse_features, mix, fine.total);
}

void PerceptionConfig::validate() const {
  for (int c : channels)
    if (c <= 0) throw ConfigError("perception: channel widths must be positive");
  if (stride < 1) throw ConfigError("perception: stride must be at least 1");
  if (!(radius > 0.0)) throw ConfigError("perception: radius must be positive");
  if (r_t < 0) throw ConfigError("perception: r_t must be non-negative");
  if (point_features <= 0 || model_dim <= 0 || blocks <= 0) throw ConfigError("perception: widths must be positive");
  if (num_classes < 2) throw ConfigError("perception: need at least two classes");
  ssm::MambaBlockConfig m{model_dim, state_dim, conv_width, expansion};
  m.validate();
  if (temporal == BlockKind::causal_transformer) TransformerBlockConfig{model_dim, heads, 1}.validate();
  memory.validate();
}

std::string to_string(Granularity g) { return g == Granularity::per_frame ? "per_frame" : "per_point"; }

Granularity parse_granularity(const std::string& s) {
  if (s == "per_frame") return Granularity::per_frame;
  if (s == "per_point") return Granularity::per_point;
  throw ConfigError("unknown granularity '" + s + "'");
}

Backbone::Backbone(nn::ParamStore& store, const PerceptionConfig& cfg, Rng& rng) : cfg_(cfg) {
  int in = 3;
  for (int l = 0; l < 4; ++l) {
    Conv4DParams p;
    p.in_channels = in;
    p.out_channels = cfg.channels[l];
    p.r_s = cfg.radius * std::pow(2.0, l);
    p.r_t = cfg.r_t;
    p.window = cfg.causal_conv ? TemporalWindow::causal : TemporalWindow::symmetric;
    enc_.emplace_back(store, "p4d.enc" + std::to_string(l), p, rng);
    in = cfg.channels[l];
  }
  int width = cfg.channels[3];
  dec_.resize(4);
  for (int l = 3; l >= 0; --l) {
    const int skip = l == 0 ? 3 : cfg.channels[l - 1];
    const int out = l == 0 ? cfg.point_features : cfg.channels[l - 1];
    dec_[l] = nn::Linear(store, "p4d.dec" + std::to_string(l), width + skip, out, rng);
    width = out;
  }
}

Var Backbone::forward(const PointCloudSequence& seq, Level* input_level) const {
  std::vector<Points> pts;
  Mat normals(0, 3);
  for (const auto& f : seq.frames) pts.push_back(f.points);
  std::vector<Level> levels{Level::from_frames(std::move(pts))};
  normals.resize(levels[0].total, 3);
  for (int t = 0; t < seq.length(); ++t) normals.middleRows(levels[0].offset[t], seq.frames[t].normals.rows()) = seq.frames[t].normals;

  std::vector<Var> feats{Var(normals)};
  for (int l = 0; l < 4; ++l) {
    levels.push_back(subsample(levels[l], cfg_.stride));
    feats.push_back(ag::silu(enc_[l].forward(feats[l], levels[l], levels[l + 1])));
  }
  Var h = feats[4];
  for (int l = 3; l >= 0; --l) {
    const Var up = interpolate(h, levels[l + 1], levels[l]);
    h = ag::silu(dec_[l](ag::concat_cols({up, feats[l]})));
  }
  if (input_level) *input_level = levels[0];
  return h;
}

Var pool_frames(const Var& features, const Level& level) {
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(level.frames()));
  for (int t = 0; t < level.frames(); ++t) {
    groups[t].resize(static_cast<std::size_t>(level.points[t].rows()));
    std::iota(groups[t].begin(), groups[t].end(), level.offset[t]);
  }
  return ag::group_max(features, groups);
}

TemporalEnhance::TemporalEnhance(nn::ParamStore& store, const std::string& name, int in_dim,
                                 const PerceptionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int d = cfg.model_dim;
  in_ = nn::Linear(store, name + ".in", in_dim, d, rng);
  TemporalBlockConfig bc;
  bc.kind = cfg.temporal;
  bc.mamba = {d, cfg.state_dim, cfg.conv_width, cfg.expansion};
  bc.heads = cfg.heads;
  for (int b = 0; b < cfg.blocks; ++b) blocks_.emplace_back(store, name + ".block" + std::to_string(b), bc, rng);
  fuse_ = nn::Linear(store, name + ".fuse", memory::fused_width(d, cfg.memory), d, rng);
}

void TemporalEnhance::set_identity_fusion() {
  Mat w = Mat::Zero(fuse_.weight.rows(), fuse_.weight.cols());
  w.topRows(cfg_.model_dim).setIdentity();
  if (cfg_.memory.mode != memory::MemoryMode::off && cfg_.memory.fusion != memory::Fusion::concat_maxpool) {
    throw InvalidState("identity fusion needs concatenation or memory off");
  }
  fuse_.weight.mutable_value() = w;
  fuse_.bias.mutable_value().setZero();
}

Var TemporalEnhance::after_blocks(const Var& h) const { return fuse_(memory::memory_fuse(h, cfg_.memory)); }

Var TemporalEnhance::forward(const Var& frames, bool check_inputs) const {
  Var h = in_(frames);
  if (cfg_.temporal == BlockKind::causal_transformer) {
    std::vector<int> time(static_cast<std::size_t>(frames.rows()));
    std::iota(time.begin(), time.end(), 0);
    h = ag::add(h, Var(nn::sinusoidal_embedding(time, cfg_.model_dim)));
  }
  for (const auto& b : blocks_) h = b.forward(h, cfg_.causal_temporal, check_inputs);
  return after_blocks(h);
}

Var TemporalEnhance::forward_per_point(const Var& features, const Level& level, bool check_inputs) const {
  const int T = level.frames();
  const Eigen::Index n = level.points.at(0).rows();
  for (const auto& p : level.points)
    if (p.rows() != n) throw ShapeError("per-point enhancement needs equal point counts per frame");
  std::vector<int> time(static_cast<std::size_t>(T));
  std::iota(time.begin(), time.end(), 0);
  std::vector<Var> tracks;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<int> rows(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) rows[t] = level.offset[t] + static_cast<int>(i);
    Var h = in_(ag::gather_rows(features, rows));
    if (cfg_.temporal == BlockKind::causal_transformer) h = ag::add(h, Var(nn::sinusoidal_embedding(time, cfg_.model_dim)));
    for (const auto& b : blocks_) h = b.forward(h, cfg_.causal_temporal, check_inputs);
    tracks.push_back(h);
  }
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < n; ++i) groups[t].push_back(static_cast<int>(i) * T + t);
  return after_blocks(ag::group_max(ag::concat_rows(tracks), groups));
}

std::vector<int> argmax_rows(const Mat& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

PerceptionModel::PerceptionModel(nn::ParamStore& store, const PerceptionConfig& cfg, Rng& rng)
    : cfg_(cfg), store_(&store) {
  cfg.validate();
  backbone_ = Backbone(store, cfg, rng);
  temporal_ = TemporalEnhance(store, "temporal", cfg.point_features, cfg, rng);
  head_ = nn::Linear(store, "head", cfg.model_dim, cfg.num_classes, rng);
}

Var PerceptionModel::logits(const PointCloudSequence& seq, bool check_inputs) const {
  if (check_inputs) seq.validate();
  Level level;
  const Var feats = backbone_.forward(seq, &level);
  const Var enhanced = cfg_.granularity == Granularity::per_frame
                           ? temporal_.forward(pool_frames(feats, level), check_inputs)
                           : temporal_.forward_per_point(feats, level, check_inputs);
  return head_(enhanced);
}

SegmentPrediction PerceptionModel::predict(const PointCloudSequence& seq, bool check_inputs) const {
  SegmentPrediction p;
  p.logits = logits(seq, check_inputs).value();
  p.labels = argmax_rows(p.logits);
  return p;
}

Var PerceptionModel::loss(const PointCloudSequence& seq) const {
  if (seq.labels.size() != seq.frames.size()) throw ConfigError("perception loss needs one label per frame");
  for (int l : seq.labels)
    if (l < 0 || l >= cfg_.num_classes) {
      throw ConfigError("label " + std::to_string(l) + " outside the " + std::to_string(cfg_.num_classes) + " classes");
    }
  return ag::cross_entropy(logits(seq), seq.labels);
}

void write_clip(std::ostream& os, const PointCloudSequence& seq) {
  os.precision(17);
  os << "onlinehoi-clip 1\nframes " << seq.length() << "\n";
  for (int t = 0; t < seq.length(); ++t) {
    const auto& f = seq.frames[t];
    os << "frame " << t << " " << f.points.rows() << " " << (seq.labels.empty() ? -1 : seq.labels[t]) << "\n";
    for (Eigen::Index i = 0; i < f.points.rows(); ++i) {
      os << f.points(i, 0) << " " << f.points(i, 1) << " " << f.points(i, 2) << " " << f.normals(i, 0) << " "
         << f.normals(i, 1) << " " << f.normals(i, 2) << "\n";
    }
  }
}

PointCloudSequence read_clip(std::istream& is) {
  std::string tag;
  int version = 0, T = 0;
  if (!(is >> tag >> version) || tag != "onlinehoi-clip" || version != 1) throw ConfigError("not an onlinehoi clip file");
  if (!(is >> tag >> T) || tag != "frames" || T < 0) throw ConfigError("clip: bad frame count");
  PointCloudSequence seq;
  bool any_label = false, all_label = true;
  for (int t = 0; t < T; ++t) {
    int idx = 0, n = 0, label = 0;
    if (!(is >> tag >> idx >> n >> label) || tag != "frame" || idx != t || n < 0) {
      throw ConfigError("clip: bad header for frame " + std::to_string(t));
    }
    PointFrame f{Points(n, 3), Points(n, 3)};
    for (int i = 0; i < n; ++i) {
      if (!(is >> f.points(i, 0) >> f.points(i, 1) >> f.points(i, 2) >> f.normals(i, 0) >> f.normals(i, 1) >>
            f.normals(i, 2))) {
        throw ConfigError("clip: truncated point data in frame " + std::to_string(t));
      }
    }
    seq.frames.push_back(std::move(f));
    seq.labels.push_back(label);
    any_label = any_label || label >= 0;
    all_label = all_label && label >= 0;
  }
  if (!any_label) seq.labels.clear();
  else if (!all_label) throw ConfigError("clip: frames are partially labeled");
  return seq;
}

}  // namespace onlinehoi::percept
