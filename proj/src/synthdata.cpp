#include "onlinehoi/synthdata.hpp"

#include "onlinehoi/errors.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

namespace onlinehoi::synth {

namespace {

constexpr double kPi = std::numbers::pi;

Mat random_matrix(Rng& rng, int r, int c, double s) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = s * normal(rng);
  return m;
}

// Points on a sphere or cube surface with outward normals.
void sample_primitive(Rng& rng, int n, bool cube, double size, geometry::Points& pts, geometry::Points* normals) {
  pts.resize(n, 3);
  if (normals) normals->resize(n, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVector3d p, nrm;
    if (cube) {
      const int face = uniform_int(rng, 0, 5);
      const int axis = face / 2;
      const double sign = face % 2 ? 1.0 : -1.0;
      for (int c = 0; c < 3; ++c) p(c) = uniform(rng, -1.0, 1.0);
      p(axis) = sign;
      nrm.setZero();
      nrm(axis) = sign;
    } else {
      for (int c = 0; c < 3; ++c) p(c) = normal(rng);
      p.normalize();
      nrm = p;
    }
    pts.row(i) = size * p;
    if (normals) normals->row(i) = nrm;
  }
}

Eigen::Matrix3d axis_rotation(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace

void SynthGenSpec::validate() const {
  if (T_seq < 1 || D_pose < 1 || object_pose_dim < 1) throw ConfigError("synth: sizes must be positive");
  if (n_action_classes < 2) throw ConfigError("synth: need at least two action classes");
  if (lag < 1) throw ConfigError("synth: lag must be at least 1");
  if (noise < 0.0) throw ConfigError("synth: noise must be non-negative");
  if (long_range_rate < 0.0 || long_range_rate > 1.0) throw ConfigError("synth: long_range_rate must lie in [0, 1]");
  if (cue_delay < 1) throw ConfigError("synth: cue_delay must be positive");
  if (geometry_points < 1) throw ConfigError("synth: geometry_points must be positive");
}

Coupling make_coupling(const SynthGenSpec& spec) {
  Rng rng = make_rng(spec.seed, {0x636f75u});
  Coupling c;
  c.actor_mix = random_matrix(rng, spec.D_pose, spec.D_pose, 0.6 / std::sqrt(spec.D_pose));
  c.actor_mix.diagonal().array() += 0.8;
  c.pose_mix = random_matrix(rng, spec.object_pose_dim, spec.D_pose, 0.3 / std::sqrt(spec.object_pose_dim));
  c.offset_dir = random_matrix(rng, 1, spec.D_pose, 1.0).row(0).normalized();
  return c;
}

namespace {

// Cue window of the actor: three frames starting at cue_frame.
constexpr int kCueLength = 3;

}  // namespace

MotionPair gen_motion_pair(const SynthGenSpec& spec, const Coupling& coupling, std::uint64_t index) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0x6d6f74u, index});
  const int T = spec.T_seq, D = spec.D_pose, P = spec.object_pose_dim;
  MotionPair m;
  m.label = static_cast<int>(index % static_cast<std::uint64_t>(spec.n_action_classes));
  const double omega = 0.18 + 0.14 * m.label;
  // Each class drives its own subset of joints at full amplitude; instances jitter it slightly.
  const int K = spec.n_action_classes;
  std::vector<double> amp(D), phase(D);
  for (int d = 0; d < D; ++d) {
    amp[d] = ((d + m.label) % K < (K + 1) / 2 ? 1.0 : 0.25) * uniform(rng, 0.9, 1.0);
    phase[d] = uniform(rng, 0.0, 2.0 * kPi);
  }
  // Class-dependent harmonic shape in addition to the frequency.
  const double harmonic = 0.3 * std::cos(m.label * 1.3);
  m.actor.resize(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d)
      m.actor(t, d) = amp[d] * (std::sin(omega * t + phase[d]) + harmonic * std::sin(2.0 * omega * t + phase[d]));

  const Eigen::RowVectorXd start = random_matrix(rng, 1, P, 0.5).row(0);
  const Eigen::RowVectorXd drift = random_matrix(rng, 1, P, 0.02).row(0);
  const double wobble = uniform(rng, 0.05, 0.15);
  m.object_pose.resize(T, P);
  for (int t = 0; t < T; ++t)
    for (int p = 0; p < P; ++p) m.object_pose(t, p) = start(p) + drift(p) * t + 0.2 * std::sin(wobble * t + p);

  if (uniform(rng) < spec.long_range_rate && T > kCueLength) {
    m.cue_frame = uniform_int(rng, 0, std::max(0, std::min(T - kCueLength, T / 4)));
    m.cue_sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
    for (int t = m.cue_frame; t < m.cue_frame + kCueLength; ++t) m.actor.row(t).array() += m.cue_sign * spec.cue_strength;
  }

  sample_primitive(rng, spec.geometry_points, index % 2 == 0, uniform(rng, 0.5, 1.5), m.geometry, nullptr);

  m.reactor = reactor_from_history(m, spec, coupling);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) m.reactor(t, d) += spec.noise * normal(rng);
  return m;
}

Mat reactor_from_history(const MotionPair& m, const SynthGenSpec& spec, const Coupling& c) {
  const int T = static_cast<int>(m.actor.rows());
  Mat r(T, spec.D_pose);
  for (int t = 0; t < T; ++t) {
    const Eigen::RowVectorXd past = m.actor.row(std::max(0, t - spec.lag));
    Eigen::RowVectorXd row = (past * c.actor_mix).array().tanh().matrix() + m.object_pose.row(t) * c.pose_mix;
    if (m.cue_frame >= 0 && t >= m.cue_frame + spec.cue_delay) row += m.cue_sign * spec.cue_strength * c.offset_dir;
    r.row(t) = row;
  }
  return r;
}

std::vector<MotionPair> gen_motion_pairs(const SynthGenSpec& spec, int count, std::uint64_t first) {
  const Coupling c = make_coupling(spec);
  std::vector<MotionPair> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(gen_motion_pair(spec, c, first + static_cast<std::uint64_t>(i)));
  return out;
}

void SynthPcdSpec::validate() const {
  if (T_seq < 2 || n_pts < 1) throw ConfigError("synth pcd: sizes must be positive");
  if (n_classes < 2) throw ConfigError("synth pcd: need at least two classes");
  if (min_segment < 2 || max_segment < min_segment) throw ConfigError("synth pcd: segment bounds must satisfy 2 <= min <= max");
  if (!(speed > 0.0)) throw ConfigError("synth pcd: speed must be positive");
}

namespace {

struct Pattern {
  Eigen::Vector3d velocity;
  Eigen::Vector3d axis;
  double spin;
};

// Motion of class k: a translation direction on a Fibonacci sphere plus a
// spin about a second direction.
Pattern class_pattern(const SynthPcdSpec& spec, int k) {
  int base = k;
  if (spec.twin_from >= 0 && k >= spec.twin_from && (k - spec.twin_from) % 2 == 1) base = k - 1;
  const int n = spec.n_classes;
  auto fib = [&](int i, double shift) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double a = kPi * (3.0 - std::sqrt(5.0)) * i + shift;
    return Eigen::Vector3d(r * std::cos(a), y, r * std::sin(a));
  };
  return {spec.speed * fib(base, 0.0), fib((base * 7 + 3) % n, 1.0), 0.05 + 0.1 * ((base * 5) % 4)};
}

}  // namespace

percept::PointCloudSequence gen_pcd_action(const SynthPcdSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0x706364u, index});
  geometry::Points body, body_normals;
  const bool cube = uniform(rng) < 0.5;
  sample_primitive(rng, spec.n_pts, cube, uniform(rng, 0.3, 0.5), body, &body_normals);

  std::vector<int> labels;
  std::vector<int> seg_start_flags;
  int prev = -1;
  while (static_cast<int>(labels.size()) < spec.T_seq) {
    int k = uniform_int(rng, 0, spec.n_classes - 1);
    if (k == prev) k = (k + 1 + uniform_int(rng, 0, spec.n_classes - 2)) % spec.n_classes;
    const int len = uniform_int(rng, spec.min_segment, spec.max_segment);
    for (int i = 0; i < len; ++i) {
      labels.push_back(k);
      seg_start_flags.push_back(i);
    }
    prev = k;
  }
  // A short tail would break the minimum segment length; fold it into the previous segment.
  labels.resize(static_cast<std::size_t>(spec.T_seq));
  seg_start_flags.resize(labels.size());
  {
    int t = spec.T_seq - 1;
    while (t > 0 && labels[t - 1] == labels[t]) --t;
    if (spec.T_seq - t < 2 && t > 0) {
      for (int i = t; i < spec.T_seq; ++i) {
        labels[i] = labels[t - 1];
        seg_start_flags[i] = seg_start_flags[i - 1] + 1;
      }
    }
  }

  percept::PointCloudSequence seq;
  Eigen::Vector3d pos(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
  Eigen::Matrix3d rot = axis_rotation(Eigen::Vector3d(normal(rng), normal(rng), normal(rng)), uniform(rng, 0, kPi));
  for (int t = 0; t < spec.T_seq; ++t) {
    const int k = labels[t];
    const Pattern pat = class_pattern(spec, k);
    pos += pat.velocity;
    rot = axis_rotation(pat.axis, pat.spin) * rot;
    const bool twin = spec.twin_from >= 0 && k >= spec.twin_from && (k - spec.twin_from) % 2 == 1;
    const double scale = twin && seg_start_flags[t] < 2 ? 1.6 : 1.0;
    percept::PointFrame f{geometry::Points(spec.n_pts, 3), geometry::Points(spec.n_pts, 3)};
    for (int i = 0; i < spec.n_pts; ++i) {
      const Eigen::Vector3d p = rot * (scale * body.row(i).transpose()) + pos;
      const Eigen::Vector3d n = rot * body_normals.row(i).transpose();
      f.points.row(i) = p.transpose();
      f.normals.row(i) = n.normalized().transpose();
    }
    seq.frames.push_back(std::move(f));
  }
  seq.labels = std::move(labels);
  return seq;
}

std::vector<percept::PointCloudSequence> gen_pcd_actions(const SynthPcdSpec& spec, int count, std::uint64_t first) {
  std::vector<percept::PointCloudSequence> out;
  for (int i = 0; i < count; ++i) out.push_back(gen_pcd_action(spec, first + static_cast<std::uint64_t>(i)));
  return out;
}

Splits make_splits(int train, int val, int test) {
  if (train < 0 || val < 0 || test < 0) throw ConfigError("split sizes must be non-negative");
  const auto tr = static_cast<std::uint64_t>(train), va = static_cast<std::uint64_t>(val);
  return {{0, train}, {tr, val}, {tr + va, test}};
}

namespace {

void write_rows(std::ostream& os, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << "\n";
  }
}

template <typename M>
void read_rows(std::istream& is, M& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!(is >> m(i, j))) throw ConfigError("motion file: truncated matrix data");
}

}  // namespace

void write_motion_pairs(std::ostream& os, const std::vector<MotionPair>& pairs) {
  os.precision(17);
  os << "onlinehoi-motion 1\nitems " << pairs.size() << "\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& m = pairs[i];
    os << "item " << i << " " << m.label << " " << m.actor.rows() << " " << m.actor.cols() << " " << m.object_pose.cols()
       << " " << m.geometry.rows() << " " << m.cue_frame << " " << m.cue_sign << "\n";
    write_rows(os, m.actor);
    write_rows(os, m.reactor);
    write_rows(os, m.object_pose);
    write_rows(os, m.geometry);
  }
}

std::vector<MotionPair> read_motion_pairs(std::istream& is) {
  std::string tag;
  int version = 0;
  std::size_t n = 0;
  if (!(is >> tag >> version) || tag != "onlinehoi-motion" || version != 1) throw ConfigError("not an onlinehoi motion file");
  if (!(is >> tag >> n) || tag != "items") throw ConfigError("motion file: bad item count");
  std::vector<MotionPair> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t idx = 0;
    int T = 0, D = 0, P = 0, G = 0;
    auto& m = out[i];
    if (!(is >> tag >> idx >> m.label >> T >> D >> P >> G >> m.cue_frame >> m.cue_sign) || tag != "item" || idx != i ||
        T < 0 || D < 0 || P < 0 || G < 0) {
      throw ConfigError("motion file: bad header for item " + std::to_string(i));
    }
    m.actor.resize(T, D);
    m.reactor.resize(T, D);
    m.object_pose.resize(T, P);
    m.geometry.resize(G, 3);
    read_rows(is, m.actor);
    read_rows(is, m.reactor);
    read_rows(is, m.object_pose);
    read_rows(is, m.geometry);
  }
  return out;
}

}  // namespace onlinehoi::synth
