#include "onlinehoi/metrics.hpp"

#include "onlinehoi/errors.hpp"
#include "onlinehoi/hash.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace onlinehoi::metrics {

namespace {

constexpr double kJitter = 1e-6;

void check_set(const FeatureSet& s, const char* what) {
  if (s.features.rows() < 2) throw InvalidParameter(std::string(what) + ": need at least two feature vectors");
  if (!s.features.allFinite()) throw NumericalError(std::string(what) + ": non-finite features");
}

Eigen::MatrixXd covariance(const Mat& x) {
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace

double fid(const FeatureSet& a, const FeatureSet& b) {
  check_set(a, "fid");
  check_set(b, "fid");
  if (a.features.cols() != b.features.cols()) throw ShapeError("fid: feature widths differ");
  if (a.extractor_id != b.extractor_id) {
    throw ConfigError("fid: features come from different extractors ('" + a.extractor_id + "' vs '" + b.extractor_id + "')");
  }
  const Eigen::Index F = a.features.cols();
  const Eigen::MatrixXd jitter = kJitter * Eigen::MatrixXd::Identity(F, F);
  const Eigen::MatrixXd sa = covariance(a.features) + jitter;
  const Eigen::MatrixXd sb = covariance(b.features) + jitter;
  const Eigen::RowVectorXd dmu = a.features.colwise().mean() - b.features.colwise().mean();

  // tr((Sa Sb)^1/2) = tr((Sa^1/2 Sb Sa^1/2)^1/2); both factors symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  if (ea.info() != Eigen::Success || ea.eigenvalues().minCoeff() <= 0.0) {
    throw NumericalError("fid: covariance not positive definite after jitter (min eigenvalue " +
                         std::to_string(ea.eigenvalues().minCoeff()) + ")");
  }
  const Eigen::MatrixXd ra = ea.eigenvectors() * ea.eigenvalues().cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = ra * sb * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  if (em.info() != Eigen::Success) throw NumericalError("fid: eigendecomposition failed");
  const double scale = std::max(1.0, em.eigenvalues().cwiseAbs().maxCoeff());
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < F; ++i) {
    const double ev = em.eigenvalues()(i);
    if (ev < -1e-9 * scale) throw NumericalError("fid: negative eigenvalue " + std::to_string(ev) + " in covariance product");
    tr_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  const double value = dmu.squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

std::string to_string(DivMode m) { return m == DivMode::pairs ? "pairs" : "variance"; }

DivMode parse_div_mode(const std::string& s) {
  if (s == "pairs") return DivMode::pairs;
  if (s == "variance") return DivMode::variance;
  throw ConfigError("unknown DIV mode '" + s + "'");
}

double div(const FeatureSet& a, int pairs, std::uint64_t seed, DivMode mode) {
  check_set(a, "div");
  const Eigen::Index n = a.features.rows();
  if (mode == DivMode::variance) return covariance(a.features).trace();
  if (pairs < 1 || pairs > n / 2) {
    throw ConfigError("div: pairs must lie in 1.." + std::to_string(n / 2) + ", got " + std::to_string(pairs));
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, {0x646976u});
  std::shuffle(idx.begin(), idx.end(), rng);
  double total = 0.0;
  for (int p = 0; p < pairs; ++p) total += (a.features.row(idx[2 * p]) - a.features.row(idx[2 * p + 1])).norm();
  return total / pairs;
}

double recognition_accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw ShapeError("recognition accuracy: length mismatch");
  if (labels.empty()) throw InvalidParameter("recognition accuracy: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<Segment> segments(const std::vector<int>& labels, const std::vector<int>& background) {
  std::vector<Segment> out;
  const int n = static_cast<int>(labels.size());
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && labels[j] == labels[i]) ++j;
    if (std::find(background.begin(), background.end(), labels[i]) == background.end()) out.push_back({labels[i], i, j});
    i = j;
  }
  return out;
}

double framewise_acc(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw ShapeError("framewise accuracy: length mismatch");
  if (gt.empty()) throw InvalidParameter("framewise accuracy: empty sequence");
  return recognition_accuracy(pred, gt);
}

double edit_score(const std::vector<int>& pred, const std::vector<int>& gt, const std::vector<int>& background) {
  if (pred.empty() || gt.empty()) throw InvalidParameter("edit score: empty label sequence");
  const auto p = segments(pred, background), g = segments(gt, background);
  const std::size_t m = p.size(), n = g.size();
  if (m == 0 && n == 0) return 100.0;
  std::vector<std::vector<std::size_t>> d(m + 1, std::vector<std::size_t>(n + 1));
  for (std::size_t i = 0; i <= m; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= n; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (p[i - 1].label == g[j - 1].label ? 0 : 1);
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, sub});
    }
  }
  const double score = 100.0 * (1.0 - static_cast<double>(d[m][n]) / static_cast<double>(std::max(m, n)));
  return std::max(score, 0.0);
}

double f1_at_k(const std::vector<int>& pred, const std::vector<int>& gt, double tau, const std::vector<int>& background) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("f1: overlap threshold must lie in (0, 1]");
  const auto p = segments(pred, background), g = segments(gt, background);
  if (p.empty() && g.empty()) return 100.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<bool> used(g.size(), false);
  double tp = 0.0, fp = 0.0;
  for (const auto& s : p) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j].label != s.label) continue;
      const int inter = std::max(0, std::min(s.end, g[j].end) - std::max(s.start, g[j].start));
      const int uni = std::max(s.end, g[j].end) - std::min(s.start, g[j].start);
      const double iou = static_cast<double>(inter) / uni;
      if (iou > best) {
        best = iou;
        arg = j;
      }
    }
    if (best >= tau && !used[arg]) {
      used[arg] = true;
      tp += 1.0;
    } else {
      fp += 1.0;
    }
  }
  const double fn = static_cast<double>(g.size()) - tp;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

MotionClassifier::MotionClassifier(nn::ParamStore& store, const ClassifierConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.input_dim <= 0 || cfg.hidden <= 0 || cfg.feature_dim <= 0 || cfg.num_classes < 2) {
    throw ConfigError("classifier: invalid dimensions");
  }
  frame_ = nn::Linear(store, "clf.frame", 2 * cfg.input_dim, cfg.hidden, rng);
  feat_ = nn::Linear(store, "clf.feat", 2 * cfg.hidden, cfg.feature_dim, rng);
  out_ = nn::Linear(store, "clf.out", cfg.feature_dim, cfg.num_classes, rng);
}

ag::Var MotionClassifier::features(const Mat& motion) const {
  if (motion.cols() != cfg_.input_dim || motion.rows() < 1) throw ShapeError("classifier: motion shape mismatch");
  const Eigen::Index T = motion.rows();
  Mat in(T, 2 * cfg_.input_dim);
  in.leftCols(cfg_.input_dim) = motion;
  in.rightCols(cfg_.input_dim).row(0).setZero();
  if (T > 1) in.rightCols(cfg_.input_dim).bottomRows(T - 1) = motion.bottomRows(T - 1) - motion.topRows(T - 1);
  const ag::Var h = ag::silu(frame_(ag::Var(in)));
  ag::SparseRows avg;
  avg.rows.resize(1);
  std::vector<int> all(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    avg.rows[0].emplace_back(static_cast<int>(t), 1.0 / static_cast<double>(T));
    all[static_cast<std::size_t>(t)] = static_cast<int>(t);
  }
  const ag::Var pooled = ag::concat_cols({ag::sparse_mix(h, avg, 1), ag::group_max(h, {all})});
  return ag::tanh(feat_(pooled));
}

ag::Var MotionClassifier::logits(const Mat& motion) const { return out_(features(motion)); }

int MotionClassifier::predict(const Mat& motion) const {
  const Mat l = logits(motion).value();
  Eigen::Index arg = 0;
  for (Eigen::Index c = 1; c < l.cols(); ++c)
    if (l(0, c) > l(0, arg)) arg = c;
  return static_cast<int>(arg);
}

FeatureSet MotionClassifier::feature_set(const std::vector<Mat>& motions) const {
  FeatureSet fs;
  fs.extractor_id = id;
  fs.features.resize(static_cast<Eigen::Index>(motions.size()), cfg_.feature_dim);
  for (std::size_t i = 0; i < motions.size(); ++i) fs.features.row(static_cast<Eigen::Index>(i)) = features(motions[i]).value();
  return fs;
}

ExtractorReport feature_extractor_train(MotionClassifier& clf, nn::ParamStore& store, const std::vector<Mat>& motions,
                                        const std::vector<int>& labels, const ExtractorTraining& opts) {
  if (motions.size() != labels.size() || motions.empty()) throw ShapeError("extractor training: data/label mismatch");
  const int K = clf.config().num_classes;
  for (int l : labels)
    if (l < 0 || l >= K) throw ConfigError("extractor training: label outside the class set");
  nn::Adam opt(store, {.lr = opts.lr});
  const std::size_t n = motions.size();
  for (int step = 0; step < opts.steps; ++step) {
    Rng rng = make_rng(opts.seed, {0x636c66u, static_cast<std::uint64_t>(step)});
    std::vector<ag::Var> logits;
    std::vector<int> batch_labels;
    for (int b = 0; b < std::min<int>(opts.batch, static_cast<int>(n)); ++b) {
      const std::size_t i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n) - 1));
      logits.push_back(clf.logits(motions[i]));
      batch_labels.push_back(labels[i]);
    }
    const ag::Var loss = ag::cross_entropy(ag::concat_rows(logits), batch_labels);
    if (!std::isfinite(loss.item())) throw NumericalError("extractor training: non-finite loss at step " + std::to_string(step));
    ag::backward(loss);
    opt.step();
  }
  Fnv1a h;
  h.str("motion-classifier").pod(clf.config()).pod(opts.steps).pod(opts.batch).pod(opts.lr).pod(opts.seed);
  for (std::size_t i = 0; i < n; ++i) h.matrix(motions[i]).pod(labels[i]);
  clf.id = "mc-" + h.hex();

  ExtractorReport rep;
  std::vector<int> pred;
  for (const auto& m : motions) pred.push_back(clf.predict(m));
  rep.train_accuracy = recognition_accuracy(pred, labels);
  if (rep.train_accuracy <= 100.0 / K) {
    rep.warning = "feature extractor underfits: train accuracy " + std::to_string(rep.train_accuracy) +
                  " is not above chance " + std::to_string(100.0 / K);
  }
  return rep;
}

double recognition_accuracy(const MotionClassifier& clf, const std::vector<Mat>& motions, const std::vector<int>& labels) {
  for (int l : labels) {
    if (l < 0 || l >= clf.config().num_classes) throw ConfigError("recognition accuracy: label outside classifier classes");
  }
  std::vector<int> pred;
  for (const auto& m : motions) pred.push_back(clf.predict(m));
  return recognition_accuracy(pred, labels);
}

}  // namespace onlinehoi::metrics
