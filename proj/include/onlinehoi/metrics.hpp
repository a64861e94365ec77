#pragma once

// Generation metrics (FID, DIV, recognition accuracy), segmentation metrics
// (frame accuracy, segmental edit, F1@tau) and the motion classifier whose
// penultimate layer supplies the features.

#include "onlinehoi/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace onlinehoi::metrics {

using ag::Mat;

struct FeatureSet {
  Mat features;  // n x F
  std::string extractor_id;
};

/// Frechet distance between Gaussian fits, with 1e-6 added to both
/// covariance diagonals. Throws NumericalError when the square root fails.
double fid(const FeatureSet& a, const FeatureSet& b);

enum class DivMode { pairs, variance };

std::string to_string(DivMode m);
DivMode parse_div_mode(const std::string& s);

/// pairs: mean distance over `pairs` disjoint random pairs drawn from `seed`.
/// variance: trace of the feature covariance (pairs and seed unused).
double div(const FeatureSet& a, int pairs, std::uint64_t seed, DivMode mode = DivMode::pairs);

/// Percentage of predictions equal to the labels.
double recognition_accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

struct Segment {
  int label;
  int start;
  int end;  // exclusive
};

/// Run-length segments; labels listed in `background` are dropped.
std::vector<Segment> segments(const std::vector<int>& labels, const std::vector<int>& background = {});

double framewise_acc(const std::vector<int>& pred, const std::vector<int>& gt);
double edit_score(const std::vector<int>& pred, const std::vector<int>& gt, const std::vector<int>& background = {});
double f1_at_k(const std::vector<int>& pred, const std::vector<int>& gt, double tau,
               const std::vector<int>& background = {});

struct ClassifierConfig {
  int input_dim = 6;
  int hidden = 32;
  int feature_dim = 16;
  int num_classes = 4;
};

/// Non-causal sequence classifier: per-frame MLP on [x_t, x_t - x_{t-1}],
/// mean and max pooling over time, a feature layer, then class logits.
class MotionClassifier {
 public:
  MotionClassifier(nn::ParamStore& store, const ClassifierConfig& cfg, Rng& rng);

  ag::Var features(const Mat& motion) const;
  ag::Var logits(const Mat& motion) const;
  int predict(const Mat& motion) const;

  FeatureSet feature_set(const std::vector<Mat>& motions) const;
  const ClassifierConfig& config() const { return cfg_; }
  std::string id;

 private:
  ClassifierConfig cfg_;
  nn::Linear frame_, feat_, out_;
};

struct ExtractorTraining {
  int steps = 300;
  int batch = 16;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

struct ExtractorReport {
  double train_accuracy = 0.0;
  std::string warning;  // set when training accuracy is not above chance
};

/// Trains `clf` on labeled motions and stamps its id with the data,
/// config and seed.
ExtractorReport feature_extractor_train(MotionClassifier& clf, nn::ParamStore& store, const std::vector<Mat>& motions,
                                        const std::vector<int>& labels, const ExtractorTraining& opts);

/// Recognition accuracy of `clf` on generated motions against their
/// conditioning classes. Throws ConfigError for labels the classifier lacks.
double recognition_accuracy(const MotionClassifier& clf, const std::vector<Mat>& motions, const std::vector<int>& labels);

}  // namespace onlinehoi::metrics
