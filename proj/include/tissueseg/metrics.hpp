#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tissueseg/gleason.hpp"
#include "tissueseg/raster.hpp"

namespace tissueseg {

struct DiceResult {
  // One entry per class; nullopt when the class is absent from every
  // prediction and ground-truth mask.
  std::vector<std::optional<double>> per_class;
  double average = 0.0;
};

// Pixel counts are pooled over all images per class, then averaged over the
// classes that occur. With `per_image`, Dice is computed per image (same
// exclusion rule) and the per-class values are averaged over images.
DiceResult dice_scores(std::span<const ClassMask> pred, std::span<const ClassMask> gt,
                       int num_classes = kNumPatterns, bool per_image = false);

// Support-weighted F1 over string labels.
double weighted_f1(std::span<const std::string> pred, std::span<const std::string> gt);

// Quadratic weighted kappa over ordinal grades 0..num_grades-1.
double quadratic_kappa(std::span<const int> pred, std::span<const int> gt, int num_grades = 6);

struct BrierNll {
  double brier = 0.0;
  double nll = 0.0;
};

// Mean over samples of sum_k (y_k - p_k)^2 and of -log p_target.
// Probabilities are clamped at 1e-15 inside the log.
BrierNll brier_nll(std::span<const std::vector<double>> probs, std::span<const int> targets);

struct ReliabilityBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

// Equal-width bins over [0,1]: the first is [0, 1/B], the rest (l, u].
std::size_t confidence_bin(double confidence, std::size_t num_bins);
std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidence,
                                             std::span<const int> correct, std::size_t num_bins = 10);
double ece_from_bins(std::span<const ReliabilityBin> bins);
double ece(std::span<const double> confidence, std::span<const int> correct, std::size_t num_bins = 10);

// rows = ground truth, cols = prediction, in the order of `labels`.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::string> pred,
                                                       std::span<const std::string> gt,
                                                       std::span<const std::string> labels);

// Sorted union of observed grade strings plus "B".
std::vector<std::string> grade_label_space(std::span<const std::string> pred,
                                           std::span<const std::string> gt);

// Slide-level prediction for reporting.
struct SlidePrediction {
  GleasonLabel predicted;
  GleasonLabel truth;
  std::vector<double> prob_primary;
  std::vector<double> prob_secondary;
  bool coerced = false;  // decoded label differed from the raw head argmaxes
};

struct MetricReport {
  std::vector<std::optional<double>> dice_per_class;
  double dice_average = 0.0;
  double pixel_accuracy = 0.0;
  double weighted_f1 = 0.0;
  double kappa = 0.0;
  BrierNll primary;
  BrierNll secondary;
  BrierNll combined;
  double ece = 0.0;  // primary head
  double ece_secondary = 0.0;
  std::vector<std::string> grade_labels;
  std::vector<std::vector<std::size_t>> confusion_grade;
  std::vector<std::vector<std::size_t>> confusion_isup;
  std::vector<std::vector<std::size_t>> confusion_primary;
  std::vector<std::vector<std::size_t>> confusion_secondary;
  std::vector<ReliabilityBin> reliability;
  std::size_t num_slides = 0;
  std::size_t num_masks = 0;
  std::size_t num_coerced = 0;
};

// Slide metrics need probabilities for Brier/NLL/ECE; when a prediction has
// none those metrics are computed from one-hot vectors of the prediction.
MetricReport evaluate(std::span<const SlidePrediction> slides, std::span<const ClassMask> pred_masks,
                      std::span<const ClassMask> gt_masks, std::size_t ece_bins = 10,
                      bool per_image_dice = false);

std::string report_to_json(const MetricReport& r);
std::string reliability_to_csv(std::span<const ReliabilityBin> bins);

}  // namespace tissueseg
