#include "tissueseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tissueseg/errors.hpp"

namespace tissueseg {

std::vector<double> class_weights(std::span<const std::size_t> counts) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw UsageError("class_weights: all class counts are zero");
  std::vector<double> w(counts.size(), 0.0);
  double max_defined = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    w[i] = std::log(static_cast<double>(total) / static_cast<double>(counts[i]));
    max_defined = std::max(max_defined, w[i]);
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) w[i] = max_defined;
  }
  return w;
}

double weighted_ce(std::span<const double> logits, int target, std::span<const double> weights) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw UsageError("weighted_ce: target out of range");
  }
  if (weights.size() != logits.size()) throw UsageError("weighted_ce: weight count != classes");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_p = logits[static_cast<std::size_t>(target)] - mx - std::log(z);
  return -weights[static_cast<std::size_t>(target)] * log_p;
}

Var graph_loss(Tape& tape, Var logits_primary, Var logits_secondary, const GleasonLabel& label,
               double lambda, std::span<const double> weights) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw UsageError("graph_loss: lambda must be in [0,1], got " + std::to_string(lambda));
  }
  const int p[1] = {index_of(label.primary)};
  const int s[1] = {index_of(label.secondary)};
  const Var lp = tape.weighted_cross_entropy(logits_primary, p, weights, 1.0);
  const Var ls = tape.weighted_cross_entropy(logits_secondary, s, weights, 1.0);
  return tape.add(tape.scale(lp, lambda), tape.scale(ls, 1.0 - lambda));
}

Var node_loss(Tape& tape, Var node_logits, std::span<const int> node_labels,
              std::span<const double> weights) {
  const auto labeled = static_cast<std::size_t>(
      std::count_if(node_labels.begin(), node_labels.end(), [](int l) { return l >= 0; }));
  if (labeled == 0) return Var{};
  return tape.weighted_cross_entropy(node_logits, node_labels, weights, static_cast<double>(labeled));
}

ClassMask mask_from_node_labels(const SuperpixelMap& sp, std::span<const int> node_classes) {
  if (node_classes.size() != static_cast<std::size_t>(sp.num_segments)) {
    throw UsageError("mask_from_node_labels: " + std::to_string(node_classes.size()) +
                     " classes for " + std::to_string(sp.num_segments) + " segments");
  }
  ClassMask mask;
  mask.width = sp.width;
  mask.height = sp.height;
  mask.classes.resize(sp.labels.size());
  for (std::size_t p = 0; p < sp.labels.size(); ++p) {
    const int c = node_classes[static_cast<std::size_t>(sp.labels[p])];
    if (c < 0 || c >= kNumPatterns) {
      throw UsageError("mask_from_node_labels: segment " + std::to_string(sp.labels[p]) +
                       " has no valid class");
    }
    mask.classes[p] = static_cast<std::uint8_t>(c);
  }
  return mask;
}

}  // namespace tissueseg
