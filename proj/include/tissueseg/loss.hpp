#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tissueseg/gleason.hpp"
#include "tissueseg/matrix.hpp"
#include "tissueseg/raster.hpp"
#include "tissueseg/tape.hpp"

namespace tissueseg {

// w_i = ln(sum_j N_j / N_i). Classes with N_i = 0 get the largest weight
// among classes that do occur.
std::vector<double> class_weights(std::span<const std::size_t> counts);

// -w[target] * ln softmax(logits)[target] for one sample.
double weighted_ce(std::span<const double> logits, int target, std::span<const double> weights);

// lambda * CE(primary) + (1 - lambda) * CE(secondary), each class-weighted.
Var graph_loss(Tape& tape, Var logits_primary, Var logits_secondary, const GleasonLabel& label,
               double lambda, std::span<const double> weights);

// Mean weighted CE over nodes with a label (kUnlabeled rows skipped).
// Returns an invalid Var when no node is labeled.
Var node_loss(Tape& tape, Var node_logits, std::span<const int> node_labels,
              std::span<const double> weights);

// Paints every pixel with its segment's class.
ClassMask mask_from_node_labels(const SuperpixelMap& sp, std::span<const int> node_classes);

}  // namespace tissueseg
