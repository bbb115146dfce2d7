#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tissueseg/gleason.hpp"
#include "tissueseg/graph.hpp"
#include "tissueseg/model.hpp"
#include "tissueseg/tape.hpp"

namespace tissueseg {

// Per-node importance of the nodes of one graph towards one class.
struct AttributionMap {
  Pattern cls = Pattern::B;
  std::vector<double> scores;
};

// Grad-CAM over node embeddings H: channel weights are the node-averaged
// gradients of the scalar `logit(H)`, node score is ReLU(H(v) . weights).
std::vector<double> graph_grad_cam(const Matrix& embeddings,
                                   const std::function<Var(Tape&, Var)>& logit);

enum class GraphHead { Primary, Secondary };

// Attribution of class `cls` for one graph head, computed on the Jumping
// Knowledge embeddings of an inference pass (raw, not normalised).
AttributionMap graph_grad_cam(const GinModel& model, const TissueGraph& g, GraphHead head, Pattern cls);

// (s - min) / (max - min); all zeros when max == min.
std::vector<double> minmax_normalize(std::span<const double> scores);

// Pseudo node labels for one graph: class index per node or kUnlabeled, and
// the normalised score that won the node.
struct PseudoLabelSet {
  std::vector<int> labels;
  std::vector<double> scores;
  double select_percent = 0.0;
  double threshold = 0.0;

  std::size_t assigned() const;
  std::size_t assigned(Pattern p) const;
};

// Per-class cap: ceil(select_percent% of |V|).
std::size_t selection_budget(double select_percent, std::size_t num_nodes);

// Keeps nodes whose normalised score is >= threshold, capped to the highest
// `selection_budget` scores (ties to the lower node id). A node selected for
// both classes goes to the higher score, ties to primary. P == S uses the
// primary map only; benign labels mark every node benign.
PseudoLabelSet synthesize_pseudo_labels(std::span<const double> primary_scores,
                                        std::span<const double> secondary_scores,
                                        const GleasonLabel& label, double select_percent,
                                        double threshold);

// Full pseudo-labelling of one graph with its image label.
PseudoLabelSet pseudo_label_graph(const GinModel& model, const TissueGraph& g,
                                  double select_percent, double threshold);

// Baseline segmentation: argmax over the min-max normalised primary-head
// attribution maps of every class (ties to the lower class index).
std::vector<int> attribution_argmax_labels(const GinModel& model, const TissueGraph& g);

// CSV rows graph_id,node_id,class,score; unlabeled nodes are omitted.
struct PseudoLabelRow {
  std::string graph_id;
  int node_id = 0;
  Pattern cls = Pattern::B;
  double score = 0.0;
};
std::string pseudo_labels_to_csv(const std::vector<std::string>& graph_ids,
                                 const std::vector<PseudoLabelSet>& sets);
std::vector<PseudoLabelRow> parse_pseudo_label_csv(const std::string& text);

}  // namespace tissueseg
