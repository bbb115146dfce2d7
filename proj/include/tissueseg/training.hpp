#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tissueseg/attribution.hpp"
#include "tissueseg/graph.hpp"
#include "tissueseg/metrics.hpp"
#include "tissueseg/model.hpp"
#include "tissueseg/optimizer.hpp"

namespace tissueseg {

struct TrainConfig {
  int batch_size = 8;
  double lr = 5e-4;
  int layers = 4;
  int hidden = 64;
  int head_hidden = 128;
  double dropout_backbone = 0.2;
  double dropout_graph_head = 0.5;
  double dropout_node_head = 0.5;
  double lambda = 0.5;
  double select_percent = 10.0;
  double threshold = 0.6;
  std::optional<double> finetune_lr;  // defaults to lr / 10
  int epochs_graph = 50;
  int epochs_node = 50;
  int epochs_finetune = 20;
  int patience = 15;
  double node_loss_weight = 1.0;
  OptimizerMode optimizer = OptimizerMode::Adam;
  std::uint64_t seed = 0;
  bool allow_offgrid = false;

  double effective_finetune_lr() const { return finetune_lr.value_or(lr / 10.0); }
  ModelConfig model_config(std::size_t feature_dim) const;
  bool operator==(const TrainConfig&) const = default;
};

// Throws UsageError "<key> off-grid" for values outside the tuning grids
// (unless allow_offgrid) and "<key> out of range" for impossible values.
void validate_config(const TrainConfig& cfg);

// Flat key=value text; '#' starts a comment. Unknown keys are rejected.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const TrainConfig& cfg);

enum class Phase { Graph, Node, Finetune, FullySupervised };
std::string_view to_string(Phase p);
Phase parse_phase(std::string_view s);

struct Checkpoint {
  GinModel model;
  Optimizer optimizer;
  TrainConfig config;
  Phase phase = Phase::Graph;
  int epoch = 0;
  double val_wf1 = 0.0;

  bool operator==(const Checkpoint&) const = default;
};

std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean minibatch loss with dropout active
  double eval_loss = 0.0;   // same objective over the training set, dropout off
  double val_wf1 = 0.0;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<EpochLog> history;
  double initial_eval_loss = 0.0;
};

std::string history_to_json(const TrainResult& r);

// Inference helpers.
SlidePrediction predict_slide(const GinModel& model, const TissueGraph& g);
std::vector<int> predict_node_classes(const GinModel& model, const TissueGraph& g);
double validation_wf1(const GinModel& model, const std::vector<TissueGraph>& graphs);

// Phase 1: backbone and graph heads on image labels; node head frozen.
TrainResult train_graph_phase(const std::vector<TissueGraph>& train, const std::vector<TissueGraph>& val,
                              const TrainConfig& cfg);

// Phase 2: node head only, on pseudo labels (one set per training graph).
// Validation wF1 is logged but cannot change, so the last epoch is kept.
TrainResult train_node_phase(const std::vector<TissueGraph>& train,
                             const std::vector<PseudoLabelSet>& pseudo, const TrainConfig& cfg,
                             const Checkpoint& start, const std::vector<TissueGraph>& val = {});

// Phase 3: everything unfrozen; graph loss + node_loss_weight * pseudo-label
// node loss at the fine-tune learning rate.
TrainResult finetune_joint(const std::vector<TissueGraph>& train, const std::vector<PseudoLabelSet>& pseudo,
                           const std::vector<TissueGraph>& val, const TrainConfig& cfg,
                           const Checkpoint& start);

// Upper-bound mode: all parameters on graph loss + node loss against the
// ground-truth node labels stored in the graphs.
TrainResult train_fully_supervised_nodes(const std::vector<TissueGraph>& train,
                                         const std::vector<TissueGraph>& val, const TrainConfig& cfg);

// Objective values with dropout off (used for trajectories and tests).
double graph_objective(const GinModel& model, const std::vector<TissueGraph>& graphs, const TrainConfig& cfg);
double node_objective(const GinModel& model, const std::vector<TissueGraph>& graphs,
                      const std::vector<std::vector<int>>& node_labels);

}  // namespace tissueseg
