#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tissueseg/graph.hpp"
#include "tissueseg/matrix.hpp"
#include "tissueseg/rng.hpp"
#include "tissueseg/tape.hpp"

namespace tissueseg {

// Owners of parameter groups: GIN backbone, the two graph heads, node head.
enum class ParamGroup : int { Backbone = 0, GraphHeads = 1, NodeHead = 2 };
inline constexpr int kNumParamGroups = 3;
std::string_view to_string(ParamGroup g);
ParamGroup parse_param_group(std::string_view s);

struct Parameter {
  std::string name;
  ParamGroup group;
  Matrix value;
  bool operator==(const Parameter&) const = default;
};

// Named matrices plus per-group freeze flags.
class ParameterSet {
 public:
  std::size_t add(std::string name, ParamGroup group, Matrix value);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  const Parameter* find(std::string_view name) const;

  bool frozen(ParamGroup g) const { return frozen_[static_cast<std::size_t>(g)]; }
  void set_frozen(ParamGroup g, bool f) { frozen_[static_cast<std::size_t>(g)] = f; }
  bool trainable(std::size_t i) const { return !frozen(params_[i].group); }

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<Parameter> params_;
  std::array<bool, kNumParamGroups> frozen_{};
};

// Weight (out x in) and bias (1 x out) as recorded on a tape.
struct LinearVars {
  Var weight;
  Var bias;
};
using MlpVars = std::vector<LinearVars>;

// Dropout source for training passes; nullptr means inference.
struct DropoutContext {
  Rng* rng = nullptr;
  bool training() const { return rng != nullptr; }
};

// affine -> ReLU -> inverted dropout (training only) -> ... -> affine.
Var mlp_forward(Tape& tape, Var x, const MlpVars& layers, double dropout_rate, DropoutContext drop);

// h'(v) = MLP(h(v) + mean_{u in N(v)} h(u)); isolated nodes use a zero mean.
Var gin_layer(Tape& tape, Var h, const std::vector<std::vector<int>>& neighbors,
              const MlpVars& mlp, double dropout_rate, DropoutContext drop);

// Jumping Knowledge: concatenation of every GIN layer's output.
Var backbone_forward(Tape& tape, Var input, const std::vector<std::vector<int>>& neighbors,
                     const std::vector<MlpVars>& layers, double dropout_rate, DropoutContext drop);

// Column-wise mean over nodes.
Var readout_mean(Tape& tape, Var node_embeddings);

struct ModelConfig {
  std::size_t input_dim = 0;  // node feature dim + 2 centroid coordinates
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t head_hidden = 128;
  std::size_t num_classes = 4;
  double dropout_backbone = 0.2;
  double dropout_graph_head = 0.5;
  double dropout_node_head = 0.5;

  std::size_t embedding_dim() const { return hidden * layers; }
  bool operator==(const ModelConfig&) const = default;
};

// Which outputs a forward pass should compute.
struct ForwardRequest {
  bool graph_heads = true;
  bool node_head = true;
};

struct ForwardVars {
  Var embeddings;        // |V| x (T*hidden)
  Var graph_embedding;   // 1 x (T*hidden)
  Var logits_primary;    // 1 x K
  Var logits_secondary;  // 1 x K
  Var node_logits;       // |V| x K
};

// Plain-value outputs of an inference pass.
struct Prediction {
  Matrix embeddings;
  std::vector<double> prob_primary;
  std::vector<double> prob_secondary;
  Matrix node_probs;
};

// Model input: node features concatenated with centroids.
Matrix model_input(const TissueGraph& g);

std::vector<double> softmax(std::span<const double> logits);

// GIN backbone with Jumping Knowledge, primary/secondary graph heads and a
// node head, all 2-layer MLPs.
class GinModel {
 public:
  GinModel() = default;
  // Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.
  GinModel(const ModelConfig& cfg, std::uint64_t seed);
  GinModel(const ModelConfig& cfg, ParameterSet params);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Records every parameter as a tape leaf; trainable groups require grad.
  std::vector<Var> bind(Tape& tape) const;

  ForwardVars forward(Tape& tape, const std::vector<Var>& bound, const TissueGraph& g,
                      DropoutContext drop, ForwardRequest request = {}) const;

  // Heads applied to given node embeddings (used for attribution).
  Var primary_head(Tape& tape, const std::vector<Var>& bound, Var graph_embedding, DropoutContext drop) const;
  Var secondary_head(Tape& tape, const std::vector<Var>& bound, Var graph_embedding, DropoutContext drop) const;
  Var node_head(Tape& tape, const std::vector<Var>& bound, Var node_embeddings, DropoutContext drop) const;

  Prediction predict(const TissueGraph& g) const;

  bool operator==(const GinModel&) const = default;

 private:
  struct LinearIndex {
    std::size_t weight;
    std::size_t bias;
    bool operator==(const LinearIndex&) const = default;
  };
  using MlpIndex = std::vector<LinearIndex>;

  void index_parameters();
  MlpVars resolve(const std::vector<Var>& bound, const MlpIndex& mlp) const;

  ModelConfig cfg_;
  ParameterSet params_;
  std::vector<MlpIndex> gin_;
  MlpIndex head_primary_;
  MlpIndex head_secondary_;
  MlpIndex node_head_;
};

}  // namespace tissueseg
