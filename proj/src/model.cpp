#include "tissueseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "tissueseg/errors.hpp"

namespace tissueseg {

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Backbone: return "backbone";
    case ParamGroup::GraphHeads: return "graph_heads";
    case ParamGroup::NodeHead: return "node_head";
  }
  return "?";
}

ParamGroup parse_param_group(std::string_view s) {
  if (s == "backbone") return ParamGroup::Backbone;
  if (s == "graph_heads") return ParamGroup::GraphHeads;
  if (s == "node_head") return ParamGroup::NodeHead;
  throw DataError("unknown parameter group '" + std::string(s) + "'");
}

std::size_t ParameterSet::add(std::string name, ParamGroup group, Matrix value) {
  if (find(name) != nullptr) throw UsageError("duplicate parameter name " + name);
  params_.push_back({std::move(name), group, std::move(value)});
  return params_.size() - 1;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Var mlp_forward(Tape& tape, Var x, const MlpVars& layers, double dropout_rate, DropoutContext drop) {
  if (layers.empty()) throw UsageError("mlp_forward: no layers");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw UsageError("dropout rate must be in [0,1)");
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = tape.linear(h, layers[i].weight, layers[i].bias);
    if (i + 1 == layers.size()) break;
    h = tape.relu(h);
    if (drop.training() && dropout_rate > 0.0) {
      const Matrix& v = tape.value(h);
      Matrix mask(v.rows(), v.cols());
      const double keep = 1.0 - dropout_rate;
      for (double& m : mask.data()) m = drop.rng->uniform() < keep ? 1.0 / keep : 0.0;
      h = tape.mask_multiply(h, std::move(mask));
    }
  }
  return h;
}

Var gin_layer(Tape& tape, Var h, const std::vector<std::vector<int>>& neighbors,
              const MlpVars& mlp, double dropout_rate, DropoutContext drop) {
  if (tape.value(h).rows() != neighbors.size()) {
    throw UsageError("gin_layer: feature rows != node count");
  }
  return mlp_forward(tape, tape.add_neighbor_mean(h, neighbors), mlp, dropout_rate, drop);
}

Var backbone_forward(Tape& tape, Var input, const std::vector<std::vector<int>>& neighbors,
                     const std::vector<MlpVars>& layers, double dropout_rate, DropoutContext drop) {
  if (layers.empty()) throw UsageError("backbone needs at least one GIN layer");
  std::vector<Var> outputs;
  Var h = input;
  for (const MlpVars& mlp : layers) {
    h = gin_layer(tape, h, neighbors, mlp, dropout_rate, drop);
    outputs.push_back(h);
  }
  if (outputs.size() == 1) return outputs.front();
  return tape.concat_cols(outputs);
}

Var readout_mean(Tape& tape, Var node_embeddings) {
  if (tape.value(node_embeddings).rows() == 0) throw UsageError("readout on an empty graph");
  return tape.mean_rows(node_embeddings);
}

Matrix model_input(const TissueGraph& g) {
  const std::size_t d = g.features.cols();
  Matrix x(g.num_nodes, d + 2);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    for (std::size_t k = 0; k < d; ++k) x(v, k) = g.features(v, k);
    x(v, d) = g.centroids(v, 0);
    x(v, d + 1) = g.centroids(v, 1);
  }
  return x;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

namespace {

void add_mlp(ParameterSet& ps, const std::string& prefix, ParamGroup group,
             const std::vector<std::size_t>& dims, Rng* rng) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t in = dims[i];
    const std::size_t out = dims[i + 1];
    Matrix w(out, in);
    if (rng != nullptr) {
      const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
      for (double& v : w.data()) v = rng->uniform(-bound, bound);
    }
    ps.add(prefix + ".fc" + std::to_string(i) + ".weight", group, std::move(w));
    ps.add(prefix + ".fc" + std::to_string(i) + ".bias", group, Matrix(1, out));
  }
}

}  // namespace

GinModel::GinModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.input_dim == 0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.head_hidden == 0 ||
      cfg.num_classes == 0) {
    throw UsageError("model dimensions must be positive");
  }
  Rng rng(seed);
  for (std::size_t t = 0; t < cfg.layers; ++t) {
    const std::size_t in = t == 0 ? cfg.input_dim : cfg.hidden;
    add_mlp(params_, "backbone.gin" + std::to_string(t), ParamGroup::Backbone,
            {in, cfg.hidden, cfg.hidden}, &rng);
  }
  const std::size_t emb = cfg.embedding_dim();
  add_mlp(params_, "head.primary", ParamGroup::GraphHeads, {emb, cfg.head_hidden, cfg.num_classes}, &rng);
  add_mlp(params_, "head.secondary", ParamGroup::GraphHeads, {emb, cfg.head_hidden, cfg.num_classes}, &rng);
  add_mlp(params_, "node_head", ParamGroup::NodeHead, {emb, cfg.head_hidden, cfg.num_classes}, &rng);
  index_parameters();
}

GinModel::GinModel(const ModelConfig& cfg, ParameterSet params)
    : cfg_(cfg), params_(std::move(params)) {
  index_parameters();
}

void GinModel::index_parameters() {
  auto lookup = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != name) continue;
      if (params_[i].value.rows() != rows || params_[i].value.cols() != cols) {
        throw DataError("parameter " + name + " has shape " + std::to_string(params_[i].value.rows()) +
                        "x" + std::to_string(params_[i].value.cols()) + ", expected " +
                        std::to_string(rows) + "x" + std::to_string(cols));
      }
      return i;
    }
    throw DataError("missing parameter " + name);
  };
  auto mlp = [&](const std::string& prefix, const std::vector<std::size_t>& dims) {
    MlpIndex idx;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const std::string base = prefix + ".fc" + std::to_string(i);
      idx.push_back({lookup(base + ".weight", dims[i + 1], dims[i]), lookup(base + ".bias", 1, dims[i + 1])});
    }
    return idx;
  };
  gin_.clear();
  for (std::size_t t = 0; t < cfg_.layers; ++t) {
    const std::size_t in = t == 0 ? cfg_.input_dim : cfg_.hidden;
    gin_.push_back(mlp("backbone.gin" + std::to_string(t), {in, cfg_.hidden, cfg_.hidden}));
  }
  const std::size_t emb = cfg_.embedding_dim();
  head_primary_ = mlp("head.primary", {emb, cfg_.head_hidden, cfg_.num_classes});
  head_secondary_ = mlp("head.secondary", {emb, cfg_.head_hidden, cfg_.num_classes});
  node_head_ = mlp("node_head", {emb, cfg_.head_hidden, cfg_.num_classes});
}

std::vector<Var> GinModel::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    vars.push_back(tape.leaf(params_[i].value, params_.trainable(i)));
  }
  return vars;
}

MlpVars GinModel::resolve(const std::vector<Var>& bound, const MlpIndex& mlp) const {
  if (bound.size() != params_.size()) throw UsageError("parameter binding does not match model");
  MlpVars out;
  for (const LinearIndex& li : mlp) out.push_back({bound[li.weight], bound[li.bias]});
  return out;
}

Var GinModel::primary_head(Tape& tape, const std::vector<Var>& bound, Var graph_embedding,
                           DropoutContext drop) const {
  return mlp_forward(tape, graph_embedding, resolve(bound, head_primary_), cfg_.dropout_graph_head, drop);
}

Var GinModel::secondary_head(Tape& tape, const std::vector<Var>& bound, Var graph_embedding,
                             DropoutContext drop) const {
  return mlp_forward(tape, graph_embedding, resolve(bound, head_secondary_), cfg_.dropout_graph_head, drop);
}

Var GinModel::node_head(Tape& tape, const std::vector<Var>& bound, Var node_embeddings,
                        DropoutContext drop) const {
  return mlp_forward(tape, node_embeddings, resolve(bound, node_head_), cfg_.dropout_node_head, drop);
}

ForwardVars GinModel::forward(Tape& tape, const std::vector<Var>& bound, const TissueGraph& g,
                              DropoutContext drop, ForwardRequest request) const {
  Matrix input = model_input(g);
  if (input.cols() != cfg_.input_dim) {
    throw DataError("graph feature dim " + std::to_string(input.cols() - 2) +
                    " does not match model input " + std::to_string(cfg_.input_dim - 2));
  }
  std::vector<MlpVars> layers;
  for (const MlpIndex& idx : gin_) layers.push_back(resolve(bound, idx));
  ForwardVars out;
  out.embeddings = backbone_forward(tape, tape.leaf(std::move(input)), g.neighbors(), layers,
                                    cfg_.dropout_backbone, drop);
  if (request.graph_heads) {
    out.graph_embedding = readout_mean(tape, out.embeddings);
    out.logits_primary = primary_head(tape, bound, out.graph_embedding, drop);
    out.logits_secondary = secondary_head(tape, bound, out.graph_embedding, drop);
  }
  if (request.node_head) {
    out.node_logits = node_head(tape, bound, out.embeddings, drop);
  }
  return out;
}

Prediction GinModel::predict(const TissueGraph& g) const {
  Tape tape;
  std::vector<Var> bound;
  bound.reserve(params_.size());
  for (const Parameter& p : params_.all()) bound.push_back(tape.leaf(p.value, false));
  const ForwardVars f = forward(tape, bound, g, DropoutContext{});
  Prediction pred;
  pred.embeddings = tape.value(f.embeddings);
  pred.prob_primary = softmax(tape.value(f.logits_primary).row(0));
  pred.prob_secondary = softmax(tape.value(f.logits_secondary).row(0));
  const Matrix& nl = tape.value(f.node_logits);
  pred.node_probs = Matrix(nl.rows(), nl.cols());
  for (std::size_t v = 0; v < nl.rows(); ++v) {
    const auto p = softmax(nl.row(v));
    std::copy(p.begin(), p.end(), pred.node_probs.row(v).begin());
  }
  return pred;
}

}  // namespace tissueseg
