#include "tissueseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tissueseg/errors.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/loss.hpp"

namespace tissueseg {

using nlohmann::json;

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Graph: return "graph";
    case Phase::Node: return "node";
    case Phase::Finetune: return "finetune";
    case Phase::FullySupervised: return "fully_supervised";
  }
  return "?";
}

Phase parse_phase(std::string_view s) {
  for (Phase p : {Phase::Graph, Phase::Node, Phase::Finetune, Phase::FullySupervised}) {
    if (to_string(p) == s) return p;
  }
  throw DataError("unknown phase '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- checkpoints

namespace {

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

json config_json(const TrainConfig& c) {
  json j = {{"batch_size", c.batch_size},
            {"lr", c.lr},
            {"T", c.layers},
            {"hidden", c.hidden},
            {"head_hidden", c.head_hidden},
            {"dropout_backbone", c.dropout_backbone},
            {"dropout_graph_head", c.dropout_graph_head},
            {"dropout_node_head", c.dropout_node_head},
            {"lambda", c.lambda},
            {"n", c.select_percent},
            {"t", c.threshold},
            {"finetune_lr", c.finetune_lr ? json(*c.finetune_lr) : json(nullptr)},
            {"epochs_graph", c.epochs_graph},
            {"epochs_node", c.epochs_node},
            {"epochs_finetune", c.epochs_finetune},
            {"patience", c.patience},
            {"node_loss_weight", c.node_loss_weight},
            {"optimizer", c.optimizer == OptimizerMode::Adam ? "adam" : "sgd"},
            {"seed", c.seed},
            {"allow_offgrid", c.allow_offgrid}};
  return j;
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.layers = j.at("T").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.dropout_backbone = j.at("dropout_backbone").get<double>();
  c.dropout_graph_head = j.at("dropout_graph_head").get<double>();
  c.dropout_node_head = j.at("dropout_node_head").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.select_percent = j.at("n").get<double>();
  c.threshold = j.at("t").get<double>();
  if (!j.at("finetune_lr").is_null()) c.finetune_lr = j.at("finetune_lr").get<double>();
  c.epochs_graph = j.at("epochs_graph").get<int>();
  c.epochs_node = j.at("epochs_node").get<int>();
  c.epochs_finetune = j.at("epochs_finetune").get<int>();
  c.patience = j.at("patience").get<int>();
  c.node_loss_weight = j.at("node_loss_weight").get<double>();
  c.optimizer = j.at("optimizer").get<std::string>() == "sgd" ? OptimizerMode::GradientDescent : OptimizerMode::Adam;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.allow_offgrid = j.at("allow_offgrid").get<bool>();
  return c;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& c) {
  const ModelConfig& m = c.model.config();
  json j;
  j["format"] = "tissueseg-checkpoint";
  j["version"] = 1;
  j["phase"] = std::string(to_string(c.phase));
  j["epoch"] = c.epoch;
  j["val_wf1"] = c.val_wf1;
  j["seed"] = c.config.seed;
  j["config"] = config_json(c.config);
  j["model"] = {{"input_dim", m.input_dim},
                {"hidden", m.hidden},
                {"layers", m.layers},
                {"head_hidden", m.head_hidden},
                {"num_classes", m.num_classes},
                {"dropout_backbone", m.dropout_backbone},
                {"dropout_graph_head", m.dropout_graph_head},
                {"dropout_node_head", m.dropout_node_head}};
  json frozen = json::object();
  for (ParamGroup g : {ParamGroup::Backbone, ParamGroup::GraphHeads, ParamGroup::NodeHead}) {
    frozen[std::string(to_string(g))] = c.model.params().frozen(g);
  }
  j["frozen"] = frozen;
  json params = json::array();
  for (const Parameter& p : c.model.params().all()) {
    json e = matrix_json(p.value);
    e["name"] = p.name;
    e["group"] = std::string(to_string(p.group));
    params.push_back(std::move(e));
  }
  j["params"] = std::move(params);
  json m1 = json::array(), m2 = json::array();
  for (const Matrix& x : c.optimizer.first_moments()) m1.push_back(matrix_json(x));
  for (const Matrix& x : c.optimizer.second_moments()) m2.push_back(matrix_json(x));
  j["optimizer"] = {{"mode", c.optimizer.mode() == OptimizerMode::Adam ? "adam" : "sgd"},
                    {"lr", c.optimizer.lr()},
                    {"step", c.optimizer.step_count()},
                    {"m", std::move(m1)},
                    {"v", std::move(m2)}};
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "tissueseg-checkpoint") throw DataError("not a checkpoint");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    Checkpoint c;
    c.phase = parse_phase(j.at("phase").get<std::string>());
    c.epoch = j.at("epoch").get<int>();
    c.val_wf1 = j.at("val_wf1").get<double>();
    c.config = config_from(j.at("config"));
    const json& jm = j.at("model");
    ModelConfig m;
    m.input_dim = jm.at("input_dim").get<std::size_t>();
    m.hidden = jm.at("hidden").get<std::size_t>();
    m.layers = jm.at("layers").get<std::size_t>();
    m.head_hidden = jm.at("head_hidden").get<std::size_t>();
    m.num_classes = jm.at("num_classes").get<std::size_t>();
    m.dropout_backbone = jm.at("dropout_backbone").get<double>();
    m.dropout_graph_head = jm.at("dropout_graph_head").get<double>();
    m.dropout_node_head = jm.at("dropout_node_head").get<double>();
    ParameterSet ps;
    for (const json& p : j.at("params")) {
      ps.add(p.at("name").get<std::string>(), parse_param_group(p.at("group").get<std::string>()), matrix_from(p));
    }
    for (const auto& [name, f] : j.at("frozen").items()) ps.set_frozen(parse_param_group(name), f.get<bool>());
    c.model = GinModel(m, std::move(ps));
    const json& jo = j.at("optimizer");
    c.optimizer = Optimizer(jo.at("mode").get<std::string>() == "sgd" ? OptimizerMode::GradientDescent
                                                                      : OptimizerMode::Adam,
                            jo.at("lr").get<double>());
    c.optimizer.set_step_count(jo.at("step").get<long>());
    for (const json& x : jo.at("m")) c.optimizer.first_moments().push_back(matrix_from(x));
    for (const json& x : jo.at("v")) c.optimizer.second_moments().push_back(matrix_from(x));
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, checkpoint_to_json(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string history_to_json(const TrainResult& r) {
  json epochs = json::array();
  for (const EpochLog& e : r.history) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"eval_loss", e.eval_loss}, {"val_wf1", e.val_wf1}});
  }
  json j = {{"phase", std::string(to_string(r.best.phase))},
            {"initial_eval_loss", r.initial_eval_loss},
            {"best_epoch", r.best.epoch},
            {"best_val_wf1", r.best.val_wf1},
            {"epochs", std::move(epochs)}};
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------------ inference

SlidePrediction predict_slide(const GinModel& model, const TissueGraph& g) {
  const Prediction p = model.predict(g);
  auto argmax = [](const std::vector<double>& v) {
    return pattern_from_index(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
  };
  const DecodedLabel d = decode_label(argmax(p.prob_primary), argmax(p.prob_secondary));
  SlidePrediction s;
  s.predicted = d.label;
  s.coerced = d.coerced;
  if (g.image_label) s.truth = *g.image_label;
  s.prob_primary = p.prob_primary;
  s.prob_secondary = p.prob_secondary;
  return s;
}

std::vector<int> predict_node_classes(const GinModel& model, const TissueGraph& g) {
  const Prediction p = model.predict(g);
  std::vector<int> out(g.num_nodes, 0);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    const auto row = p.node_probs.row(v);
    out[v] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double validation_wf1(const GinModel& model, const std::vector<TissueGraph>& graphs) {
  if (graphs.empty()) return 0.0;
  std::vector<std::string> pred, gt;
  for (const TissueGraph& g : graphs) {
    if (!g.image_label) throw DataError("validation graph without image label");
    pred.push_back(predict_slide(model, g).predicted.grade());
    gt.push_back(g.image_label->grade());
  }
  return weighted_f1(pred, gt);
}

// ------------------------------------------------------------------- training

namespace {

// What a phase optimises for one graph.
struct Objective {
  bool graph = false;
  double lambda = 0.5;
  std::vector<double> graph_weights;
  double node_weight = 0.0;
  std::vector<double> node_weights;
  const std::vector<std::vector<int>>* node_labels = nullptr;

  bool uses_nodes() const { return node_weight > 0.0 && node_labels != nullptr; }
};

// Loss of graph i on the tape; invalid when the graph contributes nothing.
Var graph_term(Tape& tape, const GinModel& model, const std::vector<Var>& bound, const TissueGraph& g,
               std::size_t i, const Objective& obj, DropoutContext drop) {
  ForwardRequest req;
  req.graph_heads = obj.graph;
  req.node_head = obj.uses_nodes();
  const ForwardVars f = model.forward(tape, bound, g, drop, req);
  Var total;
  if (obj.graph) {
    total = graph_loss(tape, f.logits_primary, f.logits_secondary, *g.image_label, obj.lambda, obj.graph_weights);
  }
  if (obj.uses_nodes()) {
    const Var n = node_loss(tape, f.node_logits, (*obj.node_labels)[i], obj.node_weights);
    if (n.valid()) {
      const Var scaled = obj.node_weight == 1.0 ? n : tape.scale(n, obj.node_weight);
      total = total.valid() ? tape.add(total, scaled) : scaled;
    }
  }
  return total;
}

double objective_value(const GinModel& model, const std::vector<TissueGraph>& graphs, const Objective& obj) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    Tape tape;
    std::vector<Var> bound;
    for (const Parameter& p : model.params().all()) bound.push_back(tape.leaf(p.value, false));
    const Var l = graph_term(tape, model, bound, graphs[i], i, obj, DropoutContext{});
    if (!l.valid()) continue;
    sum += tape.value(l)(0, 0);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

enum class Selection { BestValidation, Last };

struct LoopSpec {
  Phase phase;
  int epochs;
  double lr;
  Selection selection;
  std::uint64_t salt;
};

TrainResult run_loop(GinModel model, const std::vector<TissueGraph>& train, const std::vector<TissueGraph>& val,
                     const Objective& obj, const TrainConfig& cfg, const LoopSpec& spec) {
  if (train.empty()) throw UsageError("empty training set");
  Optimizer opt(cfg.optimizer, spec.lr);
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + spec.salt);

  auto snapshot = [&](int epoch, double wf1) {
    Checkpoint c;
    c.model = model;
    c.optimizer = opt;
    c.config = cfg;
    c.phase = spec.phase;
    c.epoch = epoch;
    c.val_wf1 = wf1;
    return c;
  };

  TrainResult result;
  result.initial_eval_loss = objective_value(model, train, obj);
  const bool has_val = !val.empty();
  double best_wf1 = has_val ? validation_wf1(model, val) : 0.0;
  result.best = snapshot(0, best_wf1);
  bool have_best = spec.epochs == 0;
  int stale = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Tape tape;
      const std::vector<Var> bound = model.bind(tape);
      Var total;
      std::size_t terms = 0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t gi = order[k];
        const Var l = graph_term(tape, model, bound, train[gi], gi, obj, DropoutContext{&rng});
        if (!l.valid()) continue;
        loss_sum += tape.value(l)(0, 0);
        ++loss_count;
        total = total.valid() ? tape.add(total, l) : l;
        ++terms;
      }
      if (terms == 0) continue;
      const Var mean = tape.scale(total, 1.0 / static_cast<double>(terms));
      if (!std::isfinite(tape.value(mean)(0, 0))) throw NumericError("non-finite training loss");
      tape.backward(mean);
      std::vector<std::optional<Matrix>> grads(bound.size());
      for (std::size_t p = 0; p < bound.size(); ++p) {
        if (model.params().trainable(p)) grads[p] = tape.grad(bound[p]);
      }
      opt.step(model.params(), grads);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_count == 0 ? 0.0 : loss_sum / static_cast<double>(loss_count);
    log.eval_loss = objective_value(model, train, obj);
    log.val_wf1 = has_val ? validation_wf1(model, val) : 0.0;
    result.history.push_back(log);

    if (spec.selection == Selection::Last || !has_val) {
      result.best = snapshot(epoch, log.val_wf1);
      continue;
    }
    if (!have_best || log.val_wf1 > best_wf1) {
      best_wf1 = log.val_wf1;
      result.best = snapshot(epoch, log.val_wf1);
      have_best = true;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  const int last_epoch = result.history.empty() ? 0 : result.history.back().epoch;
  result.last = snapshot(last_epoch, result.history.empty() ? best_wf1 : result.history.back().val_wf1);
  return result;
}

std::vector<double> image_label_weights(const std::vector<TissueGraph>& graphs) {
  std::vector<std::size_t> counts(kNumPatterns, 0);
  for (const TissueGraph& g : graphs) {
    if (!g.image_label) throw DataError("training graph without image label");
    ++counts[static_cast<std::size_t>(index_of(g.image_label->primary))];
    ++counts[static_cast<std::size_t>(index_of(g.image_label->secondary))];
  }
  return class_weights(counts);
}

std::vector<double> node_label_weights(const std::vector<std::vector<int>>& labels) {
  std::vector<std::size_t> counts(kNumPatterns, 0);
  for (const auto& ls : labels) {
    for (int l : ls) {
      if (l >= 0) ++counts[static_cast<std::size_t>(l)];
    }
  }
  if (std::accumulate(counts.begin(), counts.end(), std::size_t{0}) == 0) {
    throw DataError("no labeled nodes to train on");
  }
  return class_weights(counts);
}

std::vector<std::vector<int>> pseudo_node_labels(const std::vector<TissueGraph>& train,
                                                 const std::vector<PseudoLabelSet>& pseudo) {
  if (pseudo.size() != train.size()) throw UsageError("one pseudo-label set per training graph required");
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (pseudo[i].labels.size() != train[i].num_nodes) {
      throw DataError("pseudo-label set " + std::to_string(i) + " does not match its graph");
    }
    out.push_back(pseudo[i].labels);
  }
  return out;
}

void set_trainable(GinModel& m, bool backbone, bool heads, bool node) {
  m.params().set_frozen(ParamGroup::Backbone, !backbone);
  m.params().set_frozen(ParamGroup::GraphHeads, !heads);
  m.params().set_frozen(ParamGroup::NodeHead, !node);
}

std::size_t feature_dim(const std::vector<TissueGraph>& graphs) {
  if (graphs.empty()) throw UsageError("empty training set");
  return graphs.front().features.cols();
}

}  // namespace

double graph_objective(const GinModel& model, const std::vector<TissueGraph>& graphs, const TrainConfig& cfg) {
  Objective obj;
  obj.graph = true;
  obj.lambda = cfg.lambda;
  obj.graph_weights = image_label_weights(graphs);
  return objective_value(model, graphs, obj);
}

double node_objective(const GinModel& model, const std::vector<TissueGraph>& graphs,
                      const std::vector<std::vector<int>>& node_labels) {
  Objective obj;
  obj.node_weight = 1.0;
  obj.node_weights = node_label_weights(node_labels);
  obj.node_labels = &node_labels;
  return objective_value(model, graphs, obj);
}

TrainResult train_graph_phase(const std::vector<TissueGraph>& train, const std::vector<TissueGraph>& val,
                              const TrainConfig& cfg) {
  GinModel model(cfg.model_config(feature_dim(train)), cfg.seed);
  set_trainable(model, true, true, false);
  Objective obj;
  obj.graph = true;
  obj.lambda = cfg.lambda;
  obj.graph_weights = image_label_weights(train);
  return run_loop(std::move(model), train, val, obj, cfg,
                  {Phase::Graph, cfg.epochs_graph, cfg.lr, Selection::BestValidation, 1});
}

TrainResult train_node_phase(const std::vector<TissueGraph>& train, const std::vector<PseudoLabelSet>& pseudo,
                             const TrainConfig& cfg, const Checkpoint& start,
                             const std::vector<TissueGraph>& val) {
  const auto labels = pseudo_node_labels(train, pseudo);
  GinModel model = start.model;
  set_trainable(model, false, false, true);
  Objective obj;
  obj.node_weight = 1.0;
  obj.node_weights = node_label_weights(labels);
  obj.node_labels = &labels;
  return run_loop(std::move(model), train, val, obj, cfg,
                  {Phase::Node, cfg.epochs_node, cfg.lr, Selection::Last, 2});
}

TrainResult finetune_joint(const std::vector<TissueGraph>& train, const std::vector<PseudoLabelSet>& pseudo,
                           const std::vector<TissueGraph>& val, const TrainConfig& cfg, const Checkpoint& start) {
  const auto labels = pseudo_node_labels(train, pseudo);
  GinModel model = start.model;
  set_trainable(model, true, true, true);
  Objective obj;
  obj.graph = true;
  obj.lambda = cfg.lambda;
  obj.graph_weights = image_label_weights(train);
  obj.node_weight = cfg.node_loss_weight;
  if (cfg.node_loss_weight > 0.0) obj.node_weights = node_label_weights(labels);
  obj.node_labels = &labels;
  return run_loop(std::move(model), train, val, obj, cfg,
                  {Phase::Finetune, cfg.epochs_finetune, cfg.effective_finetune_lr(),
                   Selection::BestValidation, 3});
}

TrainResult train_fully_supervised_nodes(const std::vector<TissueGraph>& train,
                                         const std::vector<TissueGraph>& val, const TrainConfig& cfg) {
  std::vector<std::vector<int>> labels;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& nl = train[i].node_labels;
    if (std::none_of(nl.begin(), nl.end(), [](int l) { return l >= 0; })) {
      throw DataError("training graph " + std::to_string(i) + " has no ground-truth node labels");
    }
    labels.push_back(nl);
  }
  GinModel model(cfg.model_config(feature_dim(train)), cfg.seed);
  set_trainable(model, true, true, true);
  Objective obj;
  obj.graph = true;
  obj.lambda = cfg.lambda;
  obj.graph_weights = image_label_weights(train);
  obj.node_weight = 1.0;
  obj.node_weights = node_label_weights(labels);
  obj.node_labels = &labels;
  return run_loop(std::move(model), train, val, obj, cfg,
                  {Phase::FullySupervised, cfg.epochs_graph, cfg.lr, Selection::BestValidation, 4});
}

}  // namespace tissueseg
