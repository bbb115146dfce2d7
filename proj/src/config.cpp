#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tissueseg/errors.hpp"
#include "tissueseg/training.hpp"

namespace tissueseg {

ModelConfig TrainConfig::model_config(std::size_t feature_dim) const {
  ModelConfig m;
  m.input_dim = feature_dim + 2;
  m.hidden = static_cast<std::size_t>(hidden);
  m.layers = static_cast<std::size_t>(layers);
  m.head_hidden = static_cast<std::size_t>(head_hidden);
  m.num_classes = kNumPatterns;
  m.dropout_backbone = dropout_backbone;
  m.dropout_graph_head = dropout_graph_head;
  m.dropout_node_head = dropout_node_head;
  return m;
}

namespace {

bool on_grid(double v, std::initializer_list<double> grid) {
  return std::any_of(grid.begin(), grid.end(),
                     [&](double g) { return std::abs(v - g) <= 1e-12 * std::max(1.0, std::abs(g)); });
}

void out_of_range(const char* key) { throw UsageError(std::string(key) + " out of range"); }

}  // namespace

void validate_config(const TrainConfig& c) {
  if (c.batch_size < 1) out_of_range("batch_size");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) out_of_range("lr");
  if (c.layers < 1) out_of_range("T");
  if (c.hidden < 1) out_of_range("hidden");
  if (c.head_hidden < 1) out_of_range("head_hidden");
  for (auto [key, v] : {std::pair{"dropout_backbone", c.dropout_backbone},
                        std::pair{"dropout_graph_head", c.dropout_graph_head},
                        std::pair{"dropout_node_head", c.dropout_node_head}}) {
    if (!(v >= 0.0 && v < 1.0)) out_of_range(key);
  }
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) out_of_range("lambda");
  if (!(c.select_percent > 0.0 && c.select_percent <= 100.0)) out_of_range("n");
  if (!(c.threshold >= 0.0 && c.threshold < 1.0)) out_of_range("t");
  if (c.finetune_lr && (!(*c.finetune_lr >= 0.0) || !std::isfinite(*c.finetune_lr))) out_of_range("finetune_lr");
  if (c.epochs_graph < 0) out_of_range("epochs_graph");
  if (c.epochs_node < 0) out_of_range("epochs_node");
  if (c.epochs_finetune < 0) out_of_range("epochs_finetune");
  if (c.patience < 1) out_of_range("patience");
  if (!(c.node_loss_weight >= 0.0) || !std::isfinite(c.node_loss_weight)) out_of_range("node_loss_weight");
  if (c.allow_offgrid) return;
  auto off = [](const char* key) { throw UsageError(std::string(key) + " off-grid"); };
  if (!on_grid(c.batch_size, {4, 8, 16})) off("batch_size");
  if (!on_grid(c.lr, {1e-4, 5e-4, 1e-3})) off("lr");
  if (!on_grid(c.layers, {3, 4, 5})) off("T");
  if (c.hidden != 64) off("hidden");
  if (c.head_hidden != 128) off("head_hidden");
  if (!on_grid(c.select_percent, {5, 10, 15, 20})) off("n");
  if (!on_grid(c.threshold, {0.5, 0.6, 0.7})) off("t");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError(key + ": expected a number, got '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != std::floor(d) || std::abs(d) > 1e9) throw UsageError(key + ": expected an integer, got '" + v + "'");
  return static_cast<int>(d);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(key + ": expected true/false, got '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = {
      {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_int(k, v); }},
      {"lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"T", [](TrainConfig& c, const std::string& k, const std::string& v) { c.layers = parse_int(k, v); }},
      {"hidden", [](TrainConfig& c, const std::string& k, const std::string& v) { c.hidden = parse_int(k, v); }},
      {"head_hidden", [](TrainConfig& c, const std::string& k, const std::string& v) { c.head_hidden = parse_int(k, v); }},
      {"dropout_backbone", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropout_backbone = parse_double(k, v); }},
      {"dropout_graph_head", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropout_graph_head = parse_double(k, v); }},
      {"dropout_node_head", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dropout_node_head = parse_double(k, v); }},
      {"lambda", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lambda = parse_double(k, v); }},
      {"n", [](TrainConfig& c, const std::string& k, const std::string& v) { c.select_percent = parse_double(k, v); }},
      {"t", [](TrainConfig& c, const std::string& k, const std::string& v) { c.threshold = parse_double(k, v); }},
      {"finetune_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.finetune_lr = parse_double(k, v); }},
      {"epochs_graph", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs_graph = parse_int(k, v); }},
      {"epochs_node", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs_node = parse_int(k, v); }},
      {"epochs_finetune", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs_finetune = parse_int(k, v); }},
      {"patience", [](TrainConfig& c, const std::string& k, const std::string& v) { c.patience = parse_int(k, v); }},
      {"node_loss_weight", [](TrainConfig& c, const std::string& k, const std::string& v) { c.node_loss_weight = parse_double(k, v); }},
      {"optimizer",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "adam") {
           c.optimizer = OptimizerMode::Adam;
         } else if (v == "sgd") {
           c.optimizer = OptimizerMode::GradientDescent;
         } else {
           throw UsageError(k + ": expected adam or sgd, got '" + v + "'");
         }
       }},
      {"seed",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         std::size_t used = 0;
         try {
           c.seed = std::stoull(v, &used);
         } catch (const std::exception&) {
           used = 0;
         }
         if (used == 0 || used != v.size()) throw UsageError(k + ": expected an unsigned integer");
       }},
      {"allow_offgrid", [](TrainConfig& c, const std::string& k, const std::string& v) { c.allow_offgrid = parse_bool(k, v); }},
  };
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError("unknown config key '" + key + "'");
    it->second(c, key, value);
  }
  validate_config(c);
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "batch_size=" << c.batch_size << "\n"
     << "lr=" << fmt(c.lr) << "\n"
     << "T=" << c.layers << "\n"
     << "hidden=" << c.hidden << "\n"
     << "head_hidden=" << c.head_hidden << "\n"
     << "dropout_backbone=" << fmt(c.dropout_backbone) << "\n"
     << "dropout_graph_head=" << fmt(c.dropout_graph_head) << "\n"
     << "dropout_node_head=" << fmt(c.dropout_node_head) << "\n"
     << "lambda=" << fmt(c.lambda) << "\n"
     << "n=" << fmt(c.select_percent) << "\n"
     << "t=" << fmt(c.threshold) << "\n";
  if (c.finetune_lr) os << "finetune_lr=" << fmt(*c.finetune_lr) << "\n";
  os << "epochs_graph=" << c.epochs_graph << "\n"
     << "epochs_node=" << c.epochs_node << "\n"
     << "epochs_finetune=" << c.epochs_finetune << "\n"
     << "patience=" << c.patience << "\n"
     << "node_loss_weight=" << fmt(c.node_loss_weight) << "\n"
     << "optimizer=" << (c.optimizer == OptimizerMode::Adam ? "adam" : "sgd") << "\n"
     << "seed=" << c.seed << "\n"
     << "allow_offgrid=" << (c.allow_offgrid ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace tissueseg
