#include "tissueseg/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tissueseg/errors.hpp"

namespace tissueseg {

std::vector<double> graph_grad_cam(const Matrix& embeddings,
                                   const std::function<Var(Tape&, Var)>& logit) {
  Tape tape;
  const Var h = tape.leaf(embeddings, true);
  const Var y = logit(tape, h);
  tape.backward(y);
  const Matrix& g = tape.grad(h);
  const std::size_t n = embeddings.rows();
  const std::size_t c = embeddings.cols();
  std::vector<double> alpha(c, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t k = 0; k < c; ++k) alpha[k] += g(v, k);
  }
  for (double& a : alpha) a /= static_cast<double>(n);
  std::vector<double> scores(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += alpha[k] * embeddings(v, k);
    scores[v] = std::max(0.0, s);
  }
  return scores;
}

AttributionMap graph_grad_cam(const GinModel& model, const TissueGraph& g, GraphHead head, Pattern cls) {
  const Prediction pred = model.predict(g);
  AttributionMap map;
  map.cls = cls;
  map.scores = graph_grad_cam(pred.embeddings, [&](Tape& tape, Var h) {
    std::vector<Var> bound;
    for (const Parameter& p : model.params().all()) bound.push_back(tape.leaf(p.value, false));
    const Var hg = readout_mean(tape, h);
    const Var logits = head == GraphHead::Primary ? model.primary_head(tape, bound, hg, {})
                                                  : model.secondary_head(tape, bound, hg, {});
    return tape.select(logits, 0, static_cast<std::size_t>(index_of(cls)));
  });
  return map;
}

std::vector<double> minmax_normalize(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::clamp((scores[i] - *lo) / range, 0.0, 1.0);
  }
  return out;
}

std::size_t PseudoLabelSet::assigned() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }));
}

std::size_t PseudoLabelSet::assigned(Pattern p) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), index_of(p)));
}

std::size_t selection_budget(double select_percent, std::size_t num_nodes) {
  // The small slack keeps exact products (e.g. 20% of 10) from rounding up.
  return static_cast<std::size_t>(std::ceil(select_percent * static_cast<double>(num_nodes) / 100.0 - 1e-9));
}

namespace {

std::vector<std::size_t> select_candidates(std::span<const double> scores, double threshold,
                                           std::size_t budget) {
  std::vector<std::size_t> idx;
  for (std::size_t v = 0; v < scores.size(); ++v) {
    if (scores[v] >= threshold) idx.push_back(v);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (idx.size() > budget) idx.resize(budget);
  return idx;
}

}  // namespace

PseudoLabelSet synthesize_pseudo_labels(std::span<const double> primary_scores,
                                        std::span<const double> secondary_scores,
                                        const GleasonLabel& label, double select_percent,
                                        double threshold) {
  if (!(select_percent > 0.0 && select_percent <= 100.0)) {
    throw UsageError("selection percent must be in (0, 100]");
  }
  if (!(threshold >= 0.0 && threshold < 1.0)) throw UsageError("threshold must be in [0, 1)");
  if (primary_scores.size() != secondary_scores.size()) {
    throw UsageError("attribution maps cover different node sets");
  }
  const std::size_t n = primary_scores.size();
  PseudoLabelSet out;
  out.select_percent = select_percent;
  out.threshold = threshold;
  out.labels.assign(n, kUnlabeled);
  out.scores.assign(n, 0.0);

  if (label.benign()) {
    std::fill(out.labels.begin(), out.labels.end(), index_of(Pattern::B));
    std::copy(primary_scores.begin(), primary_scores.end(), out.scores.begin());
    return out;
  }

  const std::size_t budget = selection_budget(select_percent, n);
  for (std::size_t v : select_candidates(primary_scores, threshold, budget)) {
    out.labels[v] = index_of(label.primary);
    out.scores[v] = primary_scores[v];
  }
  if (label.secondary == label.primary) return out;

  for (std::size_t v : select_candidates(secondary_scores, threshold, budget)) {
    if (out.labels[v] >= 0 && primary_scores[v] >= secondary_scores[v]) continue;
    out.labels[v] = index_of(label.secondary);
    out.scores[v] = secondary_scores[v];
  }
  return out;
}

PseudoLabelSet pseudo_label_graph(const GinModel& model, const TissueGraph& g,
                                  double select_percent, double threshold) {
  if (!g.image_label) throw DataError("pseudo-labelling requires an image label");
  const GleasonLabel& label = *g.image_label;
  if (label.benign()) {
    const std::vector<double> none(g.num_nodes, 0.0);
    return synthesize_pseudo_labels(none, none, label, select_percent, threshold);
  }
  const auto ip = minmax_normalize(graph_grad_cam(model, g, GraphHead::Primary, label.primary).scores);
  const auto is = minmax_normalize(graph_grad_cam(model, g, GraphHead::Secondary, label.secondary).scores);
  return synthesize_pseudo_labels(ip, is, label, select_percent, threshold);
}

std::vector<int> attribution_argmax_labels(const GinModel& model, const TissueGraph& g) {
  std::vector<std::vector<double>> maps;
  for (Pattern p : kAllPatterns) {
    maps.push_back(minmax_normalize(graph_grad_cam(model, g, GraphHead::Primary, p).scores));
  }
  std::vector<int> labels(g.num_nodes, 0);
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    int best = 0;
    for (int k = 1; k < kNumPatterns; ++k) {
      if (maps[static_cast<std::size_t>(k)][v] > maps[static_cast<std::size_t>(best)][v]) best = k;
    }
    labels[v] = best;
  }
  return labels;
}

std::string pseudo_labels_to_csv(const std::vector<std::string>& graph_ids,
                                 const std::vector<PseudoLabelSet>& sets) {
  if (graph_ids.size() != sets.size()) throw UsageError("graph id count != pseudo-label set count");
  std::string out = "graph_id,node_id,class,score\n";
  char buf[64];
  for (std::size_t gi = 0; gi < sets.size(); ++gi) {
    const PseudoLabelSet& s = sets[gi];
    for (std::size_t v = 0; v < s.labels.size(); ++v) {
      if (s.labels[v] < 0) continue;
      std::snprintf(buf, sizeof(buf), "%.17g", s.scores[v]);
      out += graph_ids[gi] + "," + std::to_string(v) + "," +
             std::string(to_string(pattern_from_index(s.labels[v]))) + "," + buf + "\n";
    }
  }
  return out;
}

std::vector<PseudoLabelRow> parse_pseudo_label_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<PseudoLabelRow> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "graph_id,node_id,class,score") throw DataError("pseudo-label CSV: bad header");
      continue;
    }
    std::istringstream ls(line);
    std::string id, node, cls, score;
    if (!std::getline(ls, id, ',') || !std::getline(ls, node, ',') || !std::getline(ls, cls, ',') ||
        !std::getline(ls, score)) {
      throw DataError("pseudo-label CSV line " + std::to_string(line_no) + " malformed");
    }
    PseudoLabelRow row;
    row.graph_id = id;
    try {
      row.node_id = std::stoi(node);
      row.score = std::stod(score);
    } catch (const std::exception&) {
      throw DataError("pseudo-label CSV line " + std::to_string(line_no) + " malformed");
    }
    row.cls = parse_pattern(cls);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tissueseg
