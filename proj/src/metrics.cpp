#include "tissueseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "tissueseg/errors.hpp"

namespace tissueseg {

namespace {

struct DiceCounts {
  std::vector<double> tp, fp, fn;
  explicit DiceCounts(int k) : tp(k, 0.0), fp(k, 0.0), fn(k, 0.0) {}
};

void accumulate(DiceCounts& c, const ClassMask& pred, const ClassMask& gt, int num_classes) {
  if (pred.width != gt.width || pred.height != gt.height || pred.classes.size() != gt.classes.size()) {
    throw UsageError("dice: mask dimensions differ");
  }
  for (std::size_t i = 0; i < gt.classes.size(); ++i) {
    const int p = pred.classes[i];
    const int g = gt.classes[i];
    if (p >= num_classes || g >= num_classes) throw DataError("dice: class index out of range");
    if (p == g) {
      c.tp[static_cast<std::size_t>(p)] += 1.0;
    } else {
      c.fp[static_cast<std::size_t>(p)] += 1.0;
      c.fn[static_cast<std::size_t>(g)] += 1.0;
    }
  }
}

std::vector<std::optional<double>> dice_from_counts(const DiceCounts& c) {
  std::vector<std::optional<double>> out(c.tp.size());
  for (std::size_t k = 0; k < c.tp.size(); ++k) {
    const double denom = 2.0 * c.tp[k] + c.fp[k] + c.fn[k];
    if (denom > 0.0) out[k] = 2.0 * c.tp[k] / denom;
  }
  return out;
}

double mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& d : v) {
    if (d) {
      s += *d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : s / n;
}

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw UsageError(std::string(what) + ": empty input");
}

}  // namespace

DiceResult dice_scores(std::span<const ClassMask> pred, std::span<const ClassMask> gt, int num_classes,
                       bool per_image) {
  if (pred.size() != gt.size()) throw UsageError("dice: prediction and ground-truth counts differ");
  DiceResult r;
  if (!per_image) {
    DiceCounts c(num_classes);
    for (std::size_t i = 0; i < gt.size(); ++i) accumulate(c, pred[i], gt[i], num_classes);
    r.per_class = dice_from_counts(c);
    r.average = mean_present(r.per_class);
    return r;
  }
  std::vector<double> sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<int> n(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    DiceCounts c(num_classes);
    accumulate(c, pred[i], gt[i], num_classes);
    const auto d = dice_from_counts(c);
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d[k]) {
        sum[k] += *d[k];
        ++n[k];
      }
    }
  }
  r.per_class.resize(static_cast<std::size_t>(num_classes));
  for (std::size_t k = 0; k < sum.size(); ++k) {
    if (n[k] > 0) r.per_class[k] = sum[k] / n[k];
  }
  r.average = mean_present(r.per_class);
  return r;
}

double weighted_f1(std::span<const std::string> pred, std::span<const std::string> gt) {
  require_nonempty(gt.size(), "weighted_f1");
  if (pred.size() != gt.size()) throw UsageError("weighted_f1: length mismatch");
  std::map<std::string, double> tp, fp, fn, support;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    support[gt[i]] += 1.0;
    if (pred[i] == gt[i]) {
      tp[gt[i]] += 1.0;
    } else {
      fp[pred[i]] += 1.0;
      fn[gt[i]] += 1.0;
    }
  }
  double total = 0.0;
  for (const auto& [label, s] : support) {
    const double denom = 2.0 * tp[label] + fp[label] + fn[label];
    const double f1 = denom > 0.0 ? 2.0 * tp[label] / denom : 0.0;
    total += s * f1;
  }
  return total / static_cast<double>(gt.size());
}

double quadratic_kappa(std::span<const int> pred, std::span<const int> gt, int num_grades) {
  require_nonempty(gt.size(), "quadratic_kappa");
  if (pred.size() != gt.size()) throw UsageError("quadratic_kappa: length mismatch");
  if (num_grades < 2) throw UsageError("quadratic_kappa: need at least two grades");
  const auto k = static_cast<std::size_t>(num_grades);
  std::vector<double> observed(k * k, 0.0), row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= num_grades || pred[i] < 0 || pred[i] >= num_grades) {
      throw DataError("quadratic_kappa: grade out of range");
    }
    const auto g = static_cast<std::size_t>(gt[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    observed[g * k + p] += 1.0;
    row[g] += 1.0;
    col[p] += 1.0;
  }
  const double n = static_cast<double>(gt.size());
  const double scale = static_cast<double>((num_grades - 1) * (num_grades - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double w = d * d / scale;
      num += w * observed[i * k + j];
      den += w * row[i] * col[j] / n;
    }
  }
  if (den == 0.0) return 1.0;
  return 1.0 - num / den;
}

BrierNll brier_nll(std::span<const std::vector<double>> probs, std::span<const int> targets) {
  require_nonempty(targets.size(), "brier_nll");
  if (probs.size() != targets.size()) throw UsageError("brier_nll: length mismatch");
  BrierNll r;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= p.size()) throw DataError("brier_nll: target out of range");
    double total = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] < 0.0) throw DataError("brier_nll: negative probability");
      total += p[k];
      const double y = static_cast<int>(k) == t ? 1.0 : 0.0;
      r.brier += (y - p[k]) * (y - p[k]);
    }
    if (std::abs(total - 1.0) > 1e-9) throw DataError("brier_nll: probabilities do not sum to 1");
    r.nll -= std::log(std::max(p[static_cast<std::size_t>(t)], 1e-15));
  }
  const double n = static_cast<double>(probs.size());
  r.brier /= n;
  r.nll /= n;
  return r;
}

std::size_t confidence_bin(double confidence, std::size_t num_bins) {
  if (num_bins == 0) throw UsageError("ece: need at least one bin");
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw DataError("ece: confidence outside [0,1]");
  for (std::size_t b = 0; b + 1 < num_bins; ++b) {
    if (confidence <= static_cast<double>(b + 1) / static_cast<double>(num_bins)) return b;
  }
  return num_bins - 1;
}

std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidence,
                                             std::span<const int> correct, std::size_t num_bins) {
  require_nonempty(confidence.size(), "reliability_bins");
  if (confidence.size() != correct.size()) throw UsageError("reliability_bins: length mismatch");
  std::vector<ReliabilityBin> bins(num_bins);
  std::vector<double> conf_sum(num_bins, 0.0), hit_sum(num_bins, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const std::size_t b = confidence_bin(confidence[i], num_bins);
    ++bins[b].count;
    conf_sum[b] += confidence[i];
    hit_sum[b] += correct[i] != 0 ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (bins[b].count == 0) continue;
    const double n = static_cast<double>(bins[b].count);
    bins[b].mean_confidence = conf_sum[b] / n;
    bins[b].accuracy = hit_sum[b] / n;
  }
  return bins;
}

double ece_from_bins(std::span<const ReliabilityBin> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) throw UsageError("ece: empty input");
  double e = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(total) * std::abs(b.accuracy - b.mean_confidence);
  }
  return e;
}

double ece(std::span<const double> confidence, std::span<const int> correct, std::size_t num_bins) {
  return ece_from_bins(reliability_bins(confidence, correct, num_bins));
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::string> pred,
                                                       std::span<const std::string> gt,
                                                       std::span<const std::string> labels) {
  if (pred.size() != gt.size()) throw UsageError("confusion_matrix: length mismatch");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]] = i;
  std::vector<std::vector<std::size_t>> m(labels.size(), std::vector<std::size_t>(labels.size(), 0));
  auto at = [&](const std::string& s) {
    const auto it = index.find(s);
    if (it == index.end()) throw DataError("confusion_matrix: label '" + s + "' outside label set");
    return it->second;
  };
  for (std::size_t i = 0; i < gt.size(); ++i) ++m[at(gt[i])][at(pred[i])];
  return m;
}

std::vector<std::string> grade_label_space(std::span<const std::string> pred,
                                           std::span<const std::string> gt) {
  std::set<std::string> s(pred.begin(), pred.end());
  s.insert(gt.begin(), gt.end());
  s.insert("B");
  return {s.begin(), s.end()};
}

namespace {

std::vector<double> one_hot(Pattern p) {
  std::vector<double> v(kNumPatterns, 0.0);
  v[static_cast<std::size_t>(index_of(p))] = 1.0;
  return v;
}

std::vector<std::string> index_labels(int n, bool patterns) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(patterns ? std::string(to_string(pattern_from_index(i))) : std::to_string(i));
  }
  return out;
}

}  // namespace

MetricReport evaluate(std::span<const SlidePrediction> slides, std::span<const ClassMask> pred_masks,
                      std::span<const ClassMask> gt_masks, std::size_t ece_bins, bool per_image_dice) {
  MetricReport r;
  r.num_slides = slides.size();
  r.num_masks = gt_masks.size();
  if (!gt_masks.empty()) {
    const DiceResult d = dice_scores(pred_masks, gt_masks, kNumPatterns, per_image_dice);
    r.dice_per_class = d.per_class;
    r.dice_average = d.average;
    double hit = 0.0, total = 0.0;
    for (std::size_t i = 0; i < gt_masks.size(); ++i) {
      for (std::size_t p = 0; p < gt_masks[i].classes.size(); ++p) {
        hit += pred_masks[i].classes[p] == gt_masks[i].classes[p] ? 1.0 : 0.0;
        total += 1.0;
      }
    }
    r.pixel_accuracy = total > 0.0 ? hit / total : 0.0;
  }
  if (slides.empty()) return r;

  std::vector<std::string> pg, gg, pp, gp, ps, gs, pi, gi;
  std::vector<int> isup_p, isup_g, tp, ts, hit_p, hit_s;
  std::vector<std::vector<double>> prob_p, prob_s;
  std::vector<double> conf_p, conf_s;
  for (const SlidePrediction& s : slides) {
    if (s.coerced) ++r.num_coerced;
    pg.push_back(s.predicted.grade());
    gg.push_back(s.truth.grade());
    pp.emplace_back(to_string(s.predicted.primary));
    gp.emplace_back(to_string(s.truth.primary));
    ps.emplace_back(to_string(s.predicted.secondary));
    gs.emplace_back(to_string(s.truth.secondary));
    isup_p.push_back(gleason_to_isup(s.predicted));
    isup_g.push_back(gleason_to_isup(s.truth));
    pi.push_back(std::to_string(isup_p.back()));
    gi.push_back(std::to_string(isup_g.back()));
    tp.push_back(index_of(s.truth.primary));
    ts.push_back(index_of(s.truth.secondary));
    prob_p.push_back(s.prob_primary.empty() ? one_hot(s.predicted.primary) : s.prob_primary);
    prob_s.push_back(s.prob_secondary.empty() ? one_hot(s.predicted.secondary) : s.prob_secondary);
    const auto argmax = [](const std::vector<double>& v) {
      return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    conf_p.push_back(*std::max_element(prob_p.back().begin(), prob_p.back().end()));
    conf_s.push_back(*std::max_element(prob_s.back().begin(), prob_s.back().end()));
    hit_p.push_back(argmax(prob_p.back()) == tp.back() ? 1 : 0);
    hit_s.push_back(argmax(prob_s.back()) == ts.back() ? 1 : 0);
  }
  r.weighted_f1 = weighted_f1(pg, gg);
  r.kappa = quadratic_kappa(isup_p, isup_g, 6);
  r.primary = brier_nll(prob_p, tp);
  r.secondary = brier_nll(prob_s, ts);
  r.combined = {(r.primary.brier + r.secondary.brier) / 2.0, (r.primary.nll + r.secondary.nll) / 2.0};
  r.reliability = reliability_bins(conf_p, hit_p, ece_bins);
  r.ece = ece_from_bins(r.reliability);
  r.ece_secondary = ece(conf_s, hit_s, ece_bins);
  r.grade_labels = grade_label_space(pg, gg);
  r.confusion_grade = confusion_matrix(pg, gg, r.grade_labels);
  const auto isup_labels = index_labels(6, false);
  const auto pattern_labels = index_labels(kNumPatterns, true);
  r.confusion_isup = confusion_matrix(pi, gi, isup_labels);
  r.confusion_primary = confusion_matrix(pp, gp, pattern_labels);
  r.confusion_secondary = confusion_matrix(ps, gs, pattern_labels);
  return r;
}

std::string report_to_json(const MetricReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  ordered_json dice = ordered_json::object();
  for (std::size_t k = 0; k < r.dice_per_class.size(); ++k) {
    const std::string name(to_string(pattern_from_index(static_cast<int>(k))));
    dice[name] = r.dice_per_class[k] ? ordered_json(*r.dice_per_class[k]) : ordered_json(nullptr);
  }
  j["num_slides"] = r.num_slides;
  j["num_masks"] = r.num_masks;
  j["num_coerced_labels"] = r.num_coerced;
  j["dice_per_class"] = dice;
  j["dice_average"] = r.dice_average;
  j["pixel_accuracy"] = r.pixel_accuracy;
  j["weighted_f1"] = r.weighted_f1;
  j["kappa_quadratic"] = r.kappa;
  j["brier"] = {{"primary", r.primary.brier}, {"secondary", r.secondary.brier}, {"combined", r.combined.brier}};
  j["nll"] = {{"primary", r.primary.nll}, {"secondary", r.secondary.nll}, {"combined", r.combined.nll}};
  j["ece"] = r.ece;
  j["ece_secondary"] = r.ece_secondary;
  j["confusion"] = {{"grade", {{"labels", r.grade_labels}, {"counts", r.confusion_grade}}},
                    {"isup", r.confusion_isup},
                    {"primary", r.confusion_primary},
                    {"secondary", r.confusion_secondary}};
  ordered_json bins = ordered_json::array();
  for (const auto& b : r.reliability) {
    bins.push_back({{"count", b.count}, {"mean_confidence", b.mean_confidence}, {"accuracy", b.accuracy}});
  }
  j["reliability"] = bins;
  return j.dump(2) + "\n";
}

std::string reliability_to_csv(std::span<const ReliabilityBin> bins) {
  std::string out = "bin,lower,upper,count,mean_confidence,accuracy\n";
  char buf[160];
  const double nb = static_cast<double>(bins.size());
  for (std::size_t b = 0; b < bins.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g,%zu,%.17g,%.17g\n", b, static_cast<double>(b) / nb,
                  static_cast<double>(b + 1) / nb, bins[b].count, bins[b].mean_confidence, bins[b].accuracy);
    out += buf;
  }
  return out;
}

}  // namespace tissueseg
