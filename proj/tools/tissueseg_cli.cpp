#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tissueseg/dataset.hpp"
#include "tissueseg/errors.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/loss.hpp"
#include "tissueseg/pipeline.hpp"
#include "tissueseg/training.hpp"

namespace fs = std::filesystem;
using namespace tissueseg;

namespace {

// Output directory built under a temporary name and renamed into place on
// commit; removed on destruction otherwise.
class StagedDir {
 public:
  explicit StagedDir(fs::path target) : target_(std::move(target)) {
    staging_ = target_;
    staging_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  const fs::path& path() const { return staging_; }
  void commit() {
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
    fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

struct TrainFlags {
  std::string config;
  std::vector<std::string> overrides;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "key=value training config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.overrides, "config override key=value (repeatable)");
}

TrainConfig resolve_config(const TrainFlags& f) {
  std::string text = f.config.empty() ? std::string() : read_file(f.config);
  for (const std::string& o : f.overrides) text += "\n" + o;
  return parse_config(text);
}

std::vector<PseudoLabelSet> pseudo_sets_for(const GraphDataset& data, const std::vector<std::size_t>& items,
                                            const std::vector<PseudoLabelRow>& rows) {
  std::map<std::string, std::size_t> pos;
  std::vector<PseudoLabelSet> sets(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    pos[data.ids[items[k]]] = k;
    sets[k].labels.assign(data.items[items[k]].graph.num_nodes, kUnlabeled);
    sets[k].scores.assign(data.items[items[k]].graph.num_nodes, 0.0);
  }
  for (const PseudoLabelRow& r : rows) {
    const auto it = pos.find(r.graph_id);
    if (it == pos.end()) throw DataError("pseudo label for unknown training graph '" + r.graph_id + "'");
    PseudoLabelSet& s = sets[it->second];
    if (r.node_id < 0 || static_cast<std::size_t>(r.node_id) >= s.labels.size()) {
      throw DataError("pseudo label node " + std::to_string(r.node_id) + " outside graph " + r.graph_id);
    }
    s.labels[static_cast<std::size_t>(r.node_id)] = index_of(r.cls);
    s.scores[static_cast<std::size_t>(r.node_id)] = r.score;
  }
  return sets;
}

void write_phase(const fs::path& out, const std::string& name, const TrainResult& r) {
  StagedDir dir(out / name);
  save_checkpoint(dir.path() / "best.ckpt", r.best);
  write_file_atomic(dir.path() / "metrics.json", history_to_json(r));
  dir.commit();
}

std::vector<std::uint8_t> overlay_rgba(const ClassMask& mask) {
  static constexpr std::uint8_t palette[kNumPatterns][4] = {
      {0, 0, 0, 0}, {0, 255, 0, 128}, {0, 0, 255, 128}, {255, 0, 0, 128}};
  std::vector<std::uint8_t> out;
  out.reserve(mask.classes.size() * 4);
  for (std::uint8_t c : mask.classes) out.insert(out.end(), palette[c], palette[c] + 4);
  return out;
}

void write_report(const fs::path& out, const MetricReport& r) {
  write_file_atomic(out, report_to_json(r));
  fs::path csv = out;
  csv.replace_extension(".reliability.csv");
  write_file_atomic(csv, reliability_to_csv(r.reliability));
}

int run(int argc, char** argv) {
  CLI::App app{"Weakly supervised tissue segmentation from slide-level Gleason labels"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic image/mask dataset");
  std::string synth_out;
  SplitCounts counts;
  std::uint64_t synth_seed = 7;
  int synth_size = 128;
  bool overlap = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--train", counts.train, "training images");
  synth->add_option("--val", counts.val, "validation images");
  synth->add_option("--test", counts.test, "test images");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "image width and height");
  synth->add_flag("--overlap", overlap, "classes share nearly identical colours");

  // build-graph
  auto* build = app.add_subcommand("build-graph", "superpixels, features and tissue graphs for a manifest");
  std::string manifest, graphs_out, stain_ref;
  BuildOptions bopt;
  std::uint64_t augment_seed = 0;
  build->add_option("--manifest", manifest, "dataset manifest CSV")->required()->check(CLI::ExistingFile);
  build->add_option("--out", graphs_out, "graph directory")->required();
  build->add_option("--n-segments", bopt.slic.n_segments, "SLIC segment count");
  build->add_option("--compactness", bopt.slic.compactness, "SLIC compactness");
  build->add_option("--slic-iters", bopt.slic.iters, "SLIC iterations");
  build->add_option("--merge-threshold", bopt.merge.sim_threshold, "merge colour-distance threshold");
  build->add_option("--max-nodes", bopt.merge.target_max_nodes, "stop merging at this node count");
  build->add_option("--patch-size", bopt.patch.patch_size, "node patch size in pixels");
  build->add_option("--patch-stride", bopt.patch.patch_stride, "node patch stride in pixels");
  auto* aug = build->add_option("--augment-seed", augment_seed, "random patch rotations/flips with this seed");
  build->add_option("--stain-ref", stain_ref, "reference image for stain normalisation")->check(CLI::ExistingFile);

  // train
  auto* train = app.add_subcommand("train", "graph phase (or fully supervised node training)");
  std::string graphs_dir, ckpt_out;
  TrainFlags train_flags;
  bool fully_supervised = false;
  train->add_option("--graphs", graphs_dir, "graph directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ckpt_out, "checkpoint directory")->required();
  train->add_flag("--fully-supervised", fully_supervised, "train all heads on ground-truth node labels");
  add_train_flags(train, train_flags);

  // pseudo-label
  auto* pseudo = app.add_subcommand("pseudo-label", "pseudo node labels from graph-head attributions");
  std::string checkpoint, pseudo_out;
  TrainFlags pseudo_flags;
  pseudo->add_option("--graphs", graphs_dir, "graph directory")->required()->check(CLI::ExistingDirectory);
  pseudo->add_option("--checkpoint", checkpoint, "graph-phase checkpoint")->required()->check(CLI::ExistingFile);
  pseudo->add_option("--out", pseudo_out, "pseudo-label CSV")->required();
  add_train_flags(pseudo, pseudo_flags);

  // train-nodes
  auto* nodes = app.add_subcommand("train-nodes", "node head on pseudo labels, backbone frozen");
  std::string pseudo_in;
  TrainFlags node_flags;
  nodes->add_option("--graphs", graphs_dir, "graph directory")->required()->check(CLI::ExistingDirectory);
  nodes->add_option("--checkpoint", checkpoint, "graph-phase checkpoint")->required()->check(CLI::ExistingFile);
  nodes->add_option("--pseudo", pseudo_in, "pseudo-label CSV")->required()->check(CLI::ExistingFile);
  nodes->add_option("--out", ckpt_out, "checkpoint directory")->required();
  add_train_flags(nodes, node_flags);

  // finetune
  auto* fine = app.add_subcommand("finetune", "joint fine-tuning of all parameters");
  TrainFlags fine_flags;
  fine->add_option("--graphs", graphs_dir, "graph directory")->required()->check(CLI::ExistingDirectory);
  fine->add_option("--checkpoint", checkpoint, "node-phase checkpoint")->required()->check(CLI::ExistingFile);
  fine->add_option("--pseudo", pseudo_in, "pseudo-label CSV")->required()->check(CLI::ExistingFile);
  fine->add_option("--out", ckpt_out, "checkpoint directory")->required();
  add_train_flags(fine, fine_flags);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "metric report for a checkpoint or for prediction files");
  std::string report_out, split_name = "test", pred_manifest, gt_manifest;
  std::size_t bins = 10;
  bool per_image = false;
  eval->add_option("--graphs", graphs_dir, "graph directory")->check(CLI::ExistingDirectory);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--split", split_name, "train, val or test");
  eval->add_option("--pred", pred_manifest, "manifest of predicted masks/labels")->check(CLI::ExistingFile);
  eval->add_option("--gt", gt_manifest, "manifest of ground-truth masks/labels")->check(CLI::ExistingFile);
  eval->add_option("--bins", bins, "ECE bins")->check(CLI::PositiveNumber);
  eval->add_flag("--per-image-dice", per_image, "average Dice per image instead of pooling pixels");
  eval->add_option("--out", report_out, "report JSON")->required();

  // segment
  auto* seg = app.add_subcommand("segment", "class mask and overlay for one image");
  std::string image_in, mask_out, overlay_out, build_from;
  seg->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  seg->add_option("--image", image_in, "input image (PNG or PPM)")->required()->check(CLI::ExistingFile);
  seg->add_option("--graphs", build_from, "graph directory whose build.json to reuse")->check(CLI::ExistingDirectory);
  seg->add_option("--out-mask", mask_out, "class-index mask PNG")->required();
  seg->add_option("--out-overlay", overlay_out, "RGBA overlay PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const DefaultEncoder encoder;

  if (*synth) {
    SyntheticSpec spec = overlap ? SyntheticSpec::overlapping() : SyntheticSpec::separable();
    spec.seed = synth_seed;
    spec.width = spec.height = synth_size;
    for (const std::string& w : validate_synthetic_spec(spec)) std::cerr << "warning: " << w << "\n";
    StagedDir dir(synth_out);
    const auto rows = generate_synthetic_dataset(spec, counts, dir.path());
    dir.commit();
    std::cout << "wrote " << rows.size() << " images to " << synth_out << "\n";
    return 0;
  }

  if (*build) {
    if (aug->count() > 0) bopt.augment_seed = augment_seed;
    if (!stain_ref.empty()) bopt.stain_reference = channel_stats(read_image(stain_ref));
    const auto rows = load_manifest(manifest);
    if (rows.empty()) throw DataError("manifest has no rows");
    const GraphDataset data = build_dataset(rows, bopt, encoder);
    StagedDir dir(graphs_out);
    save_graph_dataset(dir.path(), data, rows, bopt);
    dir.commit();
    std::size_t nodes_total = 0;
    for (const auto& b : data.items) nodes_total += b.graph.num_nodes;
    std::cout << "built " << data.items.size() << " graphs, " << nodes_total << " nodes\n";
    return 0;
  }

  if (*train) {
    const TrainConfig cfg = resolve_config(train_flags);
    const GraphDataset data = load_graph_dataset(graphs_dir);
    const auto tr = data.graphs(Split::Train);
    const auto va = data.graphs(Split::Val);
    if (tr.empty() || va.empty()) throw DataError("training needs non-empty train and val splits");
    const TrainResult r =
        fully_supervised ? train_fully_supervised_nodes(tr, va, cfg) : train_graph_phase(tr, va, cfg);
    write_phase(ckpt_out, fully_supervised ? "supervised" : "phase1", r);
    std::cout << "best epoch " << r.best.epoch << ", val wF1 " << r.best.val_wf1 << "\n";
    return 0;
  }

  if (*pseudo) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    TrainConfig cfg = ck.config;
    if (!pseudo_flags.config.empty() || !pseudo_flags.overrides.empty()) cfg = resolve_config(pseudo_flags);
    const GraphDataset data = load_graph_dataset(graphs_dir);
    std::vector<std::string> ids;
    std::vector<PseudoLabelSet> sets;
    for (std::size_t i : data.indices(Split::Train)) {
      ids.push_back(data.ids[i]);
      sets.push_back(pseudo_label_graph(ck.model, data.items[i].graph, cfg.select_percent, cfg.threshold));
    }
    write_file_atomic(pseudo_out, pseudo_labels_to_csv(ids, sets));
    std::size_t assigned = 0;
    for (const auto& s : sets) assigned += s.assigned();
    std::cout << "pseudo-labelled " << assigned << " nodes in " << sets.size() << " graphs\n";
    return 0;
  }

  if (*nodes || *fine) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const TrainFlags& flags = *nodes ? node_flags : fine_flags;
    TrainConfig cfg = ck.config;
    if (!flags.config.empty() || !flags.overrides.empty()) cfg = resolve_config(flags);
    const GraphDataset data = load_graph_dataset(graphs_dir);
    const auto items = data.indices(Split::Train);
    const auto sets = pseudo_sets_for(data, items, parse_pseudo_label_csv(read_file(pseudo_in)));
    const auto tr = data.graphs(Split::Train);
    const auto va = data.graphs(Split::Val);
    TrainResult r;
    if (*nodes) {
      r = train_node_phase(tr, sets, cfg, ck, va);
    } else {
      if (va.empty()) throw DataError("fine-tuning needs a non-empty val split");
      r = finetune_joint(tr, sets, va, cfg, ck);
    }
    write_phase(ckpt_out, *nodes ? "phase2" : "phase3", r);
    std::cout << "best epoch " << r.best.epoch << ", val wF1 " << r.best.val_wf1 << "\n";
    return 0;
  }

  if (*eval) {
    MetricReport report;
    if (!pred_manifest.empty() || !gt_manifest.empty()) {
      if (pred_manifest.empty() || gt_manifest.empty()) throw UsageError("--pred and --gt go together");
      const auto pred = load_manifest(pred_manifest);
      const auto gt = load_manifest(gt_manifest);
      if (pred.size() != gt.size()) throw DataError("prediction and ground-truth manifests differ in length");
      std::vector<SlidePrediction> slides;
      std::vector<ClassMask> pm, gm;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        SlidePrediction s;
        s.predicted = pred[i].label;
        s.truth = gt[i].label;
        slides.push_back(s);
        if (gt[i].mask_path) {
          if (!pred[i].mask_path) throw DataError("prediction row " + std::to_string(i) + " lacks a mask");
          pm.push_back(read_mask_png(*pred[i].mask_path));
          gm.push_back(read_mask_png(*gt[i].mask_path));
        }
      }
      report = evaluate(slides, pm, gm, bins, per_image);
    } else {
      if (graphs_dir.empty() || checkpoint.empty()) throw UsageError("evaluate needs --graphs and --checkpoint");
      const Checkpoint ck = load_checkpoint(checkpoint);
      const GraphDataset data = load_graph_dataset(graphs_dir);
      const auto items = data.indices(parse_split(split_name));
      if (items.empty()) throw DataError("split '" + split_name + "' is empty");
      std::vector<SlidePrediction> slides;
      std::vector<ClassMask> pm, gm;
      for (std::size_t i : items) {
        if (data.items[i].graph.image_label) slides.push_back(predict_slide(ck.model, data.items[i].graph));
        if (data.masks[i]) {
          pm.push_back(segment_image(ck.model, data.items[i]));
          gm.push_back(*data.masks[i]);
        }
      }
      report = evaluate(slides, pm, gm, bins, per_image);
    }
    write_report(report_out, report);
    std::cout << "wF1 " << report.weighted_f1 << ", avg Dice " << report.dice_average << ", kappa "
              << report.kappa << "\n";
    return 0;
  }

  if (*seg) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    BuildOptions opt = build_from.empty() ? BuildOptions{} : load_build_options(build_from);
    opt.augment_seed.reset();
    const RasterImage img = read_image(image_in);
    const BuiltGraph built = build_graph(img, std::nullopt, nullptr, opt, encoder);
    const ClassMask mask = segment_image(ck.model, built);
    const SlidePrediction slide = predict_slide(ck.model, built.graph);
    write_mask_png(mask_out, mask);
    write_png_rgba(overlay_out, mask.width, mask.height, overlay_rgba(mask));
    std::cout << "grade " << slide.predicted.grade() << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
