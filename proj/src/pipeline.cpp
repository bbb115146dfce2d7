#include "tissueseg/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tissueseg/errors.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/loss.hpp"

namespace tissueseg {

BuiltGraph build_graph(const RasterImage& image, std::optional<GleasonLabel> label, const ClassMask* mask,
                       const BuildOptions& options, const PatchEncoder& encoder) {
  const RasterImage img = options.stain_reference ? normalize_stain(image, *options.stain_reference) : image;
  BuiltGraph out;
  out.superpixels = hierarchical_merge(img, slic(img, options.slic), options.merge);
  out.graph = build_tissue_graph(img, out.superpixels, encoder, label, options.patch, options.augment_seed);
  if (mask != nullptr) {
    if (mask->width != image.width() || mask->height != image.height()) {
      throw DataError("mask size does not match image size");
    }
    out.graph.node_labels = node_labels_from_mask(out.superpixels, *mask);
  }
  return out;
}

std::vector<TissueGraph> GraphDataset::graphs(Split s) const {
  std::vector<TissueGraph> out;
  for (std::size_t i : indices(s)) out.push_back(items[i].graph);
  return out;
}

std::vector<std::size_t> GraphDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

GraphDataset build_dataset(const std::vector<ManifestRow>& rows, const BuildOptions& options,
                           const PatchEncoder& encoder) {
  GraphDataset d;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ManifestRow& r = rows[i];
    const RasterImage img = read_image(r.image_path);
    std::optional<ClassMask> mask;
    if (r.mask_path) mask = read_mask_png(*r.mask_path);
    BuildOptions opt = options;
    if (opt.augment_seed) opt.augment_seed = *opt.augment_seed + i;
    char id[32];
    std::snprintf(id, sizeof(id), "%04zu", i);
    d.ids.emplace_back(id);
    d.splits.push_back(r.split);
    d.items.push_back(build_graph(img, r.label, mask ? &*mask : nullptr, opt, encoder));
    d.masks.push_back(std::move(mask));
    d.image_paths.push_back(r.image_path);
  }
  return d;
}

namespace fs = std::filesystem;

std::string build_options_to_json(const BuildOptions& o) {
  nlohmann::ordered_json j;
  if (o.stain_reference) {
    j["stain_reference"] = {{"mean", o.stain_reference->mean}, {"std", o.stain_reference->std}};
  } else {
    j["stain_reference"] = nullptr;
  }
  j["slic"] = {{"n_segments", o.slic.n_segments},
               {"compactness", o.slic.compactness},
               {"iters", o.slic.iters},
               {"min_fragment_fraction", o.slic.min_fragment_fraction}};
  j["merge"] = {{"sim_threshold", o.merge.sim_threshold}, {"target_max_nodes", o.merge.target_max_nodes}};
  j["patch"] = {{"size", o.patch.patch_size}, {"stride", o.patch.patch_stride}};
  j["augment_seed"] = o.augment_seed ? nlohmann::ordered_json(*o.augment_seed) : nlohmann::ordered_json(nullptr);
  return j.dump(2) + "\n";
}

BuildOptions build_options_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    BuildOptions o;
    if (!j.at("stain_reference").is_null()) {
      ChannelStats ref;
      ref.mean = j.at("stain_reference").at("mean").get<std::array<double, 3>>();
      ref.std = j.at("stain_reference").at("std").get<std::array<double, 3>>();
      o.stain_reference = ref;
    }
    o.slic.n_segments = j.at("slic").at("n_segments").get<int>();
    o.slic.compactness = j.at("slic").at("compactness").get<double>();
    o.slic.iters = j.at("slic").at("iters").get<int>();
    o.slic.min_fragment_fraction = j.at("slic").at("min_fragment_fraction").get<double>();
    o.merge.sim_threshold = j.at("merge").at("sim_threshold").get<double>();
    o.merge.target_max_nodes = j.at("merge").at("target_max_nodes").get<int>();
    o.patch.patch_size = j.at("patch").at("size").get<int>();
    o.patch.patch_stride = j.at("patch").at("stride").get<int>();
    if (!j.at("augment_seed").is_null()) o.augment_seed = j.at("augment_seed").get<std::uint64_t>();
    return o;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed build options: ") + e.what());
  }
}

void save_graph_dataset(const fs::path& dir, const GraphDataset& data, const std::vector<ManifestRow>& rows,
                        const BuildOptions& options) {
  if (rows.size() != data.items.size()) throw UsageError("manifest rows do not match dataset items");
  fs::create_directories(dir / "graphs");
  fs::create_directories(dir / "superpixels");
  std::string index = "id,split,primary,secondary,image,mask\n";
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const std::string& id = data.ids[i];
    save_graph(dir / "graphs" / (id + ".json"), data.items[i].graph);
    write_superpixel_map(dir / "superpixels" / (id + ".png"), data.items[i].superpixels);
    const ManifestRow& r = rows[i];
    index += id + "," + std::string(to_string(r.split)) + "," + std::string(to_string(r.label.primary)) + "," +
             std::string(to_string(r.label.secondary)) + "," + fs::absolute(r.image_path).lexically_normal().string() +
             "," + (r.mask_path ? fs::absolute(*r.mask_path).lexically_normal().string() : std::string()) + "\n";
  }
  write_file_atomic(dir / "build.json", build_options_to_json(options));
  write_file_atomic(dir / "index.csv", index);
}

BuildOptions load_build_options(const fs::path& dir) {
  return build_options_from_json(read_file(dir / "build.json"));
}

GraphDataset load_graph_dataset(const fs::path& dir) {
  std::istringstream in(read_file(dir / "index.csv"));
  std::string line;
  if (!std::getline(in, line) || line != "id,split,primary,secondary,image,mask") {
    throw DataError((dir / "index.csv").string() + ": bad header");
  }
  GraphDataset d;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() == 5) f.emplace_back();
    if (f.size() != 6) throw DataError((dir / "index.csv").string() + ": malformed row '" + line + "'");
    d.ids.push_back(f[0]);
    d.splits.push_back(parse_split(f[1]));
    BuiltGraph b;
    b.graph = load_graph(dir / "graphs" / (f[0] + ".json"));
    b.superpixels = read_superpixel_map(dir / "superpixels" / (f[0] + ".png"));
    if (static_cast<std::size_t>(b.superpixels.num_segments) != b.graph.num_nodes) {
      throw DataError("graph " + f[0] + " does not match its superpixel map");
    }
    d.items.push_back(std::move(b));
    d.image_paths.emplace_back(f[4]);
    if (f[5].empty()) {
      d.masks.emplace_back();
    } else {
      d.masks.push_back(read_mask_png(f[5]));
    }
  }
  return d;
}

ClassMask segment_image(const GinModel& model, const BuiltGraph& built) {
  return mask_from_node_labels(built.superpixels, predict_node_classes(model, built.graph));
}

namespace {

MetricReport report_for(const GinModel& model, const GraphDataset& data, const std::vector<std::size_t>& items,
                        const std::vector<std::vector<int>>& node_classes, std::size_t ece_bins) {
  std::vector<SlidePrediction> slides;
  std::vector<ClassMask> pred, gt;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const std::size_t i = items[k];
    const BuiltGraph& b = data.items[i];
    if (b.graph.image_label) slides.push_back(predict_slide(model, b.graph));
    if (data.masks[i]) {
      pred.push_back(mask_from_node_labels(b.superpixels, node_classes[k]));
      gt.push_back(*data.masks[i]);
    }
  }
  return evaluate(slides, pred, gt, ece_bins);
}

}  // namespace

MetricReport evaluate_model(const GinModel& model, const GraphDataset& data, const std::vector<std::size_t>& items,
                            std::size_t ece_bins) {
  std::vector<std::vector<int>> classes;
  for (std::size_t i : items) classes.push_back(predict_node_classes(model, data.items[i].graph));
  return report_for(model, data, items, classes, ece_bins);
}

MetricReport evaluate_node_assignment(const GinModel& model, const GraphDataset& data,
                                      const std::vector<std::size_t>& items,
                                      const std::vector<std::vector<int>>& node_classes) {
  if (node_classes.size() != items.size()) throw UsageError("one node assignment per item required");
  return report_for(model, data, items, node_classes, 10);
}

PipelineResult run_weak_pipeline(const GraphDataset& data, const TrainConfig& cfg) {
  const auto train = data.graphs(Split::Train);
  const auto val = data.graphs(Split::Val);
  PipelineResult r;
  r.graph_phase = train_graph_phase(train, val, cfg);
  for (const TissueGraph& g : train) {
    r.pseudo_labels.push_back(pseudo_label_graph(r.graph_phase.best.model, g, cfg.select_percent, cfg.threshold));
  }
  r.node_phase = train_node_phase(train, r.pseudo_labels, cfg, r.graph_phase.best, val);
  r.finetune = finetune_joint(train, r.pseudo_labels, val, cfg, r.node_phase.best);
  r.test_report = evaluate_model(r.finetune.best.model, data, data.indices(Split::Test));
  return r;
}

}  // namespace tissueseg
