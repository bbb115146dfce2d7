#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tissueseg/attribution.hpp"
#include "tissueseg/dataset.hpp"
#include "tissueseg/encoder.hpp"
#include "tissueseg/graph.hpp"
#include "tissueseg/imaging.hpp"
#include "tissueseg/metrics.hpp"
#include "tissueseg/training.hpp"

namespace tissueseg {

struct BuildOptions {
  std::optional<ChannelStats> stain_reference;
  SlicParams slic;
  MergeParams merge;
  PatchParams patch;
  std::optional<std::uint64_t> augment_seed;
};

struct BuiltGraph {
  SuperpixelMap superpixels;
  TissueGraph graph;
};

// stain normalisation (optional) -> SLIC -> merge -> features -> RAG.
// Ground-truth node labels are attached when a mask is given.
BuiltGraph build_graph(const RasterImage& image, std::optional<GleasonLabel> label, const ClassMask* mask,
                       const BuildOptions& options, const PatchEncoder& encoder);

// In-memory dataset split into train/val/test.
struct GraphDataset {
  std::vector<std::string> ids;
  std::vector<Split> splits;
  std::vector<BuiltGraph> items;
  std::vector<std::optional<ClassMask>> masks;
  std::vector<std::filesystem::path> image_paths;

  std::vector<TissueGraph> graphs(Split s) const;
  std::vector<std::size_t> indices(Split s) const;
};

GraphDataset build_dataset(const std::vector<ManifestRow>& rows, const BuildOptions& options,
                           const PatchEncoder& encoder);

// Graph directory layout: index.csv (id,split,primary,secondary,image,mask),
// build.json (BuildOptions), graphs/<id>.json, superpixels/<id>.png.
std::string build_options_to_json(const BuildOptions& o);
BuildOptions build_options_from_json(const std::string& text);
void save_graph_dataset(const std::filesystem::path& dir, const GraphDataset& data,
                        const std::vector<ManifestRow>& rows, const BuildOptions& options);
GraphDataset load_graph_dataset(const std::filesystem::path& dir);
BuildOptions load_build_options(const std::filesystem::path& dir);

// Pixel masks from per-node class predictions.
ClassMask segment_image(const GinModel& model, const BuiltGraph& built);

// Slide and segmentation metrics of a model over dataset items.
MetricReport evaluate_model(const GinModel& model, const GraphDataset& data, const std::vector<std::size_t>& items,
                            std::size_t ece_bins = 10);

// Segmentation metrics for externally supplied node classes (one vector per
// item), with the slide metrics of `model`.
MetricReport evaluate_node_assignment(const GinModel& model, const GraphDataset& data,
                                      const std::vector<std::size_t>& items,
                                      const std::vector<std::vector<int>>& node_classes);

struct PipelineResult {
  TrainResult graph_phase;
  std::vector<PseudoLabelSet> pseudo_labels;
  TrainResult node_phase;
  TrainResult finetune;
  MetricReport test_report;
};

// graph phase -> pseudo labels -> node phase -> fine-tune -> test report.
PipelineResult run_weak_pipeline(const GraphDataset& data, const TrainConfig& cfg);

}  // namespace tissueseg
