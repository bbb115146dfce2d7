#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "tissueseg/dataset.hpp"
#include "tissueseg/errors.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/pipeline.hpp"

using namespace tissueseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SyntheticSpec only(std::array<double, 4> mixture, int max_patterns) {
  SyntheticSpec s = SyntheticSpec::separable();
  s.width = 32;
  s.height = 32;
  s.mixture = mixture;
  s.max_patterns = max_patterns;
  return s;
}

}  // namespace

TEST_CASE("labels implied by masks") {
  CHECK(label_from_mask(ClassMask{2, 1, {0, 0}}) == make_label(Pattern::B, Pattern::B));
  CHECK(label_from_mask(ClassMask{3, 1, {0, 2, 2}}) == make_label(Pattern::G4, Pattern::G4));
  CHECK(label_from_mask(ClassMask{3, 1, {1, 3, 0}}) == make_label(Pattern::G5, Pattern::G3));
  CHECK(label_from_mask(ClassMask{4, 1, {1, 3, 2, 2}}) == make_label(Pattern::G5, Pattern::G4));
}

TEST_CASE("benign-only spec yields benign labels and masks") {
  const SyntheticSpec s = only({1, 0, 0, 0}, 0);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto x = generate_synthetic_sample(s, i);
    CHECK(x.label == make_label(Pattern::B, Pattern::B));
    for (auto c : x.mask.classes) CHECK(c == 0);
  }
}

TEST_CASE("single malignant pattern gives equal primary and secondary") {
  const SyntheticSpec s = only({0.5, 0, 0.5, 0}, 1);
  bool saw = false;
  for (std::uint64_t i = 0; i < 12; ++i) {
    const auto x = generate_synthetic_sample(s, i);
    const std::set<int> present(x.mask.classes.begin(), x.mask.classes.end());
    if (present.count(2)) {
      CHECK(x.label == make_label(Pattern::G4, Pattern::G4));
      saw = true;
    } else {
      CHECK(x.label.benign());
    }
  }
  CHECK(saw);
}

TEST_CASE("two malignant patterns give the highest then the second highest") {
  const SyntheticSpec s = only({0.4, 0.3, 0, 0.3}, 2);
  bool saw = false;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const auto x = generate_synthetic_sample(s, i);
    const std::set<int> present(x.mask.classes.begin(), x.mask.classes.end());
    if (present.count(1) && present.count(3)) {
      CHECK(x.label == make_label(Pattern::G5, Pattern::G3));
      saw = true;
    }
    CHECK(x.label == label_from_mask(x.mask));
  }
  CHECK(saw);
}

TEST_CASE("synthetic samples are reproducible") {
  const SyntheticSpec s = only({0.4, 0.2, 0.2, 0.2}, 2);
  const auto a = generate_synthetic_sample(s, 3), b = generate_synthetic_sample(s, 3);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK_FALSE(generate_synthetic_sample(s, 4).image == a.image);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s = SyntheticSpec::separable();
  CHECK(validate_synthetic_spec(s).empty());
  s.mixture = {0.5, 0.5, 0.5, 0};
  CHECK_THROWS_AS(validate_synthetic_spec(s), UsageError);
  SyntheticSpec same = SyntheticSpec::separable();
  same.classes[2] = same.classes[1];
  CHECK_FALSE(validate_synthetic_spec(same).empty());
  CHECK_NOTHROW(generate_synthetic_sample(same, 0));
  CHECK_NOTHROW(validate_synthetic_spec(SyntheticSpec::overlapping()));
}

TEST_CASE("manifest parsing") {
  const auto dir = scratch_dir("tissueseg_manifest");
  const std::string text =
      "image_path,mask_path,primary,secondary,split\n"
      "a.png,a_mask.png,G4,G3,train\n"
      "b.png,,B,B,test\n";
  const auto rows = parse_manifest(text, dir, false);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].image_path == dir / "a.png");
  CHECK(rows[0].mask_path == dir / "a_mask.png");
  CHECK(rows[0].label == make_label(Pattern::G4, Pattern::G3));
  CHECK(rows[1].split == Split::Test);
  CHECK_FALSE(rows[1].mask_path.has_value());
  CHECK(parse_manifest(manifest_to_csv(rows, dir), dir, false).size() == 2);
  CHECK_THROWS_AS(parse_manifest(text, dir, true), DataError);
  CHECK_THROWS_AS(parse_manifest("wrong,header\n", dir, false), DataError);
  CHECK_THROWS_AS(parse_manifest("image_path,mask_path,primary,secondary,split\nx.png,,B,G3,train\n", dir, false),
                  DataError);
  CHECK_THROWS_AS(parse_manifest("image_path,mask_path,primary,secondary,split\nx.png,,B,B,holdout\n", dir, false),
                  DataError);
  fs::remove_all(dir);
}

TEST_CASE("generated dataset, graph directory round trip") {
  const auto dir = scratch_dir("tissueseg_dataset");
  SyntheticSpec s = only({0.4, 0.2, 0.2, 0.2}, 2);
  SplitCounts counts;
  counts.train = 3;
  counts.val = 1;
  counts.test = 1;
  const auto rows = generate_synthetic_dataset(s, counts, dir / "data");
  REQUIRE(rows.size() == 5);
  const auto loaded = load_manifest(dir / "data" / "manifest.csv");
  REQUIRE(loaded.size() == 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(loaded[i].label == rows[i].label);
    CHECK(label_from_mask(read_mask_png(*loaded[i].mask_path)) == loaded[i].label);
  }
  CHECK(loaded[0].split == Split::Train);
  CHECK(loaded[3].split == Split::Val);
  CHECK(loaded[4].split == Split::Test);

  BuildOptions opt;
  opt.slic.n_segments = 12;
  opt.merge.sim_threshold = 0.2;
  opt.patch.patch_size = 16;
  opt.patch.patch_stride = 16;
  const GraphDataset d = build_dataset(loaded, opt, DefaultEncoder{});
  CHECK(d.indices(Split::Train).size() == 3);
  for (const BuiltGraph& b : d.items) {
    CHECK(b.graph.num_nodes == static_cast<std::size_t>(b.superpixels.num_segments));
    CHECK(b.graph.node_labels.size() == b.graph.num_nodes);
  }
  save_graph_dataset(dir / "graphs", d, loaded, opt);
  const GraphDataset back = load_graph_dataset(dir / "graphs");
  REQUIRE(back.items.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.items[i].graph == d.items[i].graph);
    CHECK(back.items[i].superpixels == d.items[i].superpixels);
    CHECK(back.masks[i] == d.masks[i]);
    CHECK(back.splits[i] == d.splits[i]);
  }
  const BuildOptions o2 = load_build_options(dir / "graphs");
  CHECK(build_options_to_json(o2) == build_options_to_json(opt));
  fs::remove_all(dir);
}
