#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blurret/blur_synth.hpp"
#include "blurret/sprites.hpp"

namespace blurret {

struct ImageRecord {
  std::string path;  // relative to the manifest's directory
  int64_t object_id = 0;
  int64_t category_id = 0;
  int64_t trajectory_id = 0;
  double bs = 0.0;
  int bl = 1;
  std::array<double, 4> bbox{0, 0, 0, 0};
  bool is_sharp = false;
  std::string split;  // train | val | test-query | test-database | distractor
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  uint64_t seed = 0;
};

struct GenConfig {
  int height = 64;
  int width = 64;
  int categories = 2;
  int objects_per_category = 7;
  int trajectories_per_object = 8;
  // Frames rendered per trajectory; the first one is always the sharp frame.
  int images_per_trajectory = 18;
  int n_subsegments = 23;
  int max_window = 10;  // most consecutive sub-segments one frame may smear
  int psf_samples = 64;
  double max_traj_frac = 0.6;
  int sprite_min = 22;
  int sprite_max = 30;
  double min_area_frac = 0.015;
  double min_endpoint_iou = 0.20;
  // Final check on the train split: max BL bucket <= ratio * min bucket over
  // levels 1..6. Zero disables the check (useful for tiny smoke datasets).
  double balance_max_ratio = 2.0;
  int retry_budget = 40;
  double train_frac = 0.70;
  double val_frac = 0.15;
  int queries_per_test_object = 3;  // full-scale setups use 20
  bool distractor = false;
  int64_t object_id_offset = 0;
  std::string background_dir;  // optional: crop plates from PNGs instead
};

// Renders one frame: k = 0 parks the sprite at the full segment's midpoint
// (sharp frame); k >= 1 smears it over k consecutive sub-segments starting
// at traj.selected_start_index. Throws DomainError for k outside [0, 10] or
// a window that overruns the segment, RecordRejected when the frame fails
// the support-area / endpoint-overlap filters or has no eroded support.
std::pair<CompositeResult, BlurAnnotation> realize_record(
    const Sprite& sprite, const Volume<double>& background,
    const TrajectorySpec& traj, int k, int psf_samples = 64,
    double min_area_frac = 0.015, double min_endpoint_iou = 0.20);

// Generates images + manifest under out_dir (images/ subdirectory,
// manifest.jsonl, meta.json). Deterministic in (cfg, seed). When keep_alpha
// is given it receives each record's full-precision alpha plane.
DatasetManifest build_dataset(const GenConfig& cfg, uint64_t seed,
                              const std::string& out_dir,
                              std::vector<GridD>* keep_alpha = nullptr);

// Object-level split per category (train/val floored, remainder to test),
// then per test object the first queries_per_test_object shuffled
// trajectories become queries and the rest database records.
void split_dataset(DatasetManifest& manifest, double train_frac = 0.70,
                   double val_frac = 0.15, int queries_per_test_object = 20,
                   uint64_t seed = 0);

void write_manifest(const DatasetManifest& manifest,
                    const std::string& out_dir);
DatasetManifest read_manifest(const std::string& manifest_path);

// BL histogram per split plus the aggregate under the "all" key.
std::map<std::string, std::map<int, int64_t>> blur_histogram(
    const DatasetManifest& manifest);

}  // namespace blurret
