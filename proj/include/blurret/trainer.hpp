#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blurret/config.hpp"
#include "blurret/dataset.hpp"
#include "blurret/eval.hpp"
#include "blurret/losses.hpp"
#include "blurret/model.hpp"

namespace blurret {

struct StepLogRow {
  int epoch = 0;
  int step = 0;  // global, 1-based
  double l_con = 0.0;
  double l_cls = 0.0;
  double l_be = 0.0;
  double l_loc = 0.0;
  double l_joint = 0.0;
};

struct TrainArtifacts {
  BridgeModel<double> model;
  ArcFaceParams arcface;
  std::vector<std::int64_t> class_object_ids;  // arcface column order
  std::vector<StepLogRow> log;
};

// RGB plane of a manifest record as model input, values in [0, 1].
Volume<double> load_image_volume(const std::string& dataset_root,
                                 const ImageRecord& rec);

// Deterministic training loop: windowed tuple sampling, joint loss, and an
// adaptive-moment update with per-batch mean gradients. Writes
// train_log.csv, a checkpoint per epoch, and checkpoint.bin to out_dir
// (pass "" to skip file output). A non-finite loss dumps diverged.json and
// raises TrainingDiverged.
TrainArtifacts train(const DatasetManifest& manifest,
                     const std::string& dataset_root, const TrainConfig& cfg,
                     std::uint64_t seed, const std::string& out_dir);

// Embeds every record with the given split label ("all" for every record);
// store ids are manifest row indices plus id_offset.
DescriptorStore embed_store(const BridgeModel<double>& model,
                            const DatasetManifest& manifest,
                            const std::string& dataset_root,
                            const std::string& split,
                            std::int64_t id_offset = 0);

struct Checkpoint {
  BridgeModel<double> model;
  ArcFaceParams arcface;
  std::vector<std::int64_t> class_object_ids;
  std::uint64_t seed = 0;
  int epoch = 0;
};

void save_checkpoint(const std::string& path, const BridgeModel<double>& model,
                     const ArcFaceParams& arcface,
                     const std::vector<std::int64_t>& class_object_ids,
                     std::uint64_t seed, int epoch);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace blurret
