#include "blurret/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "blurret/errors.hpp"
#include "blurret/image.hpp"
#include "blurret/rng.hpp"
#include "json.hpp"

namespace blurret {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

int sprite_origin_r(const Sprite& s) { return -(s.mask.h / 2); }
int sprite_origin_c(const Sprite& s) { return -(s.mask.w / 2); }

void window_endpoints(const TrajectorySpec& traj, int k, double& p0r,
                      double& p0c, double& p1r, double& p1c) {
  auto lerp_r = [&](double t) {
    return traj.full_start_r + t * (traj.full_end_r - traj.full_start_r);
  };
  auto lerp_c = [&](double t) {
    return traj.full_start_c + t * (traj.full_end_c - traj.full_start_c);
  };
  if (k == 0) {
    p0r = p1r = lerp_r(0.5);
    p0c = p1c = lerp_c(0.5);
  } else {
    double t0 = static_cast<double>(traj.selected_start_index) / traj.n_subsegments;
    double t1 = static_cast<double>(traj.selected_start_index + k) / traj.n_subsegments;
    p0r = lerp_r(t0);
    p0c = lerp_c(t0);
    p1r = lerp_r(t1);
    p1c = lerp_c(t1);
  }
}

// Object silhouette with the anchor at continuous position (r, c): the mask
// support unioned over the 2x2 bilinear footprint, cropped to the frame.
Grid<uint8_t> silhouette_at(const Sprite& sprite, double r, double c,
                            int origin_r, int origin_c, int h, int w) {
  Grid<uint8_t> sil(h, w, 0);
  int r0 = static_cast<int>(std::floor(r));
  int c0 = static_cast<int>(std::floor(c));
  double fr = r - r0, fc = c - c0;
  const int dr[4] = {0, 0, 1, 1};
  const int dc[4] = {0, 1, 0, 1};
  const double wgt[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc),
                         fr * fc};
  for (int t = 0; t < 4; ++t) {
    if (wgt[t] == 0.0) continue;
    int base_r = r0 + dr[t] + origin_r;
    int base_c = c0 + dc[t] + origin_c;
    int sr0 = std::max(0, -base_r);
    int sr1 = std::min(sprite.mask.h, h - base_r);
    int sc0 = std::max(0, -base_c);
    int sc1 = std::min(sprite.mask.w, w - base_c);
    for (int sr = sr0; sr < sr1; ++sr)
      for (int sc = sc0; sc < sc1; ++sc)
        if (sprite.mask.at(sr, sc) > 0.0) sil.at(base_r + sr, base_c + sc) = 1;
  }
  return sil;
}

struct ProbeResult {
  bool valid = false;
  double bs = 0.0;
  int bl = 1;
};

// Alpha-only dry run of one window: enough to learn BS/BL and whether the
// frame would pass the filters, without paying for RGB compositing.
ProbeResult probe_window(const Sprite& sprite, const TrajectorySpec& traj,
                         int k, int h, int w, int psf_samples,
                         double min_area_frac, double min_endpoint_iou) {
  ProbeResult res;
  double p0r, p0c, p1r, p1c;
  window_endpoints(traj, k, p0r, p0c, p1r, p1c);
  int orr = sprite_origin_r(sprite), orc = sprite_origin_c(sprite);
  PointSpreadFunction psf;
  try {
    psf = rasterize_linear_psf(p0r, p0c, p1r, p1c, h, w, k == 0 ? 1 : psf_samples);
  } catch (const OutOfBounds&) {
    return res;
  }
  GridD alpha = composite_alpha(psf, sprite, orr, orc);
  try {
    res.bs = blur_severity(alpha);
  } catch (const EmptyErodedMask&) {
    return res;
  }
  Grid<uint8_t> s0 = silhouette_at(sprite, p0r, p0c, orr, orc, h, w);
  Grid<uint8_t> s1 = silhouette_at(sprite, p1r, p1c, orr, orc, h, w);
  if (!accept_sample(s0, s1, alpha, min_area_frac, min_endpoint_iou)) return res;
  res.bl = blur_level(res.bs);
  res.valid = true;
  return res;
}

struct SplitPlan {
  std::map<int64_t, std::string> object_split;  // object_id -> train/val/test
  std::set<int64_t> query_trajectories;
};

SplitPlan make_split_plan(
    const std::map<int64_t, std::vector<int64_t>>& categories,
    const std::map<int64_t, std::vector<int64_t>>& trajectories_of,
    double train_frac, double val_frac, int queries_per_test_object,
    uint64_t seed) {
  SplitPlan plan;
  for (const auto& [cat, objects] : categories) {
    size_t n = objects.size();
    if (n < 3) {
      throw InsufficientObjects("category " + std::to_string(cat) + " has " +
                                std::to_string(n) + " objects, need >= 3");
    }
    size_t n_train = static_cast<size_t>(std::floor(train_frac * n + 1e-9));
    size_t n_val = static_cast<size_t>(std::floor(val_frac * n + 1e-9));
    size_t n_test = n - n_train - n_val;
    if (n_train < 1 || n_test < 1) {
      throw InsufficientObjects("category " + std::to_string(cat) +
                                ": split leaves train or test empty");
    }
    std::vector<int64_t> objs = objects;
    Rng rng = Rng::derive(seed, "split", static_cast<uint64_t>(cat));
    rng.shuffle(objs);
    for (size_t i = 0; i < objs.size(); ++i) {
      const char* lbl = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
      plan.object_split[objs[i]] = lbl;
    }
  }
  for (const auto& [obj, lbl] : plan.object_split) {
    if (lbl != "test") continue;
    auto it = trajectories_of.find(obj);
    if (it == trajectories_of.end()) continue;
    std::vector<int64_t> tids = it->second;
    Rng rng = Rng::derive(seed, "qsplit", static_cast<uint64_t>(obj));
    rng.shuffle(tids);
    size_t q = std::min<size_t>(tids.size(),
                                static_cast<size_t>(std::max(0, queries_per_test_object)));
    for (size_t i = 0; i < q; ++i) plan.query_trajectories.insert(tids[i]);
  }
  return plan;
}

Volume<double> plate_background(const LoadedImage& plate, int h, int w, Rng& rng) {
  int max_r = plate.alpha.h - h;
  int max_c = plate.alpha.w - w;
  int r0 = max_r > 0 ? static_cast<int>(rng.uniform_int(0, max_r)) : 0;
  int c0 = max_c > 0 ? static_cast<int>(rng.uniform_int(0, max_c)) : 0;
  Volume<double> bg(3, h, w);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        bg.at(ch, r, c) = plate.rgb.at(ch, r0 + r, c0 + c);
  return bg;
}

void validate_config(const GenConfig& cfg) {
  auto fail = [](const std::string& m) { throw ConfigError("gen config: " + m); };
  if (cfg.height < 16 || cfg.width < 16) fail("frame must be at least 16x16");
  if (cfg.categories < 1 || cfg.objects_per_category < 1) fail("need objects");
  if (cfg.trajectories_per_object < 1) fail("need trajectories");
  if (cfg.images_per_trajectory < 1) fail("need at least one image per trajectory");
  if (cfg.max_window < 1 || cfg.max_window > 10) fail("max_window must be in [1, 10]");
  if (cfg.n_subsegments < cfg.max_window) fail("n_subsegments < max_window");
  if (cfg.sprite_min < 8 || cfg.sprite_max < cfg.sprite_min) fail("bad sprite extents");
  if (cfg.sprite_max >= std::min(cfg.height, cfg.width)) fail("sprite larger than frame");
  if (cfg.psf_samples < 1) fail("psf_samples must be >= 1");
  if (cfg.max_traj_frac < 0.0) fail("max_traj_frac must be >= 0");
  if (cfg.retry_budget < 1) fail("retry_budget must be >= 1");
}

}  // namespace

std::pair<CompositeResult, BlurAnnotation> realize_record(
    const Sprite& sprite, const Volume<double>& background,
    const TrajectorySpec& traj, int k, int psf_samples, double min_area_frac,
    double min_endpoint_iou) {
  if (k < 0 || k > 10) {
    throw DomainError("realize_record: window length " + std::to_string(k) +
                      " outside [0, 10]");
  }
  if (k > 0 && (traj.selected_start_index < 0 ||
                traj.selected_start_index + k > traj.n_subsegments)) {
    throw DomainError("realize_record: window overruns the segment");
  }
  const int h = background.h, w = background.w;
  double p0r, p0c, p1r, p1c;
  window_endpoints(traj, k, p0r, p0c, p1r, p1c);
  int orr = sprite_origin_r(sprite), orc = sprite_origin_c(sprite);
  PointSpreadFunction psf =
      rasterize_linear_psf(p0r, p0c, p1r, p1c, h, w, k == 0 ? 1 : psf_samples);
  CompositeResult comp = composite(psf, sprite, orr, orc, background);

  double bs;
  try {
    bs = blur_severity(comp.alpha);
  } catch (const EmptyErodedMask&) {
    throw RecordRejected("eroded support is empty");
  }
  Grid<uint8_t> s0 = silhouette_at(sprite, p0r, p0c, orr, orc, h, w);
  Grid<uint8_t> s1 = silhouette_at(sprite, p1r, p1c, orr, orc, h, w);
  if (!accept_sample(s0, s1, comp.alpha, min_area_frac, min_endpoint_iou)) {
    throw RecordRejected("support area or endpoint overlap below threshold");
  }
  BlurAnnotation ann;
  ann.bs = bs;
  ann.bl = blur_level(bs);
  ann.bbox = bbox_from_alpha(comp.alpha);
  return {std::move(comp), ann};
}

DatasetManifest build_dataset(const GenConfig& cfg, uint64_t seed,
                              const std::string& out_dir,
                              std::vector<GridD>* keep_alpha) {
  validate_config(cfg);
  fs::create_directories(fs::path(out_dir) / "images");

  std::vector<LoadedImage> plates;
  if (!cfg.background_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cfg.background_dir))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw ConfigError("background_dir has no .png plates: " + cfg.background_dir);
    for (const auto& f : files) {
      LoadedImage img = read_png_rgba(f.string());
      if (img.alpha.h < cfg.height || img.alpha.w < cfg.width)
        throw ConfigError("background plate smaller than frame: " + f.string());
      plates.push_back(std::move(img));
    }
  }

  const int cats = cfg.categories;
  const int opc = cfg.objects_per_category;
  const int tpo = cfg.trajectories_per_object;
  const int vpt = cfg.images_per_trajectory;
  const int h = cfg.height, w = cfg.width;

  std::map<int64_t, std::vector<int64_t>> categories;
  std::map<int64_t, std::vector<int64_t>> trajectories_of;
  for (int ci = 0; ci < cats; ++ci) {
    for (int oi = 0; oi < opc; ++oi) {
      int64_t obj = cfg.object_id_offset + static_cast<int64_t>(ci) * opc + oi;
      categories[ci].push_back(obj);
      for (int ti = 0; ti < tpo; ++ti)
        trajectories_of[obj].push_back(obj * tpo + ti);
    }
  }

  SplitPlan plan;
  if (!cfg.distractor) {
    plan = make_split_plan(categories, trajectories_of, cfg.train_frac,
                           cfg.val_frac, cfg.queries_per_test_object, seed);
  }

  // Per-split BL bucket counts drive greedy window selection.
  std::map<std::string, std::array<int64_t, 12>> counts;

  DatasetManifest mani;
  mani.seed = seed;

  struct PlannedVariant {
    TrajectorySpec traj;
    int k = 0;
    int bl = 1;
  };

  for (int ci = 0; ci < cats; ++ci) {
    for (int oi = 0; oi < opc; ++oi) {
      int64_t obj = cfg.object_id_offset + static_cast<int64_t>(ci) * opc + oi;
      Rng sprite_rng = Rng::derive(seed, "sprite", static_cast<uint64_t>(obj));
      Sprite sprite =
          make_sprite(obj, ci, sprite_rng, cfg.sprite_min, cfg.sprite_max);

      std::string obj_label =
          cfg.distractor ? "distractor" : plan.object_split.at(obj);

      for (int ti = 0; ti < tpo; ++ti) {
        int64_t tid = obj * tpo + ti;
        std::string label = obj_label;
        if (label == "test") {
          label = plan.query_trajectories.count(tid) ? "test-query"
                                                     : "test-database";
        }
        auto& bucket = counts[label];

        bool committed = false;
        for (int attempt = 0; attempt < cfg.retry_budget && !committed; ++attempt) {
          Rng traj_rng = Rng::derive(seed, "traj", static_cast<uint64_t>(tid),
                                     static_cast<uint64_t>(attempt));
          TrajectorySpec traj;
          try {
            traj = sample_trajectory(traj_rng, h, w, cfg.max_traj_frac,
                                     cfg.n_subsegments);
          } catch (const GenerationFailure&) {
            continue;
          }

          std::vector<PlannedVariant> planned;
          std::array<int64_t, 12> cnt = bucket;
          bool ok = true;
          for (int v = 0; v < vpt && ok; ++v) {
            uint64_t rkey = static_cast<uint64_t>(tid) * vpt + v;
            if (v == 0) {
              TrajectorySpec sharp = traj;
              sharp.selected_start_index = 0;
              sharp.selected_count = 0;
              ProbeResult pr = probe_window(sprite, sharp, 0, h, w,
                                            cfg.psf_samples, cfg.min_area_frac,
                                            cfg.min_endpoint_iou);
              if (!pr.valid) {
                ok = false;
                break;
              }
              planned.push_back({sharp, 0, pr.bl});
              ++cnt[pr.bl];
              continue;
            }
            Rng win_rng = Rng::derive(seed, "win", rkey,
                                      static_cast<uint64_t>(attempt));
            bool found = false;
            PlannedVariant best;
            int64_t best_count = 0;
            for (int k = 1; k <= cfg.max_window; ++k) {
              TrajectorySpec cand = traj;
              cand.selected_start_index = static_cast<int>(
                  win_rng.uniform_int(0, cfg.n_subsegments - k));
              cand.selected_count = k;
              ProbeResult pr = probe_window(sprite, cand, k, h, w,
                                            cfg.psf_samples, cfg.min_area_frac,
                                            cfg.min_endpoint_iou);
              if (!pr.valid) continue;
              // Prefer the least-filled reachable bucket; levels beyond 6
              // are a last resort so they never attract the balancer.
              int64_t count_rank =
                  pr.bl <= 6 ? cnt[pr.bl] : std::numeric_limits<int64_t>::max();
              if (!found || count_rank < best_count ||
                  (count_rank == best_count && pr.bl < best.bl)) {
                best = {cand, k, pr.bl};
                best_count = count_rank;
                found = true;
              }
            }
            if (!found) {
              ok = false;
              break;
            }
            planned.push_back(best);
            ++cnt[best.bl];
          }
          if (!ok) continue;

          // All variants are realizable: render, write and register them.
          for (int v = 0; v < vpt; ++v) {
            uint64_t rkey = static_cast<uint64_t>(tid) * vpt + v;
            Rng bg_rng = Rng::derive(seed, "bg", rkey);
            Volume<double> background =
                plates.empty() ? make_background(h, w, bg_rng)
                               : plate_background(
                                     plates[static_cast<size_t>(bg_rng.uniform_int(
                                         0, static_cast<int64_t>(plates.size()) - 1))],
                                     h, w, bg_rng);
            auto [comp, ann] = realize_record(
                sprite, background, planned[v].traj, planned[v].k,
                cfg.psf_samples, cfg.min_area_frac, cfg.min_endpoint_iou);

            char name[64];
            std::snprintf(name, sizeof(name), "images/o%05lld_t%06lld_v%02d.png",
                          static_cast<long long>(obj), static_cast<long long>(tid),
                          v);
            write_png_rgba((fs::path(out_dir) / name).string(), comp.image,
                           comp.alpha);

            ImageRecord rec;
            rec.path = name;
            rec.object_id = obj;
            rec.category_id = ci;
            rec.trajectory_id = tid;
            rec.bs = ann.bs;
            rec.bl = ann.bl;
            rec.bbox = ann.bbox;
            rec.is_sharp = planned[v].k == 0;
            rec.split = label;
            mani.records.push_back(std::move(rec));
            ++bucket[ann.bl];
            if (keep_alpha) keep_alpha->push_back(std::move(comp.alpha));
          }
          committed = true;
        }
        if (!committed) {
          throw GenerationFailure("no valid realization for trajectory " +
                                  std::to_string(tid) + " after " +
                                  std::to_string(cfg.retry_budget) + " attempts");
        }
      }
    }
  }

  if (cfg.balance_max_ratio > 0.0 && counts.count("train")) {
    const auto& c = counts["train"];
    int64_t lo = std::numeric_limits<int64_t>::max(), hi = 0;
    for (int bl = 1; bl <= 6; ++bl) {
      lo = std::min(lo, c[bl]);
      hi = std::max(hi, c[bl]);
    }
    if (lo == 0 || static_cast<double>(hi) > cfg.balance_max_ratio * lo) {
      throw GenerationFailure(
          "train split blur levels unbalanced: min bucket " +
          std::to_string(lo) + ", max bucket " + std::to_string(hi));
    }
  }

  write_manifest(mani, out_dir);
  return mani;
}

void split_dataset(DatasetManifest& manifest, double train_frac, double val_frac,
                   int queries_per_test_object, uint64_t seed) {
  std::map<int64_t, std::vector<int64_t>> categories;
  std::map<int64_t, std::vector<int64_t>> trajectories_of;
  {
    std::map<int64_t, std::set<int64_t>> cat_objs;
    std::map<int64_t, std::set<int64_t>> obj_trajs;
    for (const auto& r : manifest.records) {
      cat_objs[r.category_id].insert(r.object_id);
      obj_trajs[r.object_id].insert(r.trajectory_id);
    }
    for (auto& [c, s] : cat_objs) categories[c] = {s.begin(), s.end()};
    for (auto& [o, s] : obj_trajs) trajectories_of[o] = {s.begin(), s.end()};
  }
  SplitPlan plan = make_split_plan(categories, trajectories_of, train_frac,
                                   val_frac, queries_per_test_object, seed);
  for (auto& r : manifest.records) {
    std::string lbl = plan.object_split.at(r.object_id);
    if (lbl == "test") {
      lbl = plan.query_trajectories.count(r.trajectory_id) ? "test-query"
                                                           : "test-database";
    }
    r.split = lbl;
  }
}

void write_manifest(const DatasetManifest& manifest, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream mf(fs::path(out_dir) / "manifest.jsonl");
  if (!mf) throw IoError("cannot write manifest in " + out_dir);
  for (const auto& r : manifest.records) {
    ordered_json j;
    j["path"] = r.path;
    j["object_id"] = r.object_id;
    j["category_id"] = r.category_id;
    j["trajectory_id"] = r.trajectory_id;
    j["bs"] = r.bs;
    j["bl"] = r.bl;
    j["bbox"] = {r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]};
    j["is_sharp"] = r.is_sharp;
    j["split"] = r.split;
    mf << j.dump() << "\n";
  }
  ordered_json meta;
  meta["seed"] = manifest.seed;
  meta["records"] = manifest.records.size();
  std::ofstream mjf(fs::path(out_dir) / "meta.json");
  mjf << meta.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read manifest: " + manifest_path);
  DatasetManifest mani;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    ImageRecord r;
    r.path = j.at("path").get<std::string>();
    r.object_id = j.at("object_id").get<int64_t>();
    r.category_id = j.at("category_id").get<int64_t>();
    r.trajectory_id = j.at("trajectory_id").get<int64_t>();
    r.bs = j.at("bs").get<double>();
    r.bl = j.at("bl").get<int>();
    auto bb = j.at("bbox");
    for (int i = 0; i < 4; ++i) r.bbox[i] = bb.at(i).get<double>();
    r.is_sharp = j.at("is_sharp").get<bool>();
    r.split = j.at("split").get<std::string>();
    mani.records.push_back(std::move(r));
  }
  fs::path meta = fs::path(manifest_path).parent_path() / "meta.json";
  if (fs::exists(meta)) {
    std::ifstream mj(meta);
    nlohmann::json j;
    mj >> j;
    if (j.contains("seed")) mani.seed = j["seed"].get<uint64_t>();
  }
  return mani;
}

std::map<std::string, std::map<int, int64_t>> blur_histogram(
    const DatasetManifest& manifest) {
  std::map<std::string, std::map<int, int64_t>> hist;
  for (const auto& r : manifest.records) {
    ++hist[r.split][r.bl];
    ++hist["all"][r.bl];
  }
  return hist;
}

}  // namespace blurret
