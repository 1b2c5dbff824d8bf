#include "blurret/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <unordered_map>

#include "json.hpp"

#include "blurret/errors.hpp"
#include "blurret/image.hpp"
#include "blurret/sampler.hpp"

namespace fs = std::filesystem;

namespace blurret {

Volume<double> load_image_volume(const std::string& dataset_root,
                                 const ImageRecord& rec) {
  fs::path path = fs::path(dataset_root) / rec.path;
  LoadedImage img = read_png_rgba(path.string());
  return cast_volume<double>(img.rgb);
}

namespace {

constexpr char kMagic[4] = {'B', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) throw IoError("short write to " + path);
}

void read_raw(std::FILE* f, void* p, std::size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n) throw IoError("short read from " + path);
}

void write_csv_row(std::ofstream& csv, const StepLogRow& row) {
  if (!csv.is_open()) return;
  csv << row.epoch << ',' << row.step << ',' << std::setprecision(17)
      << row.l_con << ',' << row.l_cls << ',' << row.l_be << ',' << row.l_loc
      << ',' << row.l_joint << '\n';
  csv.flush();
}

}  // namespace

void save_checkpoint(const std::string& path, const BridgeModel<double>& model,
                     const ArcFaceParams& arcface,
                     const std::vector<std::int64_t>& class_object_ids,
                     std::uint64_t seed, int epoch) {
  BridgeModel<double> copy = model;  // params() is non-const
  std::vector<ParamRef<double>> params = copy.params();
  params.push_back({"arcface.w", const_cast<double*>(arcface.w.data()),
                    static_cast<std::size_t>(arcface.w.size())});

  nlohmann::ordered_json header;
  header["seed"] = seed;
  header["epoch"] = epoch;
  header["in_channels"] = model.in_channels;
  header["encoder"] = {{"channels", model.enc.channels},
                       {"stride", model.enc.stride},
                       {"norm_disabled", model.enc.norm_disabled}};
  header["bridge"] = {{"c_b", model.br.c_b},     {"c_l", model.br.c_l},
                      {"c_c", model.br.c_c},     {"d", model.br.d},
                      {"gem_p_init", model.br.gem_p_init},
                      {"gem_learnable", model.br.gem_learnable}};
  header["arcface"] = {{"m", arcface.m}, {"gamma", arcface.gamma}};
  header["classes"] = class_object_ids;
  std::string hbytes = header.dump();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  try {
    write_raw(f, kMagic, 4, path);
    std::uint32_t version = kVersion;
    write_raw(f, &version, sizeof version, path);
    std::uint64_t hlen = hbytes.size();
    write_raw(f, &hlen, sizeof hlen, path);
    write_raw(f, hbytes.data(), hbytes.size(), path);
    std::uint32_t count = static_cast<std::uint32_t>(params.size());
    write_raw(f, &count, sizeof count, path);
    for (const auto& p : params) {
      std::uint32_t name_len = static_cast<std::uint32_t>(p.name.size());
      write_raw(f, &name_len, sizeof name_len, path);
      write_raw(f, p.name.data(), p.name.size(), path);
      std::uint64_t n = p.n;
      write_raw(f, &n, sizeof n, path);
      write_raw(f, p.data, sizeof(double) * p.n, path);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  if (std::fclose(f) != 0) throw IoError("cannot close " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  Checkpoint ck;
  try {
    char magic[4];
    read_raw(f, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
      throw IoError(path + " is not a checkpoint");
    std::uint32_t version = 0;
    read_raw(f, &version, sizeof version, path);
    if (version != kVersion)
      throw IoError(path + ": unsupported version " + std::to_string(version));
    std::uint64_t hlen = 0;
    read_raw(f, &hlen, sizeof hlen, path);
    std::string hbytes(hlen, '\0');
    read_raw(f, hbytes.data(), hlen, path);
    nlohmann::json header = nlohmann::json::parse(hbytes);

    EncoderConfig enc;
    enc.channels = header.at("encoder").at("channels").get<std::vector<int>>();
    enc.stride = header.at("encoder").at("stride").get<int>();
    enc.norm_disabled = header.at("encoder").at("norm_disabled").get<bool>();
    BridgeConfig br;
    br.c_b = header.at("bridge").at("c_b").get<int>();
    br.c_l = header.at("bridge").at("c_l").get<int>();
    br.c_c = header.at("bridge").at("c_c").get<int>();
    br.d = header.at("bridge").at("d").get<int>();
    br.gem_p_init = header.at("bridge").at("gem_p_init").get<double>();
    br.gem_learnable = header.at("bridge").at("gem_learnable").get<bool>();

    ck.model = BridgeModel<double>(enc, br);
    ck.model.in_channels = header.at("in_channels").get<int>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<int>();
    ck.class_object_ids =
        header.at("classes").get<std::vector<std::int64_t>>();
    ck.arcface.m = header.at("arcface").at("m").get<double>();
    ck.arcface.gamma = header.at("arcface").at("gamma").get<double>();
    ck.arcface.w = Eigen::MatrixXd::Zero(
        br.d, static_cast<Eigen::Index>(ck.class_object_ids.size()));

    std::unordered_map<std::string, ParamRef<double>> by_name;
    for (const auto& p : ck.model.params()) by_name.emplace(p.name, p);
    by_name.emplace("arcface.w",
                    ParamRef<double>{"arcface.w", ck.arcface.w.data(),
                                     static_cast<std::size_t>(ck.arcface.w.size())});

    std::uint32_t count = 0;
    read_raw(f, &count, sizeof count, path);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::uint32_t name_len = 0;
      read_raw(f, &name_len, sizeof name_len, path);
      std::string name(name_len, '\0');
      read_raw(f, name.data(), name_len, path);
      std::uint64_t n = 0;
      read_raw(f, &n, sizeof n, path);
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw IoError(path + ": unknown tensor '" + name + "'");
      if (it->second.n != n)
        throw IoError(path + ": tensor '" + name + "' holds " +
                      std::to_string(n) + " values, expected " +
                      std::to_string(it->second.n));
      read_raw(f, it->second.data, sizeof(double) * n, path);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return ck;
}

DescriptorStore embed_store(const BridgeModel<double>& model,
                            const DatasetManifest& manifest,
                            const std::string& dataset_root,
                            const std::string& split, std::int64_t id_offset) {
  DescriptorStore store;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ImageRecord& rec = manifest.records[i];
    if (split != "all" && rec.split != split) continue;
    Volume<double> input = load_image_volume(dataset_root, rec);
    Eigen::VectorXd d = model.embed(input);
    store.add(static_cast<std::int64_t>(i) + id_offset, rec.object_id, rec.bl, d);
  }
  return store;
}

TrainArtifacts train(const DatasetManifest& manifest,
                     const std::string& dataset_root, const TrainConfig& cfg,
                     std::uint64_t seed, const std::string& out_dir) {
  TuplePool pool(manifest.records, "train", cfg.sharp_only);
  if (pool.indices().empty())
    throw InsufficientObjects("train: no training records" +
                              std::string(cfg.sharp_only ? " (sharp only)" : ""));

  std::set<std::int64_t> objects;
  for (std::size_t idx : pool.indices())
    objects.insert(manifest.records[idx].object_id);
  if (objects.size() < 2)
    throw InsufficientObjects("train: need at least 2 training objects, have " +
                              std::to_string(objects.size()));

  TrainArtifacts art;
  art.class_object_ids.assign(objects.begin(), objects.end());
  std::unordered_map<std::int64_t, int> label_of;
  for (std::size_t i = 0; i < art.class_object_ids.size(); ++i)
    label_of.emplace(art.class_object_ids[i], static_cast<int>(i));

  art.model = BridgeModel<double>(cfg.encoder, cfg.bridge);
  art.model.init(seed);
  art.arcface.m = cfg.arc_margin;
  art.arcface.gamma = cfg.arc_gamma;
  const int n_classes = static_cast<int>(art.class_object_ids.size());
  art.arcface.w = Eigen::MatrixXd(cfg.bridge.d, n_classes);
  {
    Rng arc_rng = Rng::derive(seed, "arcface-init");
    double scale = 1.0 / std::sqrt(static_cast<double>(cfg.bridge.d));
    for (Eigen::Index i = 0; i < art.arcface.w.size(); ++i)
      art.arcface.w.data()[i] = arc_rng.normal(0.0, scale);
  }

  std::unordered_map<std::size_t, Volume<double>> inputs;
  inputs.reserve(pool.indices().size());
  for (std::size_t idx : pool.indices())
    inputs.emplace(idx, load_image_volume(dataset_root, manifest.records[idx]));

  if (cfg.whiten_init) {
    const int k = static_cast<int>(
        std::min<std::size_t>(256, pool.indices().size()));
    MatXT<double> features(k, art.model.feature_channels());
    for (int i = 0; i < k; ++i) {
      typename BridgeModel<double>::Cache cache;
      art.model.forward(inputs.at(pool.indices()[static_cast<std::size_t>(i)]), cache);
      features.row(i) = cache.pooled.transpose();
    }
    whiten_init_cls(art.model, features);
  }

  std::vector<ParamRef<double>> params = art.model.params();
  params.push_back({"arcface.w", art.arcface.w.data(),
                    static_cast<std::size_t>(art.arcface.w.size())});
  std::size_t total = 0;
  for (const auto& p : params) total += p.n;
  std::vector<double> adam_m(total, 0.0), adam_v(total, 0.0);

  BridgeModel<double> grad(cfg.encoder, cfg.bridge);
  Eigen::MatrixXd d_w_batch;

  std::ofstream csv;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv.open((fs::path(out_dir) / "train_log.csv").string());
    if (!csv) throw IoError("cannot open train_log.csv in " + out_dir);
    csv << "epoch,step,L_con,L_cls,L_be,L_loc,L_joint\n";
  }

  int gstep = 0;
  long long adam_t = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = epoch_batches(pool, cfg.batch_tuples, cfg.sampler, seed, epoch);
    for (const auto& batch : batches) {
      grad.zero();
      d_w_batch = Eigen::MatrixXd::Zero(cfg.bridge.d, n_classes);
      JointLossValue sums;

      for (const ContrastiveTuple& tuple : batch) {
        std::vector<std::size_t> members;
        members.push_back(tuple.query);
        members.insert(members.end(), tuple.positives.begin(), tuple.positives.end());
        members.insert(members.end(), tuple.negatives.begin(), tuple.negatives.end());

        std::vector<typename BridgeModel<double>::Cache> caches(members.size());
        std::vector<TupleImage> timgs(members.size());
        for (std::size_t i = 0; i < members.size(); ++i) {
          const ImageRecord& rec = manifest.records[members[i]];
          ModelOutput<double> out =
              art.model.forward(inputs.at(members[i]), caches[i]);
          timgs[i].descriptor = out.descriptor;
          timgs[i].blur_pred = out.blur_pred;
          timgs[i].bbox_pred = out.bbox_pred;
          timgs[i].bs = rec.bs;
          timgs[i].bbox_gt = Eigen::Vector4d(rec.bbox[0], rec.bbox[1],
                                             rec.bbox[2], rec.bbox[3]);
          timgs[i].label = label_of.at(rec.object_id);
        }

        std::vector<TupleImageGrad> tgrads;
        JointLossValue jl;
        try {
          jl = joint_loss_grad(timgs, cfg.sampler.n_p, art.arcface,
                               cfg.weights, cfg.tau, tgrads, d_w_batch);
        } catch (const DegenerateDescriptor& e) {
          // A zero-norm descriptor cannot be normalized; at a sane learning
          // rate this means the initialization left some image with fully
          // dead activations. Re-raise with enough context to act on.
          throw DegenerateDescriptor(
              std::string(e.what()) + " (epoch " + std::to_string(epoch) +
              ", step " + std::to_string(gstep + 1) +
              "; a descriptor collapsed to zero norm — try a different "
              "training seed or wider encoder channels)");
        }
        for (std::size_t i = 0; i < members.size(); ++i)
          art.model.backward(caches[i], tgrads[i].d_descriptor,
                             tgrads[i].d_blur, tgrads[i].d_bbox, grad);

        sums.l_con += jl.l_con;
        sums.l_cls += jl.l_cls;
        sums.l_be += jl.l_be;
        sums.l_loc += jl.l_loc;
        sums.total += jl.total;
      }

      const double inv = 1.0 / static_cast<double>(batch.size());
      StepLogRow row;
      row.epoch = epoch;
      row.step = ++gstep;
      row.l_con = sums.l_con * inv;
      row.l_cls = sums.l_cls * inv;
      row.l_be = sums.l_be * inv;
      row.l_loc = sums.l_loc * inv;
      row.l_joint = sums.total * inv;

      if (!std::isfinite(row.l_joint)) {
        if (!out_dir.empty()) {
          nlohmann::ordered_json dump;
          dump["error"] = "TrainingDiverged";
          dump["epoch"] = epoch;
          dump["step"] = row.step;
          dump["L_con"] = row.l_con;
          dump["L_cls"] = row.l_cls;
          dump["L_be"] = row.l_be;
          dump["L_loc"] = row.l_loc;
          dump["L_joint"] = row.l_joint;
          std::ofstream out((fs::path(out_dir) / "diverged.json").string());
          out << dump.dump(2) << '\n';
        }
        throw TrainingDiverged("non-finite joint loss at epoch " +
                               std::to_string(epoch) + " step " +
                               std::to_string(row.step));
      }

      std::vector<ParamRef<double>> grad_list = grad.params();
      grad_list.push_back({"arcface.w", d_w_batch.data(),
                           static_cast<std::size_t>(d_w_batch.size())});
      ++adam_t;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
      std::size_t off = 0;
      for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t j = 0; j < params[k].n; ++j) {
          double g = grad_list[k].data[j] * inv;
          if (cfg.weight_decay > 0.0) g += cfg.weight_decay * params[k].data[j];
          double& m = adam_m[off + j];
          double& v = adam_v[off + j];
          m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
          v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
          params[k].data[j] -=
              cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        }
        off += params[k].n;
      }

      art.log.push_back(row);
      write_csv_row(csv, row);
    }

    if (!out_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03d.bin", epoch);
      save_checkpoint((fs::path(out_dir) / name).string(), art.model,
                      art.arcface, art.class_object_ids, seed, epoch);
    }
  }

  if (!out_dir.empty()) {
    save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), art.model,
                    art.arcface, art.class_object_ids, seed, cfg.epochs);
  }
  return art;
}

}  // namespace blurret
