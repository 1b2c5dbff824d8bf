#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "blurret/config.hpp"
#include "blurret/dataset.hpp"
#include "blurret/errors.hpp"
#include "blurret/eval.hpp"
#include "blurret/trainer.hpp"

namespace fs = std::filesystem;
using blurret::KeyValueConfig;

namespace {

// Applies --set key=value overrides on top of an optional config file.
KeyValueConfig load_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
  KeyValueConfig kv = config_path.empty()
                          ? KeyValueConfig{}
                          : KeyValueConfig::parse_file(config_path);
  for (const std::string& item : overrides) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw blurret::ConfigError("--set expects key=value, got '" + item + "'");
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  return kv;
}

std::int64_t parse_cutoff(const std::string& text) {
  if (text == "all") return blurret::kCutoffAll;
  try {
    std::size_t pos = 0;
    long long v = std::stoll(text, &pos);
    if (pos != text.size() || v < 1) throw std::invalid_argument("range");
    return v;
  } catch (const std::exception&) {
    throw blurret::ConfigError("--cutoff must be 'all' or a positive integer, got '" +
                               text + "'");
  }
}

void emit(const nlohmann::ordered_json& j, const std::string& out_path) {
  std::string text = j.dump(2) + "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw blurret::IoError("cannot open " + out_path + " for writing");
    out << text;
  }
  std::cout << text;
}

int run_gen_data(const std::string& config_path,
                 const std::vector<std::string>& overrides, std::uint64_t seed,
                 const std::string& out_dir) {
  KeyValueConfig kv = load_config(config_path, overrides);
  blurret::GenConfig cfg = blurret::gen_config_from(kv);
  kv.require_all_consumed();
  blurret::DatasetManifest manifest = blurret::build_dataset(cfg, seed, out_dir);
  nlohmann::ordered_json j;
  j["records"] = manifest.records.size();
  j["manifest"] = (fs::path(out_dir) / "manifest.jsonl").string();
  emit(j, "");
  return 0;
}

int run_train(const std::string& manifest_path, const std::string& config_path,
              const std::vector<std::string>& overrides, std::uint64_t seed,
              const std::string& out_dir) {
  KeyValueConfig kv = load_config(config_path, overrides);
  blurret::TrainConfig cfg = blurret::train_config_from(kv);
  kv.require_all_consumed();
  blurret::DatasetManifest manifest = blurret::read_manifest(manifest_path);
  std::string root = fs::path(manifest_path).parent_path().string();
  blurret::TrainArtifacts art = blurret::train(manifest, root, cfg, seed, out_dir);
  nlohmann::ordered_json j;
  j["steps"] = art.log.size();
  if (!art.log.empty()) {
    const blurret::StepLogRow& last = art.log.back();
    j["final"] = {{"L_con", last.l_con}, {"L_cls", last.l_cls},
                  {"L_be", last.l_be},   {"L_loc", last.l_loc},
                  {"L_joint", last.l_joint}};
  }
  j["checkpoint"] = (fs::path(out_dir) / "checkpoint.bin").string();
  emit(j, "");
  return 0;
}

int run_embed(const std::string& checkpoint_path,
              const std::string& manifest_path, const std::string& split,
              std::int64_t id_offset, const std::string& out_path) {
  blurret::Checkpoint ck = blurret::load_checkpoint(checkpoint_path);
  blurret::DatasetManifest manifest = blurret::read_manifest(manifest_path);
  std::string root = fs::path(manifest_path).parent_path().string();
  blurret::DescriptorStore store =
      blurret::embed_store(ck.model, manifest, root, split, id_offset);
  blurret::write_descriptor_store(out_path, store);
  nlohmann::ordered_json j;
  j["descriptors"] = store.size();
  j["dim"] = store.dim();
  j["out"] = out_path;
  emit(j, "");
  return 0;
}

int run_eval(const std::string& queries_path,
             const std::vector<std::string>& database_paths,
             const std::string& cutoff_text, bool per_bl_matrix,
             bool plain_denominator, const std::string& out_path) {
  std::int64_t cutoff = parse_cutoff(cutoff_text);
  blurret::DescriptorStore queries = blurret::read_descriptor_store(queries_path);
  blurret::DescriptorStore database;
  for (const std::string& path : database_paths)
    blurret::read_descriptor_store_into(path, database);
  blurret::EvalReport report =
      blurret::evaluate(queries, database, cutoff, !plain_denominator);
  if (per_bl_matrix) {
    report.matrix =
        blurret::blur_matrix(queries, database, cutoff, !plain_denominator);
    if (report.matrix->absent_cells > 0)
      std::cerr << "warning: " << report.matrix->absent_cells
                << " blur-matrix cells had no queries or database entries\n";
  }
  emit(blurret::report_to_json(report), out_path);
  return 0;
}

int run_blur_stats(const std::string& manifest_path, bool as_json) {
  blurret::DatasetManifest manifest = blurret::read_manifest(manifest_path);
  auto hist = blurret::blur_histogram(manifest);
  if (as_json) {
    nlohmann::ordered_json j;
    for (const auto& [split, counts] : hist) {
      nlohmann::ordered_json row;
      for (const auto& [bl, n] : counts) row[std::to_string(bl)] = n;
      j[split] = row;
    }
    emit(j, "");
    return 0;
  }
  int max_bl = 1;
  for (const auto& [split, counts] : hist)
    for (const auto& [bl, n] : counts) max_bl = std::max(max_bl, bl);
  std::cout << "split           ";
  for (int bl = 1; bl <= max_bl; ++bl) std::cout << "  BL" << bl << "  ";
  std::cout << "  total\n";
  for (const auto& [split, counts] : hist) {
    std::int64_t total = 0;
    std::cout << split;
    for (std::size_t pad = split.size(); pad < 16; ++pad) std::cout << ' ';
    for (int bl = 1; bl <= max_bl; ++bl) {
      auto it = counts.find(bl);
      std::int64_t n = it == counts.end() ? 0 : it->second;
      total += n;
      std::cout << ' ' << n;
      for (std::size_t pad = std::to_string(n).size(); pad < 6; ++pad)
        std::cout << ' ';
    }
    std::cout << ' ' << total << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blurret: motion-blur-robust retrieval toolkit"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, out_dir, out_path, split = "all";
  std::string checkpoint_path, queries_path, cutoff_text = "all";
  std::vector<std::string> overrides, database_paths;
  std::uint64_t seed = 0;
  std::int64_t id_offset = 0;
  bool per_bl_matrix = false, plain_denominator = false, as_json = false;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config_path, "Config file (key = value)")
      ->check(CLI::ExistingFile);
  gen->add_option("--set", overrides, "Override a config key (key=value)");
  gen->add_option("--seed", seed, "Generation seed")->required();
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "Train the descriptor model");
  train->add_option("--manifest", manifest_path, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--config", config_path, "Config file (key = value)")
      ->check(CLI::ExistingFile);
  train->add_option("--set", overrides, "Override a config key (key=value)");
  train->add_option("--seed", seed, "Training seed")->required();
  train->add_option("--out", out_dir, "Output directory for logs/checkpoints")
      ->required();

  CLI::App* embed = app.add_subcommand("embed", "Embed a manifest split");
  embed->add_option("--checkpoint", checkpoint_path, "Model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  embed->add_option("--manifest", manifest_path, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  embed->add_option("--split", split,
                    "Split label (train|val|test-query|test-database|distractor|all)");
  embed->add_option("--id-offset", id_offset, "Offset added to record ids");
  embed->add_option("--out", out_path, "Output descriptor file")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate retrieval");
  eval->add_option("--queries", queries_path, "Query descriptor file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--database", database_paths, "Database descriptor file(s)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--cutoff", cutoff_text, "Ranking cutoff: all or a positive integer");
  eval->add_flag("--per-bl-matrix", per_bl_matrix,
                 "Also compute the 6x6 per-blur-level mAP matrix");
  eval->add_flag("--plain-denominator", plain_denominator,
                 "Use n_positives as the AP denominator even under a cutoff");
  eval->add_option("--out", out_path, "Also write the report JSON here");

  CLI::App* stats = app.add_subcommand("blur-stats", "Blur-level histogram");
  stats->add_option("--manifest", manifest_path, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  stats->add_flag("--json", as_json, "Emit JSON instead of a table");

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return run_gen_data(config_path, overrides, seed, out_dir);
    if (train->parsed())
      return run_train(manifest_path, config_path, overrides, seed, out_dir);
    if (embed->parsed())
      return run_embed(checkpoint_path, manifest_path, split, id_offset, out_path);
    if (eval->parsed())
      return run_eval(queries_path, database_paths, cutoff_text, per_bl_matrix,
                      plain_denominator, out_path);
    if (stats->parsed()) return run_blur_stats(manifest_path, as_json);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    nlohmann::ordered_json err;
    err["error"] = "UsageError";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const blurret::Error& e) {
    nlohmann::ordered_json err;
    err["error"] = e.kind();
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    std::string kind = e.kind();
    return (kind == "ConfigError" || kind == "IoError") ? 2 : 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = "Error";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
