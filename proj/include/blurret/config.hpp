#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "blurret/dataset.hpp"
#include "blurret/losses.hpp"
#include "blurret/model.hpp"
#include "blurret/sampler.hpp"

namespace blurret {

// Flat key = value document. '#' starts a comment, blank lines are skipped,
// duplicate keys are rejected. Every key must be consumed by a typed getter;
// leftovers are reported by require_all_consumed so typos fail loudly.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& def);
  std::int64_t get_int(const std::string& key, std::int64_t def);
  double get_double(const std::string& key, double def);
  bool get_bool(const std::string& key, bool def);
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& def);

  void require_all_consumed() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int epochs = 10;
  int batch_tuples = 32;
  LossWeights weights;
  double tau = 0.7;
  double arc_margin = 0.15;
  double arc_gamma = 30.0;
  SamplerConfig sampler;
  EncoderConfig encoder;
  BridgeConfig bridge;
  bool sharp_only = false;   // train only on sharp frames
  bool whiten_init = false;  // whitening init for the classification head
};

// Builds the typed configs from a key-value document, applying defaults and
// validating ranges. Both consume their keys; call require_all_consumed
// afterwards to reject unknown ones.
GenConfig gen_config_from(KeyValueConfig& kv);
TrainConfig train_config_from(KeyValueConfig& kv);

}  // namespace blurret
