#include "blurret/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "blurret/errors.hpp"

namespace blurret {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ConfigError("config: duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    std::int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" +
                      it->second + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key, double def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" +
                      it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::string v = it->second;
  for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + it->second +
                    "'");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& def) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<int> out;
  std::string item;
  std::istringstream in(it->second);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw ConfigError("config key '" + key + "': empty list element");
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': not an integer list: '" +
                        it->second + "'");
    }
  }
  if (out.empty())
    throw ConfigError("config key '" + key + "': empty list");
  return out;
}

void KeyValueConfig::require_all_consumed() const {
  std::string unknown;
  for (const auto& [key, value] : values_) {
    if (!consumed_.count(key)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty())
    throw ConfigError("config: unknown keys: " + unknown);
}

GenConfig gen_config_from(KeyValueConfig& kv) {
  GenConfig cfg;
  cfg.height = static_cast<int>(kv.get_int("height", cfg.height));
  cfg.width = static_cast<int>(kv.get_int("width", cfg.width));
  cfg.categories = static_cast<int>(kv.get_int("categories", cfg.categories));
  cfg.objects_per_category = static_cast<int>(
      kv.get_int("objects_per_category", cfg.objects_per_category));
  cfg.trajectories_per_object = static_cast<int>(
      kv.get_int("trajectories_per_object", cfg.trajectories_per_object));
  cfg.images_per_trajectory = static_cast<int>(
      kv.get_int("images_per_trajectory", cfg.images_per_trajectory));
  cfg.n_subsegments =
      static_cast<int>(kv.get_int("n_subsegments", cfg.n_subsegments));
  cfg.max_window = static_cast<int>(kv.get_int("max_window", cfg.max_window));
  cfg.psf_samples = static_cast<int>(kv.get_int("psf_samples", cfg.psf_samples));
  cfg.max_traj_frac = kv.get_double("max_traj_frac", cfg.max_traj_frac);
  cfg.sprite_min = static_cast<int>(kv.get_int("sprite_min", cfg.sprite_min));
  cfg.sprite_max = static_cast<int>(kv.get_int("sprite_max", cfg.sprite_max));
  cfg.min_area_frac = kv.get_double("min_area_frac", cfg.min_area_frac);
  cfg.min_endpoint_iou = kv.get_double("min_endpoint_iou", cfg.min_endpoint_iou);
  cfg.balance_max_ratio = kv.get_double("balance_max_ratio", cfg.balance_max_ratio);
  cfg.retry_budget = static_cast<int>(kv.get_int("retry_budget", cfg.retry_budget));
  cfg.train_frac = kv.get_double("train_frac", cfg.train_frac);
  cfg.val_frac = kv.get_double("val_frac", cfg.val_frac);
  cfg.queries_per_test_object = static_cast<int>(
      kv.get_int("queries_per_test_object", cfg.queries_per_test_object));
  cfg.distractor = kv.get_bool("distractor", cfg.distractor);
  cfg.object_id_offset = kv.get_int("object_id_offset", cfg.object_id_offset);
  cfg.background_dir = kv.get_string("background_dir", cfg.background_dir);
  return cfg;
}

TrainConfig train_config_from(KeyValueConfig& kv) {
  TrainConfig cfg;
  cfg.lr = kv.get_double("lr", cfg.lr);
  cfg.beta1 = kv.get_double("beta1", cfg.beta1);
  cfg.beta2 = kv.get_double("beta2", cfg.beta2);
  cfg.eps = kv.get_double("eps", cfg.eps);
  cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
  cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
  cfg.batch_tuples = static_cast<int>(kv.get_int("batch_tuples", cfg.batch_tuples));
  cfg.weights.alpha_cls = kv.get_double("alpha_cls", cfg.weights.alpha_cls);
  cfg.weights.alpha_be = kv.get_double("alpha_be", cfg.weights.alpha_be);
  cfg.weights.alpha_loc = kv.get_double("alpha_loc", cfg.weights.alpha_loc);
  cfg.tau = kv.get_double("tau", cfg.tau);
  cfg.arc_margin = kv.get_double("arc_margin", cfg.arc_margin);
  cfg.arc_gamma = kv.get_double("arc_gamma", cfg.arc_gamma);
  cfg.sampler.r = static_cast<int>(kv.get_int("sampler_r", cfg.sampler.r));
  cfg.sampler.n_p = static_cast<int>(kv.get_int("sampler_n_p", cfg.sampler.n_p));
  cfg.sampler.n_n = static_cast<int>(kv.get_int("sampler_n_n", cfg.sampler.n_n));
  cfg.encoder.channels = kv.get_int_list("enc_channels", cfg.encoder.channels);
  cfg.encoder.norm_disabled = kv.get_bool("enc_norm_disabled", cfg.encoder.norm_disabled);
  cfg.bridge.c_b = static_cast<int>(kv.get_int("c_b", cfg.bridge.c_b));
  cfg.bridge.c_l = static_cast<int>(kv.get_int("c_l", cfg.bridge.c_l));
  cfg.bridge.c_c = static_cast<int>(kv.get_int("c_c", cfg.bridge.c_c));
  cfg.bridge.d = static_cast<int>(kv.get_int("descriptor_dim", cfg.bridge.d));
  cfg.bridge.gem_p_init = kv.get_double("gem_p_init", cfg.bridge.gem_p_init);
  cfg.bridge.gem_learnable = kv.get_bool("gem_learnable", cfg.bridge.gem_learnable);
  cfg.sharp_only = kv.get_bool("sharp_only", cfg.sharp_only);
  cfg.whiten_init = kv.get_bool("whiten_init", cfg.whiten_init);

  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_tuples < 1) throw ConfigError("batch_tuples must be >= 1");
  if (!(cfg.tau > 0.0)) throw ConfigError("tau must be > 0");
  if (cfg.sampler.r < 0 || cfg.sampler.n_p < 1 || cfg.sampler.n_n < 1)
    throw ConfigError("sampler needs r >= 0, n_p >= 1, n_n >= 1");
  if (cfg.encoder.channels.empty())
    throw ConfigError("enc_channels must be non-empty");
  if (cfg.bridge.c_b < 1 || cfg.bridge.c_l < 1 || cfg.bridge.c_c < 1 ||
      cfg.bridge.d < 1)
    throw ConfigError("head widths and descriptor_dim must be >= 1");
  if (!(cfg.bridge.gem_p_init > 0.0))
    throw ConfigError("gem_p_init must be > 0");
  return cfg;
}

}  // namespace blurret
