#include "layoutsynth/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace layoutsynth {
namespace {

using nlohmann::ordered_json;

// Reads typed keys from one JSON object, remembering which were consumed so
// that leftovers can be reported as unknown.
class Section {
 public:
  Section(const ordered_json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    const ordered_json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError(where(key) + " must be a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<V>) {
        const bool ok = std::is_unsigned_v<V> ? v.is_number_unsigned() : v.is_number_integer();
        if (!ok) throw ConfigError(where(key) + " must be a non-negative integer");
        out = v.get<V>();
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
        out = v.get<V>();
      } else {
        if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
        out = v.get<V>();
      }
    } catch (const ordered_json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const ordered_json empty = ordered_json::object();
    return Section(obj_.contains(key) ? obj_.at(key) : empty, where(key));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + where(it.key()));
    }
  }

 private:
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const ordered_json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void validate(const RunConfig& c) {
  validate(c.model);
  validate(c.data);
  const CategorySet* set = nullptr;
  try {
    set = &builtin_category_set(c.categories);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("categories: ") + e.what());
  }
  require(c.model.num_categories == set->size(),
          "model.num_categories must equal the size of category set \"" + c.categories +
              "\" (" + std::to_string(set->size()) + ")");
  require(c.data.resolution == c.model.resolution,
          "data.resolution must equal model.resolution");
  require(c.loss.lambda >= 0 && c.loss.recon_weight >= 0 && c.loss.perceptual_weight >= 0,
          "loss weights must be >= 0");
  require(c.optim.adam.lr > 0, "optim.lr must be positive");
  require(c.optim.adam.beta1 >= 0 && c.optim.adam.beta1 < 1, "optim.beta1 must be in [0, 1)");
  require(c.optim.adam.beta2 >= 0 && c.optim.adam.beta2 < 1, "optim.beta2 must be in [0, 1)");
  require(c.optim.adam.eps > 0, "optim.eps must be positive");
  require(c.optim.batch_size >= 1, "optim.batch_size must be >= 1");
  require(c.optim.power_iterations >= 1, "optim.power_iterations must be >= 1");
  require(c.semi.supervised_fraction >= 0 && c.semi.supervised_fraction <= 1,
          "semi.supervised_fraction must be in [0, 1]");
  require(c.semi.noise.jitter_sigma >= 0, "semi.jitter_sigma must be >= 0");
  require(c.semi.noise.drop_prob >= 0 && c.semi.noise.drop_prob <= 1,
          "semi.drop_prob must be in [0, 1]");
  require(c.semi.noise.tau >= 0 && c.semi.noise.tau <= 1, "semi.tau must be in [0, 1]");
  require(c.semi.noise.kappa >= 0, "semi.kappa must be >= 0");
  require(c.train.log_every >= 1, "train.log_every must be >= 1");
}

std::string to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["categories"] = c.categories;
  j["model"] = {
      {"resolution", c.model.resolution},     {"num_categories", c.model.num_categories},
      {"d_img", c.model.d_img},               {"d_embed", c.model.d_embed},
      {"d_obj", c.model.d_obj},               {"gen_channels", c.model.gen_channels},
      {"mask_size", c.model.mask_size},       {"mask_channels", c.model.mask_channels},
      {"disc_channels", c.model.disc_channels}, {"roi_size", c.model.roi_size},
      {"pyramid_levels", c.model.pyramid_levels},
  };
  j["loss"] = {{"lambda", c.loss.lambda},
               {"recon_weight", c.loss.recon_weight},
               {"perceptual_weight", c.loss.perceptual_weight}};
  j["optim"] = {{"lr", c.optim.adam.lr},
                {"beta1", c.optim.adam.beta1},
                {"beta2", c.optim.adam.beta2},
                {"eps", c.optim.adam.eps},
                {"batch_size", c.optim.batch_size},
                {"power_iterations", c.optim.power_iterations}};
  j["data"] = {{"resolution", c.data.resolution},   {"num_samples", c.data.num_samples},
               {"min_objects", c.data.min_objects}, {"max_objects", c.data.max_objects},
               {"allow_overlap", c.data.allow_overlap}, {"min_size", c.data.min_size},
               {"max_size", c.data.max_size},       {"color_jitter", c.data.color_jitter}};
  j["semi"] = {{"supervised_fraction", c.semi.supervised_fraction},
               {"jitter_sigma", c.semi.noise.jitter_sigma},
               {"drop_prob", c.semi.noise.drop_prob},
               {"kappa", c.semi.noise.kappa},
               {"tau", c.semi.noise.tau}};
  j["train"] = {{"steps", c.train.steps},
                {"log_every", c.train.log_every},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["paths"] = {{"data_dir", c.data_dir}, {"out_dir", c.out_dir}};
  return j.dump(2) + "\n";
}

RunConfig parse_run_config(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("categories", c.categories);
  {
    Section s = root.child("model");
    s.read("resolution", c.model.resolution);
    s.read("num_categories", c.model.num_categories);
    s.read("d_img", c.model.d_img);
    s.read("d_embed", c.model.d_embed);
    s.read("d_obj", c.model.d_obj);
    s.read("gen_channels", c.model.gen_channels);
    s.read("mask_size", c.model.mask_size);
    s.read("mask_channels", c.model.mask_channels);
    s.read("disc_channels", c.model.disc_channels);
    s.read("roi_size", c.model.roi_size);
    s.read("pyramid_levels", c.model.pyramid_levels);
    s.finish();
  }
  {
    Section s = root.child("loss");
    s.read("lambda", c.loss.lambda);
    s.read("recon_weight", c.loss.recon_weight);
    s.read("perceptual_weight", c.loss.perceptual_weight);
    s.finish();
  }
  {
    Section s = root.child("optim");
    s.read("lr", c.optim.adam.lr);
    s.read("beta1", c.optim.adam.beta1);
    s.read("beta2", c.optim.adam.beta2);
    s.read("eps", c.optim.adam.eps);
    s.read("batch_size", c.optim.batch_size);
    s.read("power_iterations", c.optim.power_iterations);
    s.finish();
  }
  {
    Section s = root.child("data");
    s.read("resolution", c.data.resolution);
    s.read("num_samples", c.data.num_samples);
    s.read("min_objects", c.data.min_objects);
    s.read("max_objects", c.data.max_objects);
    s.read("allow_overlap", c.data.allow_overlap);
    s.read("min_size", c.data.min_size);
    s.read("max_size", c.data.max_size);
    s.read("color_jitter", c.data.color_jitter);
    s.finish();
  }
  {
    Section s = root.child("semi");
    s.read("supervised_fraction", c.semi.supervised_fraction);
    s.read("jitter_sigma", c.semi.noise.jitter_sigma);
    s.read("drop_prob", c.semi.noise.drop_prob);
    s.read("kappa", c.semi.noise.kappa);
    s.read("tau", c.semi.noise.tau);
    s.finish();
  }
  {
    Section s = root.child("train");
    s.read("steps", c.train.steps);
    s.read("log_every", c.train.log_every);
    s.read("checkpoint_every", c.train.checkpoint_every);
    s.finish();
  }
  {
    Section s = root.child("paths");
    s.read("data_dir", c.data_dir);
    s.read("out_dir", c.out_dir);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace layoutsynth
