#pragma once

// Line-oriented `key = value` run configuration with a fixed key registry.
// Later sources override earlier ones; unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "irismatch/iriscode.hpp"
#include "irismatch/matcher.hpp"
#include "irismatch/synthetic.hpp"
#include "irismatch/training.hpp"

namespace irismatch {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    const SynthSpec s;
    const TrainConfig t;
    const ArchitectureSpec a;
    const LogGaborSpec g;
    return std::vector<ConfigKey>{
        {"data", "", "dataset directory or manifest"},
        {"out", "irismatch_out", "output directory"},
        {"model", "", "checkpoint path"},
        {"input", "", "CSV consumed by the roc command"},
        {"query", "", "first image for the match command"},
        {"reference", "", "second image for the match command"},
        {"resume", "0", "continue training from <out>/last.imcn"},
        {"identities", std::to_string(s.identities), "synthetic identities"},
        {"images_per_identity", std::to_string(s.images_per_identity), "synthetic images per identity"},
        {"height", std::to_string(s.height), "synthetic image height"},
        {"width", std::to_string(s.width), "synthetic image width"},
        {"texture_bands", std::to_string(s.texture_bands), "sinusoid components per identity"},
        {"rotation", std::to_string(s.rotation), "max synthetic column shift"},
        {"noise_sigma", detail::format_real(s.noise_sigma), "additive noise sigma"},
        {"occlusion_probability", detail::format_real(s.occlusion_probability), "per-image occlusion probability"},
        {"occlusion_max_height", std::to_string(s.occlusion_max_height), "max occlusion band rows"},
        {"min_wavelength", detail::format_real(s.min_wavelength), "shortest angular wavelength"},
        {"max_wavelength", detail::format_real(s.max_wavelength), "longest angular wavelength"},
        {"seed", std::to_string(s.seed), "seed for generation and training"},
        {"lr", detail::format_real(t.lr), "Adam learning rate"},
        {"batch_size", std::to_string(t.batch_size), "pairs per batch"},
        {"stage1_epochs", std::to_string(t.stage1_epochs), "matcher-only epochs"},
        {"total_epochs", std::to_string(t.total_epochs), "total epochs"},
        {"selection_far", detail::format_real(t.selection_far), "validation FAR for model selection"},
        {"beta1", detail::format_real(t.beta1), "Adam first-moment decay"},
        {"beta2", detail::format_real(t.beta2), "Adam second-moment decay"},
        {"epsilon", detail::format_real(t.epsilon), "Adam epsilon"},
        {"split_ratio", detail::format_real(t.split_ratio), "train:validation authentic-pair ratio"},
        {"val_max_imposters", std::to_string(t.val_max_imposters), "validation imposter cap (0 = all)"},
        {"record_wall_time", "1", "write elapsed seconds into the training log"},
        {"bank_kernels", kernels_to_string(a.bank_kernels), "U-C kernel sizes, HxW list"},
        {"bank_bias", a.bank_bias ? "1" : "0", "U-C filters carry a bias"},
        {"bank_activation", to_string(a.bank_activation), "unit_circle, relu or elu"},
        {"matcher", a.matcher.to_string(), "matcher blocks out:kernel:stride:bn|nobn:dropout"},
        {"far", "0.1,0.01,0.001,0.0001", "FAR levels to report"},
        {"polarity", "higher", "score polarity for roc input (higher or lower)"},
        {"threshold", "0.5", "match decision threshold"},
        {"max_imposters", "0", "evaluation imposter cap (0 = all)"},
        {"max_shift", "8", "baseline rotation search range"},
        {"wavelength", detail::format_real(g.wavelength), "log-Gabor wavelength"},
        {"sigma_on_f", detail::format_real(g.sigma_on_f), "log-Gabor bandwidth ratio"},
        {"row_step", std::to_string(g.row_step), "baseline row subsampling"},
    };
  }();
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
  }

  /// Parses `key = value` lines; '#' starts a comment line.
  void merge_text(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      try {
        set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    merge_text(in, path.string());
  }

  template <class F>
  static std::invoke_result_t<F> wrap(const std::string& key, F&& f) {
    try {
      return f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  std::size_t size(const std::string& key) const { return wrap(key, [&] { return detail::parse_size(str(key), key.c_str()); }); }
  double real(const std::string& key) const { return wrap(key, [&] { return detail::parse_real(str(key), key.c_str()); }); }
  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : detail::split(str(key), ',')) {
      out.push_back(wrap(key, [&] { return detail::parse_real(part, key.c_str()); }));
    }
    return out;
  }

  /// Every key with its effective value, sorted; feeding this back through
  /// merge_text reproduces the configuration.
  std::string snapshot(const std::string& command) const {
    std::ostringstream os;
    os << "# irismatch " << command << " configuration\n";
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  void write_snapshot(const std::string& command, const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << snapshot(command);
  }

  SynthSpec synth_spec() const {
    SynthSpec s;
    s.identities = size("identities");
    s.images_per_identity = size("images_per_identity");
    s.height = size("height");
    s.width = size("width");
    s.texture_bands = size("texture_bands");
    s.rotation = size("rotation");
    s.noise_sigma = real("noise_sigma");
    s.occlusion_probability = real("occlusion_probability");
    s.occlusion_max_height = size("occlusion_max_height");
    s.min_wavelength = real("min_wavelength");
    s.max_wavelength = real("max_wavelength");
    s.seed = size("seed");
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.lr = real("lr");
    t.batch_size = size("batch_size");
    t.stage1_epochs = size("stage1_epochs");
    t.total_epochs = size("total_epochs");
    t.seed = size("seed");
    t.selection_far = real("selection_far");
    t.beta1 = real("beta1");
    t.beta2 = real("beta2");
    t.epsilon = real("epsilon");
    t.split_ratio = real("split_ratio");
    t.val_max_imposters = size("val_max_imposters");
    t.record_wall_time = flag("record_wall_time");
    return t;
  }

  /// Architecture for inputs of the given geometry.
  ArchitectureSpec architecture(std::size_t height, std::size_t width) const {
    ArchitectureSpec a;
    a.height = height;
    a.width = width;
    wrap("bank_kernels", [&] { return a.bank_kernels = parse_kernels(str("bank_kernels")), 0; });
    a.bank_bias = flag("bank_bias");
    wrap("bank_activation", [&] { return a.bank_activation = parse_bank_activation(str("bank_activation")), 0; });
    wrap("matcher", [&] { return a.matcher = MatcherSpec::parse(str("matcher")), 0; });
    return a;
  }

  LogGaborSpec log_gabor() const {
    LogGaborSpec g;
    g.wavelength = real("wavelength");
    g.sigma_on_f = real("sigma_on_f");
    g.row_step = size("row_step");
    return g;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace irismatch
