#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "viis/denoiser.hpp"
#include "viis/ispt.hpp"

namespace viis {

/// Full run configuration: optimizer/loop settings plus the model and
/// corruption-range blocks they refer to.
struct TrainConfig {
  double learning_rate = 1.6e-4;  // desk-scale default; 1.6e-5 selectable
  int batch_size = 8;
  int steps = 2000;
  uint64_t seed = 0;
  int checkpoint_every = 500;
  double grad_clip = 1.0;
  DenoiserConfig model;
  ParamRanges ranges;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    if (grad_clip <= 0) throw ConfigError("train: grad_clip must be > 0");
    model.validate();
    ranges.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError("config: bad numeric value '" + v + "' for key " + key);
  }
}

inline int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d) throw ConfigError("config: key " + key + " expects an integer, got " + v);
  return i;
}

inline NoiseMode noise_mode_of(const std::string& key, const std::string& v) {
  if (v == "gauss_poisson") return NoiseMode::gauss_poisson;
  if (v == "impulse") return NoiseMode::impulse;
  if (v == "none") return NoiseMode::none;
  throw ConfigError("config: bad noise mode '" + v + "' for key " + key);
}

}  // namespace detail

/// Applies one `section.key = value` assignment; unknown keys are hard
/// errors so typos cannot silently fall back to defaults.
inline void apply_config_key(TrainConfig& c, const std::string& section, const std::string& key,
                             const std::string& value) {
  using detail::to_double;
  using detail::to_int;
  const std::string full = section.empty() ? key : section + "." + key;
  if (section == "train") {
    if (key == "learning_rate") c.learning_rate = to_double(full, value);
    else if (key == "batch_size") c.batch_size = to_int(full, value);
    else if (key == "steps") c.steps = to_int(full, value);
    else if (key == "seed") c.seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "checkpoint_every") c.checkpoint_every = to_int(full, value);
    else if (key == "grad_clip") c.grad_clip = to_double(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else if (section == "model") {
    DenoiserConfig& m = c.model;
    if (key == "image_size") m.image_size = to_int(full, value);
    else if (key == "scales") m.scales = to_int(full, value);
    else if (key == "channels") {
      m.channels.clear();
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) m.channels.push_back(to_int(full, detail::trim(tok)));
    } else if (key == "conditioning_mode") m.conditioning_mode = value;
    else if (key == "latent_mode") m.latent_mode = value;
    else if (key == "pool_factor") m.pool_factor = to_int(full, value);
    else if (key == "T") m.T = to_int(full, value);
    else if (key == "time_embed_dim") m.time_embed_dim = to_int(full, value);
    else if (key == "heads") m.heads = to_int(full, value);
    else if (key == "points") m.points = to_int(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else if (section == "augment") {
    ParamRanges& r = c.ranges;
    if (key == "gamma_min") r.gamma_min = to_double(full, value);
    else if (key == "gamma_max") r.gamma_max = to_double(full, value);
    else if (key == "contrast_min") r.contrast_min = to_double(full, value);
    else if (key == "contrast_max") r.contrast_max = to_double(full, value);
    else if (key == "sigma_min") r.sigma_min = to_double(full, value);
    else if (key == "sigma_max") r.sigma_max = to_double(full, value);
    else if (key == "lambda_min") r.lambda_min = to_double(full, value);
    else if (key == "lambda_max") r.lambda_max = to_double(full, value);
    else if (key == "noise_mode") r.noise_mode = detail::noise_mode_of(full, value);
    else if (key == "impulse_density_min") r.impulse_density_min = to_double(full, value);
    else if (key == "impulse_density_max") r.impulse_density_max = to_double(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
}

/// Plain key=value format with `[train]` / `[model]` / `[augment]` headers;
/// `#` and `;` start comments.
inline TrainConfig parse_config_text(std::istream& in, TrainConfig base = {}) {
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key=value at line " + std::to_string(lineno) + ": " + line);
    apply_config_key(base, section, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config file");
  try {
    return parse_config_text(in, std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Resolved-config dump in the same format the parser accepts.
inline std::string config_to_text(const TrainConfig& c) {
  std::ostringstream o;
  o << "[train]\n"
    << "learning_rate = " << c.learning_rate << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "steps = " << c.steps << "\n"
    << "seed = " << c.seed << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n"
    << "grad_clip = " << c.grad_clip << "\n";
  o << "[model]\n"
    << "image_size = " << c.model.image_size << "\n"
    << "scales = " << c.model.scales << "\n"
    << "channels = ";
  for (size_t i = 0; i < c.model.channels.size(); ++i) o << (i ? "," : "") << c.model.channels[i];
  o << "\n"
    << "conditioning_mode = " << c.model.conditioning_mode << "\n"
    << "latent_mode = " << c.model.latent_mode << "\n"
    << "pool_factor = " << c.model.pool_factor << "\n"
    << "T = " << c.model.T << "\n"
    << "time_embed_dim = " << c.model.time_embed_dim << "\n"
    << "heads = " << c.model.heads << "\n"
    << "points = " << c.model.points << "\n";
  const char* nm = c.ranges.noise_mode == NoiseMode::gauss_poisson ? "gauss_poisson"
                   : c.ranges.noise_mode == NoiseMode::impulse     ? "impulse"
                                                                   : "none";
  o << "[augment]\n"
    << "gamma_min = " << c.ranges.gamma_min << "\n"
    << "gamma_max = " << c.ranges.gamma_max << "\n"
    << "contrast_min = " << c.ranges.contrast_min << "\n"
    << "contrast_max = " << c.ranges.contrast_max << "\n"
    << "sigma_min = " << c.ranges.sigma_min << "\n"
    << "sigma_max = " << c.ranges.sigma_max << "\n"
    << "lambda_min = " << c.ranges.lambda_min << "\n"
    << "lambda_max = " << c.ranges.lambda_max << "\n"
    << "noise_mode = " << nm << "\n"
    << "impulse_density_min = " << c.ranges.impulse_density_min << "\n"
    << "impulse_density_max = " << c.ranges.impulse_density_max << "\n";
  return o.str();
}

}  // namespace viis
