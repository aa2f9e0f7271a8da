// Staged training orchestration: declarative configuration, checkpoints with
// optimizer state, and the five stages from synthetic data to evaluation.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "alignformer/dam.hpp"
#include "alignformer/dataset.hpp"
#include "alignformer/features.hpp"
#include "alignformer/flow.hpp"
#include "alignformer/gam.hpp"
#include "alignformer/io.hpp"
#include "alignformer/losses.hpp"
#include "alignformer/metrics.hpp"
#include "alignformer/ppmunet.hpp"

namespace af::pipe {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ag::Var;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Configuration

struct AdamSettings {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::int64_t> milestones;
  double gamma = 0.5;
};

struct TrainingSettings {
  std::int64_t iterations = 1000;
  int batch_size = 4;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  AdamSettings adam;
};

struct DatasetSettings {
  int scenes = 32;
  int train_scenes = 24;
  int patch_size = 64;
  std::uint64_t seed = 1;
  bool geometry = true;
  bool photometric = true;
  bool color_only = false;
  double max_rotation_deg = 2.0;
  double max_translation = 3.0;
  double residual_amplitude = 4.0;
};

struct FeatureSettings {
  std::string mode = "fixed-random-convnet";
  std::uint64_t seed = 20230601;
  std::vector<int> widths{16, 32, 64, 64};
  std::string weights;  // checkpoint path for pretrained-vgg19
};

struct CxSettings {
  std::string distance = "cosine";
  std::string center = "reference-mean";
  double softmin_temperature = 0.0;
  std::vector<std::string> taps{"conv4_4"};
};

struct DamNetwork {
  int guidance_width = 32;
  int matching_width = 32;
};

struct AlignNetwork {
  std::vector<int> channels{16, 32, 32};
  int radius = 2;
  bool fusion_skips = true;
};

struct RestoreNetwork {
  std::vector<int> widths{16, 32, 64, 64};
  std::vector<int> ppm_bins{1, 2, 3, 6};
  bool use_ppm = true;
  bool discriminator = true;
  std::vector<int> discriminator_widths{32, 64, 128, 128};
};

struct RestoreLoss {
  double lambda_1 = 1e-2;
  double lambda_vgg = 1.0;
  double lambda_gan = 5e-3;
  bool flip_augmentation = true;
};

struct DamStage {
  DamNetwork network;
  CxSettings cx;
  TrainingSettings training{500, 4, 0, {}};
};

struct AlignStage {
  AlignNetwork network;
  CxSettings cx;
  TrainingSettings training{1000, 4, 0, {}};
};

struct RestoreStage {
  RestoreNetwork network;
  RestoreLoss loss;
  TrainingSettings training{2000, 4, 0, {}};
};

struct FlowSettings {
  std::string provider = "oracle";
  std::string external_forward = "external_fw.flo";   // per scene directory
  std::string external_backward = "external_bw.flo";
  double occ_alpha = 0.1;
  double occ_beta = 1.0;
};

struct EvalSettings {
  std::vector<double> pck_alpha{0.01, 0.03, 0.10};
  std::vector<int> ablation_radius;
  std::vector<std::string> ablation_flow{"oracle", "zero"};
  bool mtf = true;
  int matcher_step = 4;
  int matcher_patch_radius = 4;
  int matcher_search_radius = 10;
  double matcher_min_score = 0.7;
};

struct PathSettings {
  std::string out = "run";
  std::string data = "data";
  std::string dam = "dam";
  std::string alignformer = "alignformer";
  std::string pseudo = "pseudo";
  std::string restoration = "restoration";
  std::string evaluation = "evaluation";
};

struct PipelineConfig {
  std::string preset = "desk";
  std::string notes;
  std::uint64_t seed = 1;
  std::string device = "cpu";
  DatasetSettings dataset;
  FeatureSettings features;
  DamStage dam;
  AlignStage alignformer;
  RestoreStage restoration;
  FlowSettings flow;
  EvalSettings evaluation;
  PathSettings paths;

  void validate() const;
};

// Field tables: one list per record drives JSON, schema and validation of keys.

template <typename V> void fields(AdamSettings& s, V&& v) {
  v("lr", s.lr); v("beta1", s.beta1); v("beta2", s.beta2); v("epsilon", s.epsilon);
  v("milestones", s.milestones); v("gamma", s.gamma);
}
template <typename V> void fields(TrainingSettings& s, V&& v) {
  v("iterations", s.iterations); v("batch_size", s.batch_size); v("checkpoint_every", s.checkpoint_every);
  v("adam", s.adam);
}
template <typename V> void fields(DatasetSettings& s, V&& v) {
  v("scenes", s.scenes); v("train_scenes", s.train_scenes); v("patch_size", s.patch_size); v("seed", s.seed);
  v("geometry", s.geometry); v("photometric", s.photometric); v("color_only", s.color_only);
  v("max_rotation_deg", s.max_rotation_deg); v("max_translation", s.max_translation);
  v("residual_amplitude", s.residual_amplitude);
}
template <typename V> void fields(FeatureSettings& s, V&& v) {
  v("mode", s.mode); v("seed", s.seed); v("widths", s.widths); v("weights", s.weights);
}
template <typename V> void fields(CxSettings& s, V&& v) {
  v("distance", s.distance); v("center", s.center); v("softmin_temperature", s.softmin_temperature);
  v("taps", s.taps);
}
template <typename V> void fields(DamNetwork& s, V&& v) {
  v("guidance_width", s.guidance_width); v("matching_width", s.matching_width);
}
template <typename V> void fields(AlignNetwork& s, V&& v) {
  v("channels", s.channels); v("radius", s.radius); v("fusion_skips", s.fusion_skips);
}
template <typename V> void fields(RestoreNetwork& s, V&& v) {
  v("widths", s.widths); v("ppm_bins", s.ppm_bins); v("use_ppm", s.use_ppm); v("discriminator", s.discriminator);
  v("discriminator_widths", s.discriminator_widths);
}
template <typename V> void fields(RestoreLoss& s, V&& v) {
  v("lambda_1", s.lambda_1); v("lambda_vgg", s.lambda_vgg); v("lambda_gan", s.lambda_gan);
  v("flip_augmentation", s.flip_augmentation);
}
template <typename V> void fields(DamStage& s, V&& v) { v("network", s.network); v("cx", s.cx); v("training", s.training); }
template <typename V> void fields(AlignStage& s, V&& v) { v("network", s.network); v("cx", s.cx); v("training", s.training); }
template <typename V> void fields(RestoreStage& s, V&& v) {
  v("network", s.network); v("loss", s.loss); v("training", s.training);
}
template <typename V> void fields(FlowSettings& s, V&& v) {
  v("provider", s.provider); v("external_forward", s.external_forward); v("external_backward", s.external_backward);
  v("occ_alpha", s.occ_alpha); v("occ_beta", s.occ_beta);
}
template <typename V> void fields(EvalSettings& s, V&& v) {
  v("pck_alpha", s.pck_alpha); v("ablation_radius", s.ablation_radius); v("ablation_flow", s.ablation_flow);
  v("mtf", s.mtf); v("matcher_step", s.matcher_step); v("matcher_patch_radius", s.matcher_patch_radius);
  v("matcher_search_radius", s.matcher_search_radius); v("matcher_min_score", s.matcher_min_score);
}
template <typename V> void fields(PathSettings& s, V&& v) {
  v("out", s.out); v("data", s.data); v("dam", s.dam); v("alignformer", s.alignformer); v("pseudo", s.pseudo);
  v("restoration", s.restoration); v("evaluation", s.evaluation);
}
template <typename V> void fields(PipelineConfig& s, V&& v) {
  v("preset", s.preset); v("notes", s.notes); v("seed", s.seed); v("device", s.device); v("dataset", s.dataset);
  v("features", s.features); v("dam", s.dam); v("alignformer", s.alignformer); v("restoration", s.restoration);
  v("flow", s.flow); v("evaluation", s.evaluation); v("paths", s.paths);
}

namespace detail {

template <typename T> struct is_vector : std::false_type {};
template <typename T> struct is_vector<std::vector<T>> : std::true_type {};

template <typename T>
concept Record = requires(T& t) { fields(t, [](const char*, auto&) {}); };

template <typename T>
json to_json_value(const T& value) {
  if constexpr (Record<T>) {
    json j = json::object();
    fields(const_cast<T&>(value), [&](const char* key, const auto& f) { j[key] = to_json_value(f); });
    return j;
  } else if constexpr (is_vector<T>::value) {
    json j = json::array();
    for (const auto& e : value) j.push_back(to_json_value(e));
    return j;
  } else {
    return json(value);
  }
}

template <typename T>
void from_json_value(const json& j, T& out, const std::string& where) {
  if constexpr (Record<T>) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    std::set<std::string> known;
    fields(out, [&](const char* key, auto& f) {
      known.insert(key);
      if (j.contains(key)) from_json_value(j.at(key), f, where + "." + key);
    });
    for (const auto& [key, unused] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown configuration key " + where + "." + key);
    }
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      typename T::value_type e{};
      from_json_value(j[i], e, where + "[" + std::to_string(i) + "]");
      out.push_back(std::move(e));
    }
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(where + ": expected a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!j.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
    }
    out = j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(where + ": expected a number");
    out = j.get<T>();
  } else {
    if (!j.is_string()) throw ConfigError(where + ": expected a string");
    out = j.get<std::string>();
  }
}

template <typename T>
json schema_of() {
  if constexpr (Record<T>) {
    json props = json::object();
    T probe{};
    fields(probe, [&](const char* key, auto& f) {
      props[key] = schema_of<std::remove_cvref_t<decltype(f)>>();
    });
    return {{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
  } else if constexpr (is_vector<T>::value) {
    return {{"type", "array"}, {"items", schema_of<typename T::value_type>()}};
  } else if constexpr (std::is_same_v<T, bool>) {
    return {{"type", "boolean"}};
  } else if constexpr (std::is_integral_v<T>) {
    json s = {{"type", "integer"}};
    if constexpr (std::is_unsigned_v<T>) s["minimum"] = 0;
    return s;
  } else if constexpr (std::is_floating_point_v<T>) {
    return {{"type", "number"}};
  } else {
    return {{"type", "string"}};
  }
}

}  // namespace detail

inline json to_json(const PipelineConfig& cfg) { return detail::to_json_value(cfg); }

inline PipelineConfig config_from_json(const json& j, PipelineConfig base = {}) {
  detail::from_json_value(j, base, "config");
  base.validate();
  return base;
}

/// JSON Schema (draft 2020-12) describing the configuration file.
inline json config_schema() {
  json s = detail::schema_of<PipelineConfig>();
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "alignformer pipeline configuration";
  return s;
}

inline void save_config(const fs::path& path, const PipelineConfig& cfg) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

inline PipelineConfig load_config(const fs::path& path, PipelineConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Hash of everything that influences results; output locations and the
/// device are excluded so runs in different directories compare equal.
inline std::string config_hash(const PipelineConfig& cfg) {
  json j = to_json(cfg);
  j.erase("paths");
  j.erase("device");
  j.erase("notes");
  return hex64(fnv1a(j.dump()));
}

inline void PipelineConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(device == "cpu" || device == "accelerator", "device must be cpu or accelerator");
  need(dataset.scenes >= 2, "dataset.scenes must be >= 2");
  need(dataset.train_scenes >= 1 && dataset.train_scenes < dataset.scenes,
       "dataset.train_scenes must be in [1, scenes)");
  need(dataset.patch_size >= 16 && dataset.patch_size % 8 == 0, "dataset.patch_size must be a multiple of 8, >= 16");
  need(dataset.max_rotation_deg >= 0 && dataset.max_translation >= 0 && dataset.residual_amplitude >= 0,
       "dataset: warp magnitudes must be >= 0");
  feat::parse_feature_mode(features.mode);
  for (int w : features.widths) need(w > 0, "features.widths must be positive");
  need(features.widths.size() == 4, "features.widths needs four entries");
  need(features.mode != "pretrained-vgg19" || !features.weights.empty(), "features.weights required for pretrained-vgg19");
  for (const CxSettings* cx : {&dam.cx, &alignformer.cx}) {
    loss::parse_cx_distance(cx->distance);
    loss::parse_cx_center(cx->center);
    need(cx->softmin_temperature >= 0, "cx.softmin_temperature must be >= 0");
    need(!cx->taps.empty(), "cx.taps must not be empty");
    for (const auto& t : cx->taps)
      need(std::find(std::begin(feat::kTaps), std::end(feat::kTaps), t) != std::end(feat::kTaps),
           "cx.taps: unknown feature tap " + t);
  }
  need(dam.network.guidance_width > 0 && dam.network.matching_width > 0, "dam.network widths must be positive");
  need(!alignformer.network.channels.empty(), "alignformer.network.channels must not be empty");
  for (int c : alignformer.network.channels) need(c > 0, "alignformer.network.channels must be positive");
  need(alignformer.network.radius >= 0, "alignformer.network.radius must be >= 0");
  const int factor = 1 << (alignformer.network.channels.size() - 1);
  need(dataset.patch_size % std::max(factor, 8) == 0, "dataset.patch_size must be divisible by the network strides");
  need(restoration.network.widths.size() == 4, "restoration.network.widths needs four entries");
  for (int c : restoration.network.widths) need(c > 0, "restoration.network.widths must be positive");
  ppm::PpmConfig{restoration.network.ppm_bins}.validate();
  need(restoration.network.ppm_bins.back() <= dataset.patch_size / 8, "restoration.network.ppm_bins exceed 1/8 patch");
  need(!restoration.network.discriminator_widths.empty(), "restoration.network.discriminator_widths must not be empty");
  need(dataset.patch_size % (1 << restoration.network.discriminator_widths.size()) == 0,
       "dataset.patch_size must be divisible by the discriminator stride");
  need(restoration.loss.lambda_1 >= 0 && restoration.loss.lambda_vgg >= 0 && restoration.loss.lambda_gan >= 0,
       "restoration.loss weights must be >= 0");
  for (const TrainingSettings* t : {&dam.training, &alignformer.training, &restoration.training}) {
    need(t->iterations >= 0, "training.iterations must be >= 0");
    need(t->batch_size >= 1, "training.batch_size must be >= 1");
    need(t->checkpoint_every >= 0, "training.checkpoint_every must be >= 0");
    need(t->adam.lr > 0, "training.adam.lr must be > 0");
    need(t->adam.beta1 >= 0 && t->adam.beta1 < 1 && t->adam.beta2 >= 0 && t->adam.beta2 < 1,
         "training.adam betas must be in [0, 1)");
    need(t->adam.epsilon > 0, "training.adam.epsilon must be > 0");
    need(t->adam.gamma > 0 && t->adam.gamma <= 1, "training.adam.gamma must be in (0, 1]");
    need(std::is_sorted(t->adam.milestones.begin(), t->adam.milestones.end()),
         "training.adam.milestones must be ascending");
  }
  parse_flow_kind(flow.provider);
  need(flow.occ_alpha >= 0 && flow.occ_beta >= 0, "flow.occ_alpha and flow.occ_beta must be >= 0");
  need(!evaluation.pck_alpha.empty(), "evaluation.pck_alpha must not be empty");
  for (double a : evaluation.pck_alpha) need(a > 0, "evaluation.pck_alpha must be > 0");
  for (int r : evaluation.ablation_radius) need(r >= 0, "evaluation.ablation_radius must be >= 0");
  for (const auto& k : evaluation.ablation_flow) parse_flow_kind(k);
  need(evaluation.matcher_step >= 1 && evaluation.matcher_patch_radius >= 1 && evaluation.matcher_search_radius >= 1,
       "evaluation matcher sizes must be >= 1");
  need(!paths.out.empty(), "paths.out must not be empty");
}

// ---------------------------------------------------------------------------
// Presets

inline PipelineConfig desk_preset() { return {}; }

inline PipelineConfig paper_scale_preset() {
  PipelineConfig c;
  c.preset = "paper-scale";
  c.notes = "assumption: 320000 total iterations per stage; only the decay points (250k, 300k) are given";
  c.dataset.scenes = 330;
  c.dataset.train_scenes = 300;
  c.dataset.patch_size = 512;
  c.dam.network = {64, 64};
  c.alignformer.network.channels = {32, 64, 128};
  c.restoration.network.widths = {32, 64, 128, 128};
  for (TrainingSettings* t : {&c.dam.training, &c.alignformer.training, &c.restoration.training}) {
    t->iterations = 320000;
    t->batch_size = 8;
    t->checkpoint_every = 10000;
    t->adam.lr = 1e-4;
    t->adam.milestones = {250000, 300000};
  }
  return c;
}

inline PipelineConfig radius_ablation_preset() {
  PipelineConfig c;
  c.preset = "radius-ablation";
  c.evaluation.ablation_radius = {0, 1, 2};
  return c;
}

inline PipelineConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper-scale") return paper_scale_preset();
  if (name == "radius-ablation") return radius_ablation_preset();
  throw ConfigError("unknown preset: " + name);
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"desk", "paper-scale", "radius-ablation"};
  return names;
}

/// Overlays a configuration document on the preset it names (desk if none).
inline PipelineConfig resolve_config(const json& j) {
  std::string name = "desk";
  if (j.is_object() && j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("config.preset: expected a string");
    name = j.at("preset").get<std::string>();
  }
  return config_from_json(j, preset(name));
}

inline PipelineConfig resolve_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path.string());
  try {
    return resolve_config(json::parse(is));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Paths, seeds, logs

enum class Stage { kData, kDam, kAlign, kPseudo, kRestore, kEval };

inline fs::path stage_dir(const PipelineConfig& cfg, Stage s) {
  const auto& p = cfg.paths;
  const std::string& rel = s == Stage::kData      ? p.data
                           : s == Stage::kDam     ? p.dam
                           : s == Stage::kAlign   ? p.alignformer
                           : s == Stage::kPseudo  ? p.pseudo
                           : s == Stage::kRestore ? p.restoration
                                                  : p.evaluation;
  const fs::path r(rel);
  return r.is_absolute() ? r : fs::path(p.out) / r;
}

inline fs::path final_checkpoint(const fs::path& dir) { return dir / "checkpoint.afck"; }

inline fs::path periodic_checkpoint(const fs::path& dir, std::int64_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_%07lld.afck", static_cast<long long>(iteration));
  return dir / buf;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage) {
  return splitmix64(cfg.seed ^ fnv1a(stage));
}

/// Distinct scene indices for one iteration, a pure function of (seed, iteration).
inline std::vector<int> batch_indices(std::uint64_t seed, std::int64_t iteration, int pool, int batch) {
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(iteration))));
  std::vector<int> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<int> out;
  for (int k = 0; k < batch; ++k) {
    const int j = k % pool;
    if (j == 0 && k > 0) std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_int_distribution<int> pick(j, pool - 1);
    std::swap(idx[j], idx[pick(rng)]);
    out.push_back(idx[j]);
  }
  return out;
}

inline std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", i);
  return buf;
}

inline std::string encode_log(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

inline std::vector<double> decode_log(const std::string& s) {
  std::istringstream is(s);
  std::vector<double> v;
  double d;
  while (is >> d) v.push_back(d);
  return v;
}

inline void write_loss_log(const fs::path& path, const std::vector<double>& losses) {
  io::KeyValues kv;
  char key[32];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(key, sizeof key, "iter.%07zu", i + 1);
    kv[key] = io::format_number(losses[i]);
  }
  io::write_key_values(path, kv);
}

/// Mean of the first and of the last `window` entries.
inline std::pair<double, double> loss_ends(const std::vector<double>& v, std::size_t window = 20) {
  if (v.empty()) return {0, 0};
  const std::size_t n = std::min(window, v.size());
  double a = 0, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a += v[i];
    b += v[v.size() - n + i];
  }
  return {a / n, b / n};
}

inline std::string alpha_key(double a) {
  std::ostringstream os;
  os << a;
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing

inline void put_params(io::Checkpoint& ck, const std::string& prefix, const ag::ParameterSet<float>& params) {
  for (const auto& [name, v] : params.entries()) ck.arrays.emplace_back(prefix + name, v.value());
}

inline void get_params(const io::Checkpoint& ck, const std::string& prefix, const ag::ParameterSet<float>& params) {
  for (const auto& [name, v] : params.entries()) {
    const Tensor<float>& t = ck.array(prefix + name);
    if (t.shape() != v.shape()) {
      throw std::runtime_error("checkpoint array " + prefix + name + " has shape " + to_string(t.shape()) +
                               ", network expects " + to_string(v.shape()));
    }
    v.node()->value = t;
  }
}

inline void put_adam(io::Checkpoint& ck, const std::string& prefix, const ag::ParameterSet<float>& params,
                     const nn::Adam<float>& adam) {
  const auto& e = params.entries();
  for (std::size_t k = 0; k < e.size(); ++k) {
    ck.arrays.emplace_back(prefix + "adam.m." + e[k].first, adam.first_moments()[k]);
    ck.arrays.emplace_back(prefix + "adam.v." + e[k].first, adam.second_moments()[k]);
  }
  ck.meta[prefix + "adam.step"] = std::to_string(adam.step_count());
}

inline void get_adam(const io::Checkpoint& ck, const std::string& prefix, const ag::ParameterSet<float>& params,
                     nn::Adam<float>& adam) {
  std::vector<Tensor<float>> m, v;
  for (const auto& [name, p] : params.entries()) {
    m.push_back(ck.array(prefix + "adam.m." + name));
    v.push_back(ck.array(prefix + "adam.v." + name));
  }
  adam.restore(std::move(m), std::move(v), std::stoll(ck.meta.at(prefix + "adam.step")));
}

inline std::string params_hash(const ag::ParameterSet<float>& params) {
  std::vector<std::pair<std::string, Tensor<float>>> arrays;
  for (const auto& [name, v] : params.entries()) arrays.emplace_back(name, v.value());
  return io::hash_arrays(arrays);
}

inline nn::AdamConfig adam_config(const AdamSettings& a) { return {a.lr, a.beta1, a.beta2, a.epsilon}; }

// ---------------------------------------------------------------------------
// Network construction from configuration

inline dam::DamConfig dam_config(const PipelineConfig& c) {
  dam::DamConfig d;
  d.guidance_width = c.dam.network.guidance_width;
  d.matching_width = c.dam.network.matching_width;
  return d;
}

inline gam::AlignFormerConfig align_config(const PipelineConfig& c) {
  gam::AlignFormerConfig a;
  a.channels = c.alignformer.network.channels;
  a.radius = c.alignformer.network.radius;
  a.fusion_skips = c.alignformer.network.fusion_skips;
  return a;
}

inline ppm::PpmUnetConfig restore_config(const PipelineConfig& c) {
  ppm::PpmUnetConfig p;
  const auto& w = c.restoration.network.widths;
  p.widths = {w[0], w[1], w[2], w[3]};
  p.ppm.bins = c.restoration.network.ppm_bins;
  p.use_ppm = c.restoration.network.use_ppm;
  return p;
}

inline loss::CxOptions cx_options(const CxSettings& s) {
  loss::CxOptions o;
  o.distance = loss::parse_cx_distance(s.distance);
  o.center = loss::parse_cx_center(s.center);
  o.softmin_temperature = s.softmin_temperature;
  return o;
}

inline feat::FeatureConfig feature_config(const PipelineConfig& c) {
  feat::FeatureConfig f;
  f.mode = feat::parse_feature_mode(c.features.mode);
  f.seed = c.features.seed;
  f.widths = {c.features.widths[0], c.features.widths[1], c.features.widths[2], c.features.widths[3]};
  f.weights = c.features.weights;
  return f;
}

inline metrics::MatcherConfig matcher_config(const EvalSettings& e) {
  metrics::MatcherConfig m;
  m.step = e.matcher_step;
  m.patch_radius = e.matcher_patch_radius;
  m.search_radius = e.matcher_search_radius;
  m.min_score = e.matcher_min_score;
  return m;
}

inline void require_cpu(const PipelineConfig& c) {
  if (c.device != "cpu") throw std::runtime_error("device '" + c.device + "' is not available in this build; use cpu");
}

// ---------------------------------------------------------------------------
// Dataset store

struct Dataset {
  std::vector<data::ScenePair> scenes;
  std::vector<fs::path> dirs;
  int train = 0;

  int size() const { return static_cast<int>(scenes.size()); }
  std::vector<int> train_indices() const {
    std::vector<int> v(train);
    std::iota(v.begin(), v.end(), 0);
    return v;
  }
  std::vector<int> test_indices() const {
    std::vector<int> v(scenes.size() - train);
    std::iota(v.begin(), v.end(), train);
    return v;
  }
};

inline data::SceneRandomization scene_randomization(const DatasetSettings& d) {
  data::SceneRandomization r;
  r.out_size = d.patch_size;
  r.geometry = d.geometry;
  r.photometric = d.photometric;
  r.color_only = d.color_only;
  r.max_rotation_deg = d.max_rotation_deg;
  r.max_translation = d.max_translation;
  r.residual_amplitude = d.residual_amplitude;
  return r;
}

inline std::uint64_t scene_seed(const DatasetSettings& d, int i) {
  return splitmix64(d.seed * 0x100000001b3ull + static_cast<std::uint64_t>(i));
}

/// Synthesizes the scenes in memory; gen_data writes the same scenes to disk.
inline std::vector<data::ScenePair> synthesize(const DatasetSettings& d) {
  std::vector<data::ScenePair> out;
  const auto r = scene_randomization(d);
  for (int i = 0; i < d.scenes; ++i) out.push_back(data::make_synthetic_scene(r, scene_seed(d, i)));
  return out;
}

inline void write_run_config(const fs::path& dir, const PipelineConfig& cfg) {
  fs::create_directories(dir);
  save_config(dir / "config.json", cfg);
}

inline int gen_data(const PipelineConfig& cfg) {
  cfg.validate();
  const fs::path dir = stage_dir(cfg, Stage::kData);
  fs::create_directories(dir);
  const auto scenes = synthesize(cfg.dataset);
  for (std::size_t i = 0; i < scenes.size(); ++i) data::save_scene(dir / scene_name(static_cast<int>(i)), scenes[i]);
  write_run_config(dir, cfg);
  io::write_key_values(dir / "dataset.txt", {{"scenes", std::to_string(scenes.size())},
                                             {"train_scenes", std::to_string(cfg.dataset.train_scenes)},
                                             {"config_hash", config_hash(cfg)}});
  return static_cast<int>(scenes.size());
}

inline Dataset load_dataset(const PipelineConfig& cfg) {
  const fs::path dir = stage_dir(cfg, Stage::kData);
  if (!fs::exists(dir / "dataset.txt")) throw std::runtime_error("no dataset at " + dir.string() + "; run gen-data first");
  const auto kv = io::read_key_values(dir / "dataset.txt");
  Dataset ds;
  const int n = std::stoi(kv.at("scenes"));
  ds.train = std::stoi(kv.at("train_scenes"));
  if (ds.train < 1 || ds.train >= n) throw std::runtime_error("dataset " + dir.string() + ": bad train split");
  for (int i = 0; i < n; ++i) {
    ds.dirs.push_back(dir / scene_name(i));
    ds.scenes.push_back(data::load_scene(ds.dirs.back()));
  }
  return ds;
}

/// The image a pseudo pair should line up with: the clean degraded view when
/// the scene carries one, else the degraded image itself.
inline const ImageTensor& alignment_target(const data::ScenePair& s) {
  return s.clean_degraded ? *s.clean_degraded : s.degraded;
}

inline std::unique_ptr<FlowProvider> make_provider(FlowKind kind, const FlowSettings& fl, const data::ScenePair& s,
                                                   const fs::path& scene_dir, bool backward) {
  switch (kind) {
    case FlowKind::kZero: return std::make_unique<ZeroFlowProvider>();
    case FlowKind::kOracle: return std::make_unique<OracleFlowProvider>(backward ? s.gt_flow_backward : s.gt_flow);
    case FlowKind::kExternal:
      return std::make_unique<ExternalFlowProvider>(scene_dir / (backward ? fl.external_backward : fl.external_forward));
  }
  throw std::logic_error("make_provider: unhandled kind");
}

// ---------------------------------------------------------------------------
// Shared training bits

struct StageResult {
  fs::path checkpoint;
  std::vector<double> losses;
  io::KeyValues metrics;
};

inline Tensor<float> stack(const std::vector<const ImageTensor*>& images) { return to_tensor<float>(images); }

template <typename Step>
std::vector<double> run_loop(const TrainingSettings& t, std::int64_t start, std::vector<double> log, nn::Adam<float>& adam,
                             const Step& step, const std::function<void(std::int64_t, const std::vector<double>&)>& save) {
  for (std::int64_t it = start; it < t.iterations; ++it) {
    adam.set_lr(nn::multistep_lr(t.adam.lr, t.adam.milestones, t.adam.gamma, it));
    log.push_back(step(it));
    if (!std::isfinite(log.back())) throw std::runtime_error("training diverged at iteration " + std::to_string(it + 1));
    if (t.checkpoint_every > 0 && (it + 1) % t.checkpoint_every == 0 && it + 1 < t.iterations) save(it + 1, log);
  }
  return log;
}

inline io::Checkpoint checkpoint_header(const PipelineConfig& cfg, const std::string& stage, std::int64_t iteration,
                                        const std::vector<double>& log) {
  io::Checkpoint ck;
  ck.meta["stage"] = stage;
  ck.meta["iteration"] = std::to_string(iteration);
  ck.meta["config_hash"] = config_hash(cfg);
  ck.meta["loss_log"] = encode_log(log);
  return ck;
}

inline void require_stage(const io::Checkpoint& ck, const std::string& stage, const fs::path& path) {
  if (!ck.meta.contains("stage") || ck.meta.at("stage") != stage) {
    throw std::runtime_error(path.string() + " is not a " + stage + " checkpoint");
  }
}

inline void write_stage_outputs(const fs::path& dir, const PipelineConfig& cfg, const std::vector<double>& log,
                                io::KeyValues& metrics) {
  write_run_config(dir, cfg);
  write_loss_log(dir / "losses.txt", log);
  const auto [first, last] = loss_ends(log);
  metrics["iterations"] = std::to_string(log.size());
  metrics["loss.first"] = io::format_number(log.empty() ? 0 : log.front());
  metrics["loss.last"] = io::format_number(log.empty() ? 0 : log.back());
  metrics["loss.first_window_mean"] = io::format_number(first);
  metrics["loss.last_window_mean"] = io::format_number(last);
  metrics["config_hash"] = config_hash(cfg);
  io::write_key_values(dir / "metrics.txt", metrics);
}

// ---------------------------------------------------------------------------
// Stage 1: DAM

inline dam::DamWeights<float> load_dam(const PipelineConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("DAM checkpoint not found: " + path.string());
  const io::Checkpoint ck = io::load_checkpoint(path);
  require_stage(ck, "dam", path);
  auto w = dam::DamWeights<float>::build(dam_config(cfg), 0);
  get_params(ck, "param.", w.params);
  return w;
}

inline StageResult train_dam(const PipelineConfig& cfg, const std::optional<fs::path>& resume = {}) {
  cfg.validate();
  require_cpu(cfg);
  const Dataset ds = load_dataset(cfg);
  const fs::path dir = stage_dir(cfg, Stage::kDam);
  fs::create_directories(dir);
  const feat::FeatureExtractor<float> phi(feature_config(cfg));
  const auto cx = cx_options(cfg.dam.cx);
  const std::uint64_t seed = stage_seed(cfg, "dam");
  auto w = dam::DamWeights<float>::build(dam_config(cfg), seed);
  nn::Adam<float> adam(w.params, adam_config(cfg.dam.training.adam));
  std::int64_t start = 0;
  std::vector<double> log;
  if (resume) {
    const io::Checkpoint ck = io::load_checkpoint(*resume);
    require_stage(ck, "dam", *resume);
    get_params(ck, "param.", w.params);
    get_adam(ck, "", w.params, adam);
    start = std::stoll(ck.meta.at("iteration"));
    log = decode_log(ck.meta.at("loss_log"));
  }
  auto save = [&](std::int64_t it, const std::vector<double>& l, const fs::path& path) {
    io::Checkpoint ck = checkpoint_header(cfg, "dam", it, l);
    put_params(ck, "param.", w.params);
    put_adam(ck, "", w.params, adam);
    ck.meta["dam_hash"] = params_hash(w.params);
    io::save_checkpoint(path, ck);
  };
  const auto& t = cfg.dam.training;
  log = run_loop(t, start, std::move(log), adam, [&](std::int64_t it) {
    const auto idx = batch_indices(seed, it, ds.train, t.batch_size);
    std::vector<const ImageTensor*> d, r;
    for (int i : idx) {
      d.push_back(&ds.scenes[i].degraded);
      r.push_back(&ds.scenes[i].reference);
    }
    const Var<float> ref(stack(r));
    w.params.zero_grad();
    Var<float> l = loss::dam_loss(dam::dam_forward(w, Var<float>(stack(d)), ref), ref, phi, cx, cfg.dam.cx.taps);
    ag::backward(l);
    adam.step();
    return static_cast<double>(l.item());
  }, [&](std::int64_t it, const std::vector<double>& l) { save(it, l, periodic_checkpoint(dir, it)); });
  StageResult res{final_checkpoint(dir), log, {}};
  save(t.iterations, log, res.checkpoint);
  res.metrics["dam_hash"] = params_hash(w.params);
  write_stage_outputs(dir, cfg, log, res.metrics);
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2: AlignFormer with DAM and flow frozen

inline gam::AlignFormerWeights<float> load_alignformer(const PipelineConfig& cfg, const fs::path& path,
                                                       std::string* dam_hash = nullptr) {
  if (!fs::exists(path)) throw std::runtime_error("AlignFormer checkpoint not found: " + path.string());
  const io::Checkpoint ck = io::load_checkpoint(path);
  require_stage(ck, "alignformer", path);
  auto w = gam::AlignFormerWeights<float>::build(align_config(cfg), 0);
  get_params(ck, "param.", w.params);
  if (dam_hash) *dam_hash = ck.meta.at("dam_hash");
  return w;
}

inline StageResult train_alignformer(const PipelineConfig& cfg, const std::optional<fs::path>& resume = {}) {
  cfg.validate();
  require_cpu(cfg);
  const fs::path dam_path = final_checkpoint(stage_dir(cfg, Stage::kDam));
  const auto dam_w = load_dam(cfg, dam_path);
  const std::string hash_before = params_hash(dam_w.params);
  const Dataset ds = load_dataset(cfg);
  const fs::path dir = stage_dir(cfg, Stage::kAlign);
  fs::create_directories(dir);
  const FlowKind kind = parse_flow_kind(cfg.flow.provider);

  // DAM and the flow provider are fixed, so their outputs are computed once.
  std::vector<ImageTensor> aligned;
  std::vector<FlowField> flows;
  for (int i : ds.train_indices()) {
    const auto& s = ds.scenes[i];
    aligned.push_back(dam::dam_forward(dam_w, s.degraded, s.reference));
    flows.push_back(estimate_flow(*make_provider(kind, cfg.flow, s, ds.dirs[i], false), aligned.back(), s.reference));
  }

  const feat::FeatureExtractor<float> phi(feature_config(cfg));
  const auto cx = cx_options(cfg.alignformer.cx);
  const std::uint64_t seed = stage_seed(cfg, "alignformer");
  auto w = gam::AlignFormerWeights<float>::build(align_config(cfg), seed);
  nn::Adam<float> adam(w.params, adam_config(cfg.alignformer.training.adam));
  std::int64_t start = 0;
  std::vector<double> log;
  if (resume) {
    const io::Checkpoint ck = io::load_checkpoint(*resume);
    require_stage(ck, "alignformer", *resume);
    if (ck.meta.at("dam_hash") != hash_before) throw std::runtime_error("resume checkpoint was trained with another DAM");
    get_params(ck, "param.", w.params);
    get_adam(ck, "", w.params, adam);
    start = std::stoll(ck.meta.at("iteration"));
    log = decode_log(ck.meta.at("loss_log"));
  }
  auto save = [&](std::int64_t it, const std::vector<double>& l, const fs::path& path) {
    io::Checkpoint ck = checkpoint_header(cfg, "alignformer", it, l);
    put_params(ck, "param.", w.params);
    put_adam(ck, "", w.params, adam);
    ck.meta["dam_hash"] = hash_before;
    ck.meta["flow_provider"] = to_string(kind);
    io::save_checkpoint(path, ck);
  };
  const auto& t = cfg.alignformer.training;
  log = run_loop(t, start, std::move(log), adam, [&](std::int64_t it) {
    const auto idx = batch_indices(seed, it, ds.train, t.batch_size);
    std::vector<const ImageTensor*> a, r;
    std::vector<FlowField> f;
    for (int i : idx) {
      a.push_back(&aligned[i]);
      r.push_back(&ds.scenes[i].reference);
      f.push_back(flows[i]);
    }
    const Var<float> ref(stack(r));
    w.params.zero_grad();
    Var<float> l =
        loss::align_loss(gam::alignformer_core(w, Var<float>(stack(a)), ref, f), ref, phi, cx, cfg.alignformer.cx.taps);
    ag::backward(l);
    adam.step();
    return static_cast<double>(l.item());
  }, [&](std::int64_t it, const std::vector<double>& l) { save(it, l, periodic_checkpoint(dir, it)); });
  StageResult res{final_checkpoint(dir), log, {}};
  save(t.iterations, log, res.checkpoint);
  const std::string hash_after = params_hash(dam_w.params);
  const std::string hash_file = params_hash(load_dam(cfg, dam_path).params);
  res.metrics["dam_hash.before"] = hash_before;
  res.metrics["dam_hash.after"] = hash_after;
  res.metrics["dam_hash.file_after"] = hash_file;
  res.metrics["flow_provider"] = to_string(kind);
  write_stage_outputs(dir, cfg, log, res.metrics);
  if (hash_after != hash_before || hash_file != hash_before) {
    throw std::logic_error("train_alignformer: frozen DAM parameters changed");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Stage 3: pseudo-pair generation

struct PseudoPair {
  ImageTensor pseudo;
  ImageTensor aligned;
  BinaryMask mask;
  FlowField forward, backward;
};

inline PseudoPair make_pseudo_pair(const gam::AlignFormerWeights<float>& w, const dam::DamWeights<float>& dam_w,
                                   const data::ScenePair& s, const fs::path& scene_dir, FlowKind kind,
                                   const FlowSettings& fl) {
  const auto fw = make_provider(kind, fl, s, scene_dir, false);
  const auto bw = make_provider(kind, fl, s, scene_dir, true);
  gam::AlignFormerOutput out = gam::alignformer_forward(w, dam_w, s.degraded, s.reference, *fw);
  PseudoPair p;
  p.backward = estimate_flow(*bw, s.reference, out.aligned);
  p.mask = occlusion_mask(out.flow, p.backward, {fl.occ_alpha, fl.occ_beta});
  p.pseudo = out.pseudo.clamped();
  p.aligned = std::move(out.aligned);
  p.forward = std::move(out.flow);
  return p;
}

struct PseudoStore {
  std::vector<ImageTensor> pseudo;
  std::vector<BinaryMask> masks;
  std::vector<fs::path> dirs;
};

inline StageResult gen_pseudo(const PipelineConfig& cfg) {
  cfg.validate();
  require_cpu(cfg);
  const auto dam_w = load_dam(cfg, final_checkpoint(stage_dir(cfg, Stage::kDam)));
  std::string trained_with;
  const fs::path align_path = final_checkpoint(stage_dir(cfg, Stage::kAlign));
  const auto w = load_alignformer(cfg, align_path, &trained_with);
  const std::string dam_hash = params_hash(dam_w.params);
  if (trained_with != dam_hash) throw std::runtime_error("gen_pseudo: AlignFormer was trained against a different DAM");
  const Dataset ds = load_dataset(cfg);
  const fs::path dir = stage_dir(cfg, Stage::kPseudo);
  fs::create_directories(dir);
  const FlowKind kind = parse_flow_kind(cfg.flow.provider);
  const std::string align_hash = params_hash(w.params);
  StageResult res;
  double visible = 0;
  for (int i = 0; i < ds.size(); ++i) {
    const PseudoPair p = make_pseudo_pair(w, dam_w, ds.scenes[i], ds.dirs[i], kind, cfg.flow);
    const fs::path sd = dir / scene_name(i);
    fs::create_directories(sd);
    io::save_image(sd / "pseudo.png", p.pseudo);
    io::save_image(sd / "aligned.png", p.aligned);
    io::save_mask(sd / "mask.png", p.mask);
    write_flow(sd / "flow_fw.flo", p.forward);
    write_flow(sd / "flow_bw.flo", p.backward);
    io::write_key_values(sd / "provenance.txt", {{"source", fs::absolute(ds.dirs[i]).string()},
                                                 {"scene_seed", std::to_string(ds.scenes[i].seed)},
                                                 {"split", i < ds.train ? "train" : "test"},
                                                 {"flow_provider", to_string(kind)},
                                                 {"occ_alpha", io::format_number(cfg.flow.occ_alpha)},
                                                 {"occ_beta", io::format_number(cfg.flow.occ_beta)},
                                                 {"dam_hash", dam_hash},
                                                 {"alignformer_hash", align_hash},
                                                 {"config_hash", config_hash(cfg)}});
    visible += static_cast<double>(p.mask.count()) / (p.mask.height() * p.mask.width());
  }
  res.metrics["pairs"] = std::to_string(ds.size());
  res.metrics["mask.mean_visible"] = io::format_number(visible / ds.size());
  res.metrics["dam_hash"] = dam_hash;
  res.metrics["alignformer_hash"] = align_hash;
  res.metrics["config_hash"] = config_hash(cfg);
  write_run_config(dir, cfg);
  io::write_key_values(dir / "metrics.txt", res.metrics);
  return res;
}

inline PseudoStore load_pseudo(const PipelineConfig& cfg, int expected) {
  const fs::path dir = stage_dir(cfg, Stage::kPseudo);
  if (!fs::exists(dir / "metrics.txt")) throw std::runtime_error("no pseudo pairs at " + dir.string() + "; run gen-pseudo first");
  const int n = std::stoi(io::read_key_values(dir / "metrics.txt").at("pairs"));
  if (n != expected) throw std::runtime_error("pseudo store holds " + std::to_string(n) + " pairs, dataset has " + std::to_string(expected));
  PseudoStore st;
  for (int i = 0; i < n; ++i) {
    st.dirs.push_back(dir / scene_name(i));
    st.pseudo.push_back(io::load_image(st.dirs.back() / "pseudo.png"));
    st.masks.push_back(io::load_mask(st.dirs.back() / "mask.png"));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Stage 4: restoration network

struct RestorationModel {
  ppm::PpmUnetWeights<float> generator;
  std::optional<loss::DiscriminatorWeights<float>> discriminator;
};

inline loss::DiscriminatorConfig disc_config(const PipelineConfig& c) {
  loss::DiscriminatorConfig d;
  d.widths = c.restoration.network.discriminator_widths;
  return d;
}

inline ppm::PpmUnetWeights<float> load_restorer(const PipelineConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("restoration checkpoint not found: " + path.string());
  const io::Checkpoint ck = io::load_checkpoint(path);
  require_stage(ck, "restoration", path);
  auto g = ppm::PpmUnetWeights<float>::build(restore_config(cfg), 0);
  get_params(ck, "g.param.", g.params);
  return g;
}

namespace detail {

inline ImageTensor flip(const ImageTensor& im, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return im;
  ImageTensor out(im.height(), im.width(), im.channels());
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x)
      for (int c = 0; c < im.channels(); ++c) {
        out.at(y, x, c) = im.at(vertical ? im.height() - 1 - y : y, horizontal ? im.width() - 1 - x : x, c);
      }
  return out;
}

inline BinaryMask flip(const BinaryMask& m, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return m;
  BinaryMask out(m.height(), m.width(), 0);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      out.at(y, x) = m.at(vertical ? m.height() - 1 - y : y, horizontal ? m.width() - 1 - x : x);
  return out;
}

}  // namespace detail

/// mean |M (a - b)| over all elements, M broadcast over channels.
inline double masked_l1(const ImageTensor& a, const ImageTensor& b, const BinaryMask& m) {
  double s = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (m.at(y, x))
        for (int c = 0; c < a.channels(); ++c) s += std::abs(static_cast<double>(a.at(y, x, c)) - b.at(y, x, c));
  return s / static_cast<double>(a.size());
}

inline double train_masked_l1(const ppm::PpmUnetWeights<float>& g, const Dataset& ds, const PseudoStore& st) {
  double s = 0;
  for (int i : ds.train_indices()) s += masked_l1(ppm::restore(g, ds.scenes[i].degraded), st.pseudo[i], st.masks[i]);
  return s / ds.train;
}

struct RestorationLog {
  std::vector<double> total, l1, perceptual, gan, discriminator;
};

inline StageResult train_restoration(const PipelineConfig& cfg, const std::optional<fs::path>& resume = {},
                                     RestorationLog* components = nullptr) {
  cfg.validate();
  require_cpu(cfg);
  const Dataset ds = load_dataset(cfg);
  const PseudoStore st = load_pseudo(cfg, ds.size());
  const fs::path dir = stage_dir(cfg, Stage::kRestore);
  fs::create_directories(dir);
  const feat::FeatureExtractor<float> phi(feature_config(cfg));
  const std::uint64_t seed = stage_seed(cfg, "restoration");
  auto g = ppm::PpmUnetWeights<float>::build(restore_config(cfg), seed);
  std::optional<loss::DiscriminatorWeights<float>> d;
  if (cfg.restoration.network.discriminator) d = loss::DiscriminatorWeights<float>::build(disc_config(cfg), splitmix64(seed));
  const auto& t = cfg.restoration.training;
  nn::Adam<float> adam_g(g.params, adam_config(t.adam));
  std::optional<nn::Adam<float>> adam_d;
  if (d) adam_d.emplace(d->params, adam_config(t.adam));
  std::int64_t start = 0;
  std::vector<double> log;
  if (resume) {
    const io::Checkpoint ck = io::load_checkpoint(*resume);
    require_stage(ck, "restoration", *resume);
    get_params(ck, "g.param.", g.params);
    get_adam(ck, "g.", g.params, adam_g);
    if (d) {
      get_params(ck, "d.param.", d->params);
      get_adam(ck, "d.", d->params, *adam_d);
    }
    start = std::stoll(ck.meta.at("iteration"));
    log = decode_log(ck.meta.at("loss_log"));
  }
  auto save = [&](std::int64_t it, const std::vector<double>& l, const fs::path& path) {
    io::Checkpoint ck = checkpoint_header(cfg, "restoration", it, l);
    put_params(ck, "g.param.", g.params);
    put_adam(ck, "g.", g.params, adam_g);
    if (d) {
      put_params(ck, "d.param.", d->params);
      put_adam(ck, "d.", d->params, *adam_d);
    }
    io::save_checkpoint(path, ck);
  };
  const loss::LossWeights weights{cfg.restoration.loss.lambda_1, cfg.restoration.loss.lambda_vgg,
                                  cfg.restoration.loss.lambda_gan};
  const bool augment = cfg.restoration.loss.flip_augmentation;
  log = run_loop(t, start, std::move(log), adam_g, [&](std::int64_t it) {
    if (adam_d) adam_d->set_lr(adam_g.lr());
    const auto idx = batch_indices(seed, it, ds.train, t.batch_size);
    std::mt19937_64 rng(splitmix64(seed + 0x51ed27u + static_cast<std::uint64_t>(it)));
    std::vector<ImageTensor> xs, ps;
    std::vector<BinaryMask> ms;
    for (int i : idx) {
      const bool h = augment && (rng() & 1u), v = augment && (rng() & 1u);
      xs.push_back(detail::flip(ds.scenes[i].degraded, h, v));
      ps.push_back(detail::flip(st.pseudo[i], h, v));
      ms.push_back(detail::flip(st.masks[i], h, v));
    }
    std::vector<const ImageTensor*> xp, pp;
    std::vector<const BinaryMask*> mp;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      xp.push_back(&xs[k]);
      pp.push_back(&ps[k]);
      mp.push_back(&ms[k]);
    }
    const Var<float> x(stack(xp)), p(stack(pp)), m(mask_tensor<float>(mp, 3));
    g.params.zero_grad();
    const Var<float> out = ppm::ppmunet_forward(g, x);
    auto r = loss::restoration_loss(out, p, x, m, phi, d ? &*d : nullptr, weights);
    ag::backward(r.total);
    adam_g.step();
    double ld = 0;
    if (d) {
      d->params.zero_grad();
      Var<float> l = loss::discriminator_loss(*d, x, p, out);
      ag::backward(l);
      adam_d->step();
      ld = l.item();
    }
    if (components) {
      components->total.push_back(r.total.item());
      components->l1.push_back(r.l1);
      components->perceptual.push_back(r.perceptual);
      components->gan.push_back(r.gan);
      components->discriminator.push_back(ld);
    }
    return static_cast<double>(r.total.item());
  }, [&](std::int64_t it, const std::vector<double>& l) { save(it, l, periodic_checkpoint(dir, it)); });
  StageResult res{final_checkpoint(dir), log, {}};
  save(t.iterations, log, res.checkpoint);
  res.metrics["train.masked_l1"] = io::format_number(train_masked_l1(g, ds, st));
  write_stage_outputs(dir, cfg, log, res.metrics);
  return res;
}

// ---------------------------------------------------------------------------
// Stage 5: evaluation

inline std::vector<double> pooled_pck(const std::vector<Correspondence>& pairs, const std::vector<double>& alphas, int h,
                                      int w) {
  std::vector<double> out;
  for (double a : alphas) out.push_back(pairs.empty() ? 0.0 : metrics::pck(pairs, a, h, w));
  return out;
}

/// Matches every image against the scene's alignment target and pools the pairs.
inline std::vector<Correspondence> match_all(const std::vector<ImageTensor>& images, const Dataset& ds,
                                             const std::vector<int>& which, const metrics::MatcherConfig& m) {
  std::vector<Correspondence> pooled;
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto c = metrics::match_zncc(images[k], alignment_target(ds.scenes[which[k]]), m);
    pooled.insert(pooled.end(), c.pairs.begin(), c.pairs.end());
  }
  return pooled;
}

struct MtfTriple {
  double degraded = 0, restored = 0, reference = 0;
};

/// Synthetic chart analog: a slanted edge seen sharp (reference) and through
/// the scene degradation with mid-range blur and colour (degraded).
inline MtfTriple chart_mtf(const ppm::PpmUnetWeights<float>& g, const DatasetSettings& ds) {
  const int size = std::max(96, ds.patch_size);
  const ImageTensor reference = data::slanted_edge_chart(size, size, 5.0, 0.2, 0.8, 0.5);
  data::DegradationSpec spec;
  spec.out_height = size;
  spec.out_width = size;
  const data::SceneRandomization r = scene_randomization(ds);
  spec.blur_sigma = 0.5 * (r.blur_min + r.blur_max);
  const double gain = 0.5 * (r.gain_min + r.gain_max);
  spec.color_matrix = {gain, 0, 0, 0, gain, 0, 0, 0, gain};
  const ImageTensor degraded = data::generate_scene(spec, reference, 7).degraded;
  const ImageTensor restored = ppm::restore(g, degraded);
  metrics::MtfOptions o;
  o.orientation = metrics::EdgeOrientation::kVertical;
  return {metrics::mtf_slanted_edge(degraded, o).mtf50, metrics::mtf_slanted_edge(restored, o).mtf50,
          metrics::mtf_slanted_edge(reference, o).mtf50};
}

inline void put_pck(io::KeyValues& kv, const std::string& prefix, const std::vector<double>& alphas,
                    const std::vector<double>& values, std::size_t count) {
  for (std::size_t k = 0; k < alphas.size(); ++k) kv[prefix + "@" + alpha_key(alphas[k])] = io::format_number(values[k]);
  kv[prefix + ".count"] = std::to_string(count);
}

inline io::KeyValues evaluate(const PipelineConfig& cfg) {
  cfg.validate();
  require_cpu(cfg);
  const Dataset ds = load_dataset(cfg);
  const PseudoStore st = load_pseudo(cfg, ds.size());
  const auto g = load_restorer(cfg, final_checkpoint(stage_dir(cfg, Stage::kRestore)));
  const fs::path dir = stage_dir(cfg, Stage::kEval);
  fs::create_directories(dir);
  const auto& e = cfg.evaluation;
  const int H = cfg.dataset.patch_size, W = cfg.dataset.patch_size;
  io::KeyValues kv;

  // Restoration quality on the held-out split.
  struct Acc {
    double psnr = 0, ssim = 0, psnr_clean = 0, cd_l = 0, cd_a = 0, cd_b = 0;
  } restored_acc, identity_acc, pseudo_acc;
  const auto test = ds.test_indices();
  bool have_clean = true;
  for (int i : test) {
    const auto& s = ds.scenes[i];
    const ImageTensor out = ppm::restore(g, s.degraded);
    auto add = [&](Acc& a, const ImageTensor& x) {
      a.psnr += metrics::psnr(x, st.pseudo[i]);
      a.ssim += metrics::ssim(x, st.pseudo[i]);
      if (s.clean_degraded) a.psnr_clean += metrics::psnr(x, *s.clean_degraded);
      const auto cd = metrics::color_distribution(x, s.reference);
      a.cd_l += cd.l;
      a.cd_a += cd.a;
      a.cd_b += cd.b;
    };
    add(restored_acc, out);
    add(identity_acc, s.degraded);
    add(pseudo_acc, st.pseudo[i]);
    have_clean = have_clean && s.clean_degraded.has_value();
  }
  const double nt = static_cast<double>(test.size());
  for (const auto& [name, a] : {std::pair<std::string, Acc>{"restored", restored_acc}, {"identity", identity_acc},
                                {"pseudo", pseudo_acc}}) {
    if (name != "pseudo") {
      kv["test." + name + ".psnr"] = io::format_number(a.psnr / nt);
      kv["test." + name + ".ssim"] = io::format_number(a.ssim / nt);
    }
    if (have_clean) kv["test." + name + ".psnr_clean"] = io::format_number(a.psnr_clean / nt);
    kv["test." + name + ".cd_l"] = io::format_number(a.cd_l / nt);
    kv["test." + name + ".cd_a"] = io::format_number(a.cd_a / nt);
    kv["test." + name + ".cd_b"] = io::format_number(a.cd_b / nt);
  }
  kv["test.scenes"] = std::to_string(test.size());
  kv["train.masked_l1"] = io::format_number(train_masked_l1(g, ds, st));

  // Alignment of reference and pseudo images against the degraded geometry.
  std::vector<int> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto mcfg = matcher_config(e);
  std::vector<ImageTensor> refs;
  for (const auto& s : ds.scenes) refs.push_back(s.reference);
  const auto ref_pairs = match_all(refs, ds, all, mcfg);
  const auto pseudo_pairs = match_all(st.pseudo, ds, all, mcfg);
  put_pck(kv, "pck.reference", e.pck_alpha, pooled_pck(ref_pairs, e.pck_alpha, H, W), ref_pairs.size());
  put_pck(kv, "pck.pseudo", e.pck_alpha, pooled_pck(pseudo_pairs, e.pck_alpha, H, W), pseudo_pairs.size());
  std::ostringstream alphas;
  for (std::size_t k = 0; k < e.pck_alpha.size(); ++k) alphas << (k ? " " : "") << alpha_key(e.pck_alpha[k]);
  kv["pck.alphas"] = alphas.str();

  // Ablations regenerate pseudo images in memory with one setting changed.
  if (!e.ablation_radius.empty() || !e.ablation_flow.empty()) {
    const auto dam_w = load_dam(cfg, final_checkpoint(stage_dir(cfg, Stage::kDam)));
    auto w = load_alignformer(cfg, final_checkpoint(stage_dir(cfg, Stage::kAlign)));
    auto row = [&](const std::string& prefix, FlowKind kind) {
      std::vector<ImageTensor> images;
      double psnr_clean = 0;
      for (int i : all) {
        images.push_back(make_pseudo_pair(w, dam_w, ds.scenes[i], ds.dirs[i], kind, cfg.flow).pseudo);
        psnr_clean += metrics::psnr(images.back(), alignment_target(ds.scenes[i]));
      }
      const auto pairs = match_all(images, ds, all, mcfg);
      put_pck(kv, prefix + ".pck", e.pck_alpha, pooled_pck(pairs, e.pck_alpha, H, W), pairs.size());
      kv[prefix + ".psnr_target"] = io::format_number(psnr_clean / ds.size());
    };
    const FlowKind configured = parse_flow_kind(cfg.flow.provider);
    std::ostringstream rows;
    for (std::size_t k = 0; k < e.ablation_radius.size(); ++k) {
      w.config.radius = e.ablation_radius[k];
      row("ablation.radius." + std::to_string(e.ablation_radius[k]), configured);
      rows << (k ? " " : "") << e.ablation_radius[k];
    }
    w.config.radius = cfg.alignformer.network.radius;
    if (!e.ablation_radius.empty()) kv["ablation.radius.rows"] = rows.str();
    std::ostringstream frows;
    for (std::size_t k = 0; k < e.ablation_flow.size(); ++k) {
      row("ablation.flow." + e.ablation_flow[k], parse_flow_kind(e.ablation_flow[k]));
      frows << (k ? " " : "") << e.ablation_flow[k];
    }
    if (!e.ablation_flow.empty()) kv["ablation.flow.rows"] = frows.str();
  }

  if (e.mtf) {
    const MtfTriple m = chart_mtf(g, cfg.dataset);
    kv["mtf50.degraded"] = io::format_number(m.degraded);
    kv["mtf50.restored"] = io::format_number(m.restored);
    kv["mtf50.reference"] = io::format_number(m.reference);
  }
  kv["config_hash"] = config_hash(cfg);
  write_run_config(dir, cfg);
  io::write_key_values(dir / "metrics.txt", kv);
  return kv;
}

// ---------------------------------------------------------------------------
// Report rendering

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline std::string cell(const io::KeyValues& kv, const std::string& key, int precision = 2) {
  const auto it = kv.find(key);
  if (it == kv.end()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << std::stod(it->second);
  return os.str();
}

}  // namespace detail

/// Plain-text tables from an evaluation metrics file.
inline std::string render_report(const io::KeyValues& kv) {
  std::ostringstream os;
  if (kv.contains("test.restored.psnr")) {
    os << "Restoration (held-out scenes: " << kv.at("test.scenes") << ")\n";
    os << "  input      PSNR(pseudo)  SSIM(pseudo)  PSNR(clean)  CD-L   CD-a   CD-b\n";
    for (const std::string name : {"identity", "restored"}) {
      os << "  " << std::left << std::setw(10) << name << std::right << std::setw(13)
         << detail::cell(kv, "test." + name + ".psnr") << std::setw(14) << detail::cell(kv, "test." + name + ".ssim", 4)
         << std::setw(13) << detail::cell(kv, "test." + name + ".psnr_clean") << std::setw(7)
         << detail::cell(kv, "test." + name + ".cd_l", 3) << std::setw(7) << detail::cell(kv, "test." + name + ".cd_a", 3)
         << std::setw(7) << detail::cell(kv, "test." + name + ".cd_b", 3) << '\n';
    }
  }
  const auto alphas = kv.contains("pck.alphas") ? detail::split_words(kv.at("pck.alphas")) : std::vector<std::string>{};
  auto pck_header = [&](const std::string& first) {
    os << "  " << std::left << std::setw(16) << first << std::right;
    for (const auto& a : alphas) os << std::setw(12) << ("PCK@" + a);
    os << '\n';
  };
  auto pck_row = [&](const std::string& label, const std::string& prefix) {
    os << "  " << std::left << std::setw(16) << label << std::right;
    for (const auto& a : alphas) os << std::setw(12) << detail::cell(kv, prefix + "@" + a);
    os << '\n';
  };
  if (!alphas.empty()) {
    os << "Alignment to the degraded view (PCK, %)\n";
    pck_header("pair");
    pck_row("reference", "pck.reference");
    pck_row("pseudo", "pck.pseudo");
  }
  if (kv.contains("ablation.radius.rows")) {
    os << "Ablation: attention radius\n";
    pck_header("radius");
    for (const auto& r : detail::split_words(kv.at("ablation.radius.rows"))) pck_row(r, "ablation.radius." + r + ".pck");
  }
  if (kv.contains("ablation.flow.rows")) {
    os << "Ablation: flow provider\n";
    pck_header("flow");
    for (const auto& f : detail::split_words(kv.at("ablation.flow.rows"))) pck_row(f, "ablation.flow." + f + ".pck");
  }
  if (kv.contains("mtf50.reference")) {
    os << "MTF50 on the slanted-edge chart (cycles/pixel)\n";
    for (const std::string name : {"degraded", "restored", "reference"}) {
      os << "  " << std::left << std::setw(10) << name << std::right << std::setw(10)
         << detail::cell(kv, "mtf50." + name, 4) << '\n';
    }
  }
  return os.str();
}

/// Row count of a rendered ablation table, for callers that check structure.
inline std::size_t ablation_rows(const io::KeyValues& kv, const std::string& which) {
  const auto it = kv.find("ablation." + which + ".rows");
  return it == kv.end() ? 0 : detail::split_words(it->second).size();
}

}  // namespace af::pipe
