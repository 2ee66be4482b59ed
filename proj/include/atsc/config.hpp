#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "atsc/checkpoint.hpp"
#include "atsc/trainer.hpp"

// JSON configuration files. Every file carries "schema": 1; unknown keys are rejected so that a
// misspelled field never silently falls back to its default.

namespace atsc {

inline constexpr int kConfigSchema = 1;

namespace cfg {

template <class T>
T get(const json& j, const std::string& key, const std::string& ctx, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

template <class T>
T require(const json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError(ctx + key + ": required");
  return get<T>(j, key, ctx, T{});
}

inline void check_schema(const json& j, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": top level must be a JSON object");
  if (!j.contains("schema")) throw ConfigError("schema: required (expected " + std::to_string(kConfigSchema) + ")");
  const int v = get<int>(j, "schema", "", 0);
  if (v != kConfigSchema)
    throw ConfigError("schema: unsupported version " + std::to_string(v) + " (expected " +
                      std::to_string(kConfigSchema) + ")");
}

inline json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

}  // namespace cfg

inline DatasetSpec parse_dataset(const json& j, const std::string& ctx = "dataset") {
  const std::string p = ctx + ".";
  DatasetSpec d;
  const auto kind = cfg::get<std::string>(j, "kind", p, "synthetic");
  if (kind == "synthetic") {
    require_known_keys(j, {"kind", "num_classes", "seed", "dims", "train_size", "test_size", "separation", "noise",
                           "modes_per_class"},
                       ctx);
    d.kind = DatasetSpec::Kind::synthetic;
    d.dims = cfg::get<std::size_t>(j, "dims", p, d.dims);
    d.train_size = cfg::get<std::size_t>(j, "train_size", p, d.train_size);
    d.test_size = cfg::get<std::size_t>(j, "test_size", p, d.test_size);
    d.separation = cfg::get<double>(j, "separation", p, d.separation);
    d.noise = cfg::get<double>(j, "noise", p, d.noise);
    d.modes_per_class = cfg::get<std::size_t>(j, "modes_per_class", p, d.modes_per_class);
  } else if (kind == "image_folder") {
    require_known_keys(j, {"kind", "num_classes", "seed", "path", "image_size", "channels", "augment", "flip", "pad"},
                       ctx);
    d.kind = DatasetSpec::Kind::image_folder;
    d.path = cfg::require<std::string>(j, "path", p);
    if (d.path.empty()) throw ConfigError(p + "path: must not be empty");
    const auto size = cfg::get<std::vector<std::size_t>>(j, "image_size", p, {d.image_h, d.image_w});
    if (size.size() != 2) throw ConfigError(p + "image_size: expected [H, W]");
    d.image_h = size[0];
    d.image_w = size[1];
    d.channels = cfg::get<std::size_t>(j, "channels", p, d.channels);
    d.augment = cfg::get<bool>(j, "augment", p, d.augment);
    d.flip = cfg::get<bool>(j, "flip", p, d.flip);
    d.pad = cfg::get<std::size_t>(j, "pad", p, d.pad);
  } else {
    throw ConfigError(p + "kind: expected 'synthetic' or 'image_folder', got '" + kind + "'");
  }
  d.num_classes = cfg::get<std::size_t>(j, "num_classes", p, d.num_classes);
  d.seed = cfg::get<std::uint64_t>(j, "seed", p, d.seed);
  d.validate();
  return d;
}

inline json dataset_to_json(const DatasetSpec& d) {
  if (d.kind == DatasetSpec::Kind::synthetic)
    return {{"kind", "synthetic"},    {"num_classes", d.num_classes}, {"seed", d.seed},
            {"dims", d.dims},         {"train_size", d.train_size},   {"test_size", d.test_size},
            {"separation", d.separation}, {"noise", d.noise},         {"modes_per_class", d.modes_per_class}};
  return {{"kind", "image_folder"}, {"num_classes", d.num_classes},       {"seed", d.seed},
          {"path", d.path},         {"image_size", {d.image_h, d.image_w}}, {"channels", d.channels},
          {"augment", d.augment},   {"flip", d.flip},                     {"pad", d.pad}};
}

/// Encoder spec whose "input" defaults to the dataset's sample shape.
inline EncoderSpec parse_encoder(const json& j, const DatasetSpec& data, const std::string& ctx) {
  json filled = j;
  if (filled.is_object() && !filled.contains("input")) {
    const auto in = data.input_shape();
    filled["input"] = {in[0], in[1], in[2]};
  }
  auto spec = encoder_spec_from_json(filled, ctx);
  const auto in = data.input_shape();
  if (spec.in_h != in[0] || spec.in_w != in[1] || spec.in_ch != in[2])
    throw ConfigError(ctx + ".input: (" + std::to_string(spec.in_h) + "," + std::to_string(spec.in_w) + "," +
                      std::to_string(spec.in_ch) + ") does not match the dataset sample shape (" +
                      std::to_string(in[0]) + "," + std::to_string(in[1]) + "," + std::to_string(in[2]) + ")");
  return spec;
}

inline OptimConfig parse_optim(const json& j, const std::string& ctx = "optim") {
  require_known_keys(j, {"lr", "momentum", "weight_decay", "milestones", "decay_factor", "epochs", "batch_size"}, ctx);
  const std::string p = ctx + ".";
  OptimConfig o;
  o.base_lr = cfg::get<double>(j, "lr", p, o.base_lr);
  o.momentum = cfg::get<double>(j, "momentum", p, o.momentum);
  o.weight_decay = cfg::get<double>(j, "weight_decay", p, o.weight_decay);
  o.milestones = cfg::get<std::vector<int>>(j, "milestones", p, o.milestones);
  o.decay_factor = cfg::get<double>(j, "decay_factor", p, o.decay_factor);
  o.epochs = cfg::get<int>(j, "epochs", p, o.epochs);
  o.batch_size = cfg::get<int>(j, "batch_size", p, o.batch_size);
  o.validate();
  return o;
}

inline json optim_to_json(const OptimConfig& o) {
  return {{"lr", o.base_lr},           {"momentum", o.momentum},         {"weight_decay", o.weight_decay},
          {"milestones", o.milestones}, {"decay_factor", o.decay_factor}, {"epochs", o.epochs},
          {"batch_size", o.batch_size}};
}

inline RunConfig parse_run_config(const json& j) {
  cfg::check_schema(j, "train config");
  require_known_keys(j, {"schema", "mode", "seed", "alpha", "reduction_factor", "dataset", "teachers", "student", "optim",
                         "out"},
                     "config");
  RunConfig c;
  c.mode = parse_mode(cfg::require<std::string>(j, "mode", ""));
  c.seed = cfg::get<std::uint64_t>(j, "seed", "", c.seed);
  c.alpha_explicit = j.contains("alpha");
  c.alpha = cfg::get<double>(j, "alpha", "", c.alpha);
  c.reduction_factor = cfg::get<std::size_t>(j, "reduction_factor", "", c.reduction_factor);
  c.out_dir = cfg::get<std::string>(j, "out", "", "");
  c.dataset = parse_dataset(j.contains("dataset") ? j.at("dataset") : json::object());
  c.optim = parse_optim(j.contains("optim") ? j.at("optim") : json::object());
  if (!j.contains("student")) throw ConfigError("student: required");
  c.student = parse_encoder(j.at("student"), c.dataset, "student");

  if (j.contains("teachers")) {
    const auto& ts = j.at("teachers");
    if (!ts.is_array()) throw ConfigError("teachers: expected an array");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto ctx = "teachers[" + std::to_string(i) + "]";
      require_known_keys(ts[i], {"checkpoint", "spec"}, ctx);
      TeacherRef ref;
      ref.checkpoint = cfg::get<std::string>(ts[i], "checkpoint", ctx + ".", "");
      if (ts[i].contains("spec")) ref.spec = parse_encoder(ts[i].at("spec"), c.dataset, ctx + ".spec");
      c.teachers.push_back(std::move(ref));
    }
  }
  if (c.mode == TrainMode::STANDALONE_STUDENT && !c.teachers.empty())
    warn("mode STANDALONE_STUDENT ignores the configured teachers");
  if (c.alpha_explicit && !uses_alpha(c.mode))
    warn("alpha is ignored in mode " + std::string(to_string(c.mode)) + " (no anchor penalty)");
  c.validate();
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  json teachers = json::array();
  for (const auto& t : c.teachers) {
    json e = json::object();
    if (!t.checkpoint.empty()) e["checkpoint"] = t.checkpoint;
    if (t.spec) e["spec"] = encoder_spec_to_json(*t.spec);
    teachers.push_back(e);
  }
  json j{{"schema", kConfigSchema},
         {"mode", to_string(c.mode)},
         {"seed", c.seed},
         {"reduction_factor", c.reduction_factor},
         {"dataset", dataset_to_json(c.dataset)},
         {"student", encoder_spec_to_json(c.student)},
         {"optim", optim_to_json(c.optim)}};
  if (c.alpha_explicit || uses_alpha(c.mode)) j["alpha"] = c.alpha;
  if (!teachers.empty()) j["teachers"] = teachers;
  return j;
}

inline PretrainConfig parse_pretrain_config(const json& j) {
  cfg::check_schema(j, "pretrain config");
  require_known_keys(j, {"schema", "seed", "dataset", "teacher", "optim", "out"}, "config");
  PretrainConfig c;
  c.seed = cfg::get<std::uint64_t>(j, "seed", "", c.seed);
  c.out_dir = cfg::get<std::string>(j, "out", "", "");
  if (!j.contains("dataset")) throw ConfigError("dataset: required");
  c.dataset = parse_dataset(j.at("dataset"));
  c.optim = parse_optim(j.contains("optim") ? j.at("optim") : json::object());
  if (!j.contains("teacher")) throw ConfigError("teacher: required");
  c.model = parse_encoder(j.at("teacher"), c.dataset, "teacher");
  c.validate();
  return c;
}

struct SweepSpec {
  enum class Param { alpha, reduction_factor };

  RunConfig base;
  Param param = Param::alpha;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{0};
  int parallel = 1;
  std::string out_dir;

  void validate() const {
    if (values.empty()) throw ConfigError("values: grid must be non-empty");
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (parallel < 1) throw ConfigError("parallel: must be >= 1");
    for (double v : values) {
      if (param == Param::alpha && !(v >= 0.0)) throw ConfigError("values: alpha must be >= 0");
      if (param == Param::reduction_factor && (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v))))
        throw ConfigError("values: reduction_factor must be a positive integer");
    }
  }
};

inline const char* to_string(SweepSpec::Param p) {
  return p == SweepSpec::Param::alpha ? "alpha" : "reduction_factor";
}

/// Applies one grid value to a copy of the base config.
inline RunConfig sweep_cell_config(const SweepSpec& s, double value, std::uint64_t seed) {
  RunConfig c = s.base;
  c.seed = seed;
  if (s.param == SweepSpec::Param::alpha) {
    c.alpha = value;
    c.alpha_explicit = true;
  } else {
    c.reduction_factor = static_cast<std::size_t>(value);
  }
  c.validate();
  return c;
}

/// {"schema":1, "base": {...train config...}, "param": "alpha", "values": [...], "seeds": [...] | N,
///  "parallel": N}
inline SweepSpec parse_sweep_config(const json& j) {
  cfg::check_schema(j, "sweep config");
  require_known_keys(j, {"schema", "base", "param", "values", "seeds", "parallel", "out"}, "config");
  SweepSpec s;
  if (!j.contains("base")) throw ConfigError("base: required");
  json base = j.at("base");
  if (base.is_object() && !base.contains("schema")) base["schema"] = kConfigSchema;
  try {
    s.base = parse_run_config(base);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("base.") + e.what());
  }
  const auto param = cfg::require<std::string>(j, "param", "");
  if (param == "alpha")
    s.param = SweepSpec::Param::alpha;
  else if (param == "reduction_factor")
    s.param = SweepSpec::Param::reduction_factor;
  else
    throw ConfigError("param: expected 'alpha' or 'reduction_factor', got '" + param + "'");
  s.values = cfg::require<std::vector<double>>(j, "values", "");
  if (j.contains("seeds")) {
    const auto& sd = j.at("seeds");
    if (sd.is_number_integer()) {
      const auto n = sd.get<long long>();
      if (n < 1) throw ConfigError("seeds: must be >= 1");
      s.seeds.clear();
      for (long long i = 0; i < n; ++i) s.seeds.push_back(static_cast<std::uint64_t>(i));
    } else {
      s.seeds = cfg::get<std::vector<std::uint64_t>>(j, "seeds", "", {});
    }
  }
  s.parallel = cfg::get<int>(j, "parallel", "", 1);
  s.out_dir = cfg::get<std::string>(j, "out", "", "");
  s.validate();
  return s;
}

}  // namespace atsc
