#pragma once

// JSON run configuration shared by `flowguide transfer` and `flowguide sample`.
//
// {
//   "shape": "query.slat",
//   "field": {"kind": "zero"} | {"kind": "gaussian", "mean": [...], "std": 1.0}
//          | {"kind": "mixture", "components": [{"mean": [...], "std": 1.0}, ...]}
//          | {"kind": "trained", "params": "params.json"},
//   "condition": [...],
//   "sampler": {"steps": 300, "seed": 0, "placement": "after_flow_step"},
//   "guidance": {"objective": "appearance", "weight": 1.0, "mode": "optimizer_steps",
//                "inner_steps": 1, "apply_every": 1, "denominator": "all_pairs",
//                "persist_optimizer": true,
//                "optimizer": {"learning_rate": 5e-4, "beta1": 0.9, "beta2": 0.999,
//                              "eps": 1e-8, "weight_decay": 0.01}},
//   "appearance": {"slat": "appearance.slat", "correspondence": "corr.json"},
//   "structure": {"features": "query.ffld", "clusters": "clusters.json"},
//   "partition": {"k": 8, "seed": 0}
// }
//
// Relative paths resolve against the config file's directory. Unknown keys are rejected.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowguide/flowguide.hpp"

namespace flowguide::cli {

using io::json;

struct FieldConfig {
  std::string kind = "zero";
  GaussianFlowSpec gaussian;
  std::vector<GaussianFlowSpec> components;
  std::filesystem::path params;
};

struct RunConfig {
  std::filesystem::path shape;
  FieldConfig field;
  std::optional<Vector> condition;
  SamplerConfig sampler;
  std::optional<std::filesystem::path> appearance_slat;
  std::optional<std::filesystem::path> correspondence;
  std::optional<std::filesystem::path> structure_features;
  std::optional<std::filesystem::path> structure_clusters;
  std::uint32_t partition_k = 8;
  std::uint64_t partition_seed = 0;
  bool seed_given = false;
};

namespace detail {

inline Error config_error(const std::string& what) { return Error(ErrorKind::InvalidArgument, "config: " + what); }

inline void allow_keys(const json& j, const char* where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw config_error(std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : keys) ok = ok || key == k;
    if (!ok) throw config_error("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline Vector vector_from(const json& j, const char* key) {
  if (!j.is_array() || j.empty()) throw config_error(std::string(key) + " must be a non-empty array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw config_error(std::string(key) + " entries must be numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline GaussianFlowSpec gaussian_from(const json& j, const char* where) {
  GaussianFlowSpec g;
  if (!j.contains("mean")) throw config_error(std::string(where) + " needs 'mean'");
  g.mean = vector_from(j["mean"], "mean");
  g.std = value_or<double>(j, "std", 1.0);
  g.validate();
  return g;
}

inline json gaussian_to_json(const GaussianFlowSpec& g) {
  return json{{"mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())}, {"std", g.std}};
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
  using detail::allow_keys;
  using detail::value_or;
  allow_keys(j, "config",
             {"shape", "field", "condition", "sampler", "guidance", "appearance", "structure", "partition"});
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  RunConfig rc;
  if (!j.contains("shape")) throw detail::config_error("missing 'shape'");
  rc.shape = resolve(value_or<std::string>(j, "shape", ""));

  if (j.contains("field")) {
    const auto& f = j["field"];
    allow_keys(f, "field", {"kind", "mean", "std", "components", "params"});
    rc.field.kind = value_or<std::string>(f, "kind", "zero");
    if (rc.field.kind == "gaussian") {
      rc.field.gaussian = detail::gaussian_from(f, "gaussian field");
    } else if (rc.field.kind == "mixture") {
      if (!f.contains("components") || !f["components"].is_array() || f["components"].empty()) {
        throw detail::config_error("mixture field needs a non-empty 'components' array");
      }
      for (const auto& c : f["components"]) {
        allow_keys(c, "mixture component", {"mean", "std"});
        rc.field.components.push_back(detail::gaussian_from(c, "mixture component"));
      }
    } else if (rc.field.kind == "trained") {
      if (!f.contains("params")) throw detail::config_error("trained field needs 'params'");
      rc.field.params = resolve(value_or<std::string>(f, "params", ""));
    } else if (rc.field.kind != "zero") {
      throw detail::config_error("unknown field kind '" + rc.field.kind + "'");
    }
  }

  if (j.contains("condition")) rc.condition = detail::vector_from(j["condition"], "condition");

  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    allow_keys(s, "sampler", {"steps", "seed", "placement", "record_trajectory"});
    rc.sampler.steps = value_or<std::uint32_t>(s, "steps", 300);
    if (s.contains("seed")) {
      rc.sampler.seed = value_or<std::uint64_t>(s, "seed", 0);
      rc.seed_given = true;
    }
    rc.sampler.placement = parse_guidance_placement(value_or<std::string>(s, "placement", "after_flow_step"));
    rc.sampler.record_trajectory = value_or<bool>(s, "record_trajectory", false);
  }

  if (j.contains("guidance")) {
    const auto& g = j["guidance"];
    allow_keys(g, "guidance",
               {"objective", "weight", "mode", "inner_steps", "apply_every", "denominator", "persist_optimizer",
                "optimizer"});
    auto& spec = rc.sampler.guidance;
    spec.objective = parse_guidance_objective(value_or<std::string>(g, "objective", "none"));
    spec.weight = value_or<double>(g, "weight", 1.0);
    spec.mode = parse_guidance_mode(value_or<std::string>(g, "mode", "optimizer_steps"));
    spec.inner_steps = value_or<std::uint32_t>(g, "inner_steps", 1);
    spec.apply_every = value_or<std::uint32_t>(g, "apply_every", 1);
    spec.denominator = parse_denominator(value_or<std::string>(g, "denominator", "all_pairs"));
    spec.persist_optimizer = value_or<bool>(g, "persist_optimizer", true);
    if (g.contains("optimizer")) {
      const auto& o = g["optimizer"];
      allow_keys(o, "optimizer", {"learning_rate", "beta1", "beta2", "eps", "weight_decay"});
      spec.optimizer.learning_rate = value_or<double>(o, "learning_rate", spec.optimizer.learning_rate);
      spec.optimizer.beta1 = value_or<double>(o, "beta1", spec.optimizer.beta1);
      spec.optimizer.beta2 = value_or<double>(o, "beta2", spec.optimizer.beta2);
      spec.optimizer.eps = value_or<double>(o, "eps", spec.optimizer.eps);
      spec.optimizer.weight_decay = value_or<double>(o, "weight_decay", spec.optimizer.weight_decay);
    }
    spec.optimizer.validate();
  }

  if (j.contains("appearance")) {
    const auto& a = j["appearance"];
    allow_keys(a, "appearance", {"slat", "correspondence"});
    if (a.contains("slat")) rc.appearance_slat = resolve(value_or<std::string>(a, "slat", ""));
    if (a.contains("correspondence")) rc.correspondence = resolve(value_or<std::string>(a, "correspondence", ""));
  }
  if (j.contains("structure")) {
    const auto& s = j["structure"];
    allow_keys(s, "structure", {"features", "clusters"});
    if (s.contains("features")) rc.structure_features = resolve(value_or<std::string>(s, "features", ""));
    if (s.contains("clusters")) rc.structure_clusters = resolve(value_or<std::string>(s, "clusters", ""));
  }
  if (j.contains("partition")) {
    const auto& p = j["partition"];
    allow_keys(p, "partition", {"k", "seed"});
    rc.partition_k = value_or<std::uint32_t>(p, "k", 8);
    rc.partition_seed = value_or<std::uint64_t>(p, "seed", 0);
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file_bytes(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw detail::config_error(path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

/// Effective configuration as echoed to stdout and recorded in the manifest.
inline json to_json(const RunConfig& rc) {
  const auto& g = rc.sampler.guidance;
  json field{{"kind", rc.field.kind}};
  if (rc.field.kind == "gaussian") {
    field.update(detail::gaussian_to_json(rc.field.gaussian));
  } else if (rc.field.kind == "mixture") {
    json comps = json::array();
    for (const auto& c : rc.field.components) comps.push_back(detail::gaussian_to_json(c));
    field["components"] = comps;
  } else if (rc.field.kind == "trained") {
    field["params"] = rc.field.params.string();
  }
  json out{{"shape", rc.shape.string()},
           {"field", field},
           {"sampler",
            {{"steps", rc.sampler.steps},
             {"seed", rc.sampler.seed},
             {"placement", to_string(rc.sampler.placement)},
             {"record_trajectory", rc.sampler.record_trajectory}}},
           {"guidance",
            {{"objective", to_string(g.objective)},
             {"weight", g.weight},
             {"mode", to_string(g.mode)},
             {"inner_steps", g.inner_steps},
             {"apply_every", g.apply_every},
             {"denominator", to_string(g.denominator)},
             {"persist_optimizer", g.persist_optimizer},
             {"optimizer",
              {{"learning_rate", g.optimizer.learning_rate},
               {"beta1", g.optimizer.beta1},
               {"beta2", g.optimizer.beta2},
               {"eps", g.optimizer.eps},
               {"weight_decay", g.optimizer.weight_decay}}}}},
           {"partition", {{"k", rc.partition_k}, {"seed", rc.partition_seed}}}};
  if (rc.condition) out["condition"] = std::vector<double>(rc.condition->data(), rc.condition->data() + rc.condition->size());
  json appearance = json::object();
  if (rc.appearance_slat) appearance["slat"] = rc.appearance_slat->string();
  if (rc.correspondence) appearance["correspondence"] = rc.correspondence->string();
  if (!appearance.empty()) out["appearance"] = appearance;
  json structure = json::object();
  if (rc.structure_features) structure["features"] = rc.structure_features->string();
  if (rc.structure_clusters) structure["clusters"] = rc.structure_clusters->string();
  if (!structure.empty()) out["structure"] = structure;
  return out;
}

/// Builds the velocity field named by the config. Trained parameters are read from disk.
inline std::unique_ptr<VelocityField> make_field(const FieldConfig& f, io::RunManifest* manifest) {
  if (f.kind == "gaussian") return std::make_unique<GaussianVelocityField>(f.gaussian);
  if (f.kind == "mixture") return std::make_unique<MixtureVelocityField>(f.components);
  if (f.kind == "trained") {
    if (manifest) manifest->add_input(f.params);
    return std::make_unique<TrainableField>(io::read_params(f.params).field);
  }
  return std::make_unique<ZeroVelocityField>();
}

}  // namespace flowguide::cli
