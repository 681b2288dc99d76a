#include "meftlab/run_config.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

namespace meftlab {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <class T>
void read(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for key '" + where + "." + key + "'");
  }
}

MethodSpec method_from_json(const json& j, const std::string& where) {
  if (j.is_string()) return method_from_json(json{{"name", j}}, where);
  check_keys(j, where, {"name", "dim", "r", "init_r", "rf", "h_side"});
  if (!j.contains("name") || !j["name"].is_string()) throw ConfigError("missing key '" + where + ".name'");
  MethodSpec m;
  m.kind = method_from_name(j["name"].get<std::string>());
  read(j, "dim", where, m.dim);
  read(j, "r", where, m.r);
  read(j, "init_r", where, m.init_r);
  read(j, "rf", where, m.rf);
  read(j, "h_side", where, m.h_side);
  return m;
}

ModelConfig model_from_json(const json& j) {
  check_keys(j, "model", {"preset", "n_layers", "d_model", "n_heads", "d_ff", "seq_len", "d_input", "n_classes",
                          "proj_dim", "init_std", "frontend_std"});
  ModelConfig m = ModelConfig::toy();
  if (j.contains("preset")) {
    const std::string p = j["preset"].is_string() ? j["preset"].get<std::string>() : "";
    if (p == "toy") {
      m = ModelConfig::toy();
    } else if (p == "whisper_small") {
      m = ModelConfig::whisper_small();
    } else {
      throw ConfigError("unknown value for key 'model.preset'");
    }
  }
  read(j, "n_layers", "model", m.n_layers);
  read(j, "d_model", "model", m.d_model);
  read(j, "n_heads", "model", m.n_heads);
  read(j, "d_ff", "model", m.d_ff);
  read(j, "seq_len", "model", m.seq_len);
  read(j, "d_input", "model", m.d_input);
  read(j, "n_classes", "model", m.n_classes);
  read(j, "proj_dim", "model", m.proj_dim);
  read(j, "init_std", "model", m.init_std);
  read(j, "frontend_std", "model", m.frontend_std);
  m.validate();
  return m;
}

}  // namespace

MethodSpec parse_method(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("method is not valid JSON: ") + e.what());
  }
  return method_from_json(j, "method");
}

RunConfig parse_run_config(const std::string& json_text, bool sweep) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "", {"model", "method", "methods", "train", "task", "features", "output_dir"});
  RunConfig cfg;
  if (j.contains("model")) cfg.model = model_from_json(j["model"]);

  if (sweep) {
    if (!j.contains("methods")) throw ConfigError("missing key 'methods'");
    if (!j["methods"].is_array() || j["methods"].empty()) throw ConfigError("key 'methods' must be a non-empty list");
    for (std::size_t i = 0; i < j["methods"].size(); ++i) {
      cfg.methods.push_back(method_from_json(j["methods"][i], "methods[" + std::to_string(i) + "]"));
    }
  } else {
    if (!j.contains("method")) throw ConfigError("missing key 'method'");
    cfg.methods.push_back(method_from_json(j["method"], "method"));
  }
  for (const auto& m : cfg.methods) m.validate(cfg.model);

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train", {"lr_grid", "batch_size", "epochs", "seed", "deterministic", "precision"});
    read(t, "lr_grid", "train", cfg.train.lr_grid);
    read(t, "batch_size", "train", cfg.train.batch_size);
    read(t, "epochs", "train", cfg.train.epochs);
    read(t, "seed", "train", cfg.train.seed);
    read(t, "deterministic", "train", cfg.train.deterministic);
    if (t.contains("precision")) {
      const std::string p = t["precision"].is_string() ? t["precision"].get<std::string>() : "";
      if (p == "f32") {
        cfg.train.precision = Precision::F32;
      } else if (p == "f64") {
        cfg.train.precision = Precision::F64;
      } else {
        throw ConfigError("bad value for key 'train.precision'");
      }
    }
  }
  cfg.train.validate();

  const bool has_task = j.contains("task");
  const bool has_features = j.contains("features");
  if (has_task == has_features) throw ConfigError("exactly one of keys 'task' and 'features' is required");
  if (has_task) {
    const json& t = j["task"];
    check_keys(t, "task", {"count", "seed", "noise_std", "nonlinear", "signatures"});
    SyntheticTaskSpec task;
    task.n_classes = cfg.model.n_classes;
    task.seq_len = cfg.model.seq_len;
    task.d_input = cfg.model.d_input;
    read(t, "count", "task", cfg.task_count);
    read(t, "seed", "task", cfg.task_seed);
    read(t, "noise_std", "task", task.noise_std);
    read(t, "nonlinear", "task", task.nonlinear);
    read(t, "signatures", "task", task.signatures);
    task.validate();
    cfg.task = task;
  } else {
    const json& f = j["features"];
    check_keys(f, "features", {"path", "labels"});
    if (!f.contains("path")) throw ConfigError("missing key 'features.path'");
    if (!f.contains("labels")) throw ConfigError("missing key 'features.labels'");
    read(f, "path", "features", cfg.feature_path);
    read(f, "labels", "features", cfg.label_path);
  }
  read(j, "output_dir", "", cfg.output_dir);
  return cfg;
}

RunConfig load_run_config(const std::string& path, bool sweep) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_run_config({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, sweep);
}

Split build_data(const RunConfig& cfg) {
  if (cfg.task) return split_stratified(gen_synthetic(*cfg.task, cfg.task_count, cfg.task_seed));
  return split_stratified(load_features(cfg.feature_path, cfg.label_path, cfg.model.seq_len, cfg.model.d_input,
                                        cfg.model.n_classes));
}

}  // namespace meftlab
