#pragma once
//
// JSON configuration documents. Field names mirror the C++ structs:
//
//   {
//     "model":     {"kind": "linear" | "mlp", "hidden_dim": 32},
//     "C": 0.1, "E": 1, "B": 64, "rounds": 50, "seed": 1,
//     "optimizer": {"kind": "adam", "lr": 5e-4, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
//     "sampler": "uniform", "aggregator": "fedavg",
//     "central":   {"epochs": 50, "patience": 5},
//     "grid":      {"C": [0.1, 0.3, 0.5, 0.7], "E": [1, 3, 5], "seeds": [1]},
//     "synth":     {"num_clients": 20, ...},
//     "data":      "task.fsim"
//   }
//
// Every key is optional. A run manifest stores the resolved document under
// "config", and loading a manifest reads that object back.

#include <cstdint>
#include <ctime>
#include <fstream>
#include <string>

#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/harness.hpp"
#include "fedsim/model.hpp"
#include "json.hpp"

namespace fedsim {

using Json = nlohmann::json;

namespace detail {

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  Json doc;
  try {
    in >> doc;
  } catch (const Json::exception& e) {
    throw ValidationError("config '" + path + "': " + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config '" + path + "': top level must be an object");
  // A run manifest carries the resolved config under "config".
  if (doc.contains("config") && doc["config"].is_object()) return doc["config"];
  return doc;
}

inline OptimizerConfig optimizer_from_json(const Json& j, OptimizerConfig o = {}) {
  if (!j.is_object()) throw ValidationError("config 'optimizer' must be an object");
  std::string kind = to_string(o.kind);
  detail::read_opt(j, "kind", kind);
  o.kind = parse_optimizer_kind(kind);
  detail::read_opt(j, "lr", o.lr);
  detail::read_opt(j, "beta1", o.beta1);
  detail::read_opt(j, "beta2", o.beta2);
  detail::read_opt(j, "epsilon", o.epsilon);
  o.validate();
  return o;
}

inline Json to_json(const OptimizerConfig& o) {
  return {{"kind", to_string(o.kind)}, {"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"epsilon", o.epsilon}};
}

inline FederationConfig federation_from_json(const Json& j, FederationConfig c = {}) {
  detail::read_opt(j, "C", c.C);
  detail::read_opt(j, "E", c.E);
  detail::read_opt(j, "B", c.B);
  detail::read_opt(j, "rounds", c.rounds);
  detail::read_opt(j, "seed", c.seed);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j["optimizer"], c.optimizer);
  std::string s = to_string(c.sampler), a = to_string(c.aggregator);
  detail::read_opt(j, "sampler", s);
  detail::read_opt(j, "aggregator", a);
  c.sampler = parse_sampler(s);
  c.aggregator = parse_aggregator(a);
  detail::read_opt(j, "record_wall_time", c.record_wall_time);
  return c;
}

inline Json to_json(const FederationConfig& c) {
  return {{"C", c.C},
          {"E", c.E},
          {"B", c.B},
          {"rounds", c.rounds},
          {"seed", c.seed},
          {"optimizer", to_json(c.optimizer)},
          {"sampler", to_string(c.sampler)},
          {"aggregator", to_string(c.aggregator)},
          {"record_wall_time", c.record_wall_time}};
}

// input_dim and num_classes come from the data, not the config.
inline ModelSpec model_from_json(const Json& j, std::size_t input_dim, std::size_t num_classes) {
  ModelSpec m;
  m.input_dim = input_dim;
  m.num_classes = num_classes;
  if (j.contains("model")) {
    const Json& mj = j["model"];
    std::string kind = "linear";
    detail::read_opt(mj, "kind", kind);
    m.kind = parse_model_kind(kind);
    detail::read_opt(mj, "hidden_dim", m.hidden_dim);
    if (m.kind == ModelKind::mlp && m.hidden_dim == 0) m.hidden_dim = 64;
  }
  m.validate();
  return m;
}

inline Json to_json(const ModelSpec& m) {
  Json j = {{"kind", to_string(m.kind)}};
  if (m.kind == ModelKind::mlp) j["hidden_dim"] = m.hidden_dim;
  return j;
}

inline CentralConfig central_from_json(const Json& j) {
  CentralConfig c;
  detail::read_opt(j, "B", c.B);
  detail::read_opt(j, "seed", c.seed);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j["optimizer"]);
  if (j.contains("central")) {
    const Json& cj = j["central"];
    detail::read_opt(cj, "epochs", c.epochs);
    detail::read_opt(cj, "patience", c.patience);
    detail::read_opt(cj, "B", c.B);
  }
  return c;
}

inline Json to_json(const CentralConfig& c) {
  return {{"B", c.B},
          {"seed", c.seed},
          {"optimizer", to_json(c.optimizer)},
          {"central", {{"epochs", c.epochs}, {"patience", c.patience}}}};
}

inline GridSpec grid_from_json(const Json& j) {
  GridSpec g;
  detail::read_opt(j, "B", g.B);
  detail::read_opt(j, "rounds", g.rounds);
  if (j.contains("grid")) {
    const Json& gj = j["grid"];
    detail::read_opt(gj, "C", g.C);
    detail::read_opt(gj, "E", g.E);
    detail::read_opt(gj, "B", g.B);
    detail::read_opt(gj, "rounds", g.rounds);
    detail::read_opt(gj, "seeds", g.seeds);
  }
  g.validate();
  return g;
}

inline Json to_json(const GridSpec& g) {
  return {{"C", g.C}, {"E", g.E}, {"B", g.B}, {"rounds", g.rounds}, {"seeds", g.seeds}};
}

inline SynthTaskSpec synth_from_json(const Json& j) {
  SynthTaskSpec s;
  if (!j.contains("synth")) return s;
  const Json& sj = j["synth"];
  detail::read_opt(sj, "num_clients", s.num_clients);
  detail::read_opt(sj, "num_classes", s.num_classes);
  detail::read_opt(sj, "input_dim", s.input_dim);
  detail::read_opt(sj, "size_exponent", s.size_exponent);
  detail::read_opt(sj, "min_size", s.min_size);
  detail::read_opt(sj, "max_size", s.max_size);
  detail::read_opt(sj, "concentration", s.concentration);
  detail::read_opt(sj, "eval_fraction", s.eval_fraction);
  detail::read_opt(sj, "noise", s.noise);
  detail::read_opt(sj, "extra_label_prob", s.extra_label_prob);
  detail::read_opt(sj, "seed", s.seed);
  return s;
}

inline Json to_json(const SynthTaskSpec& s) {
  return {{"num_clients", s.num_clients}, {"num_classes", s.num_classes}, {"input_dim", s.input_dim},
          {"size_exponent", s.size_exponent}, {"min_size", s.min_size},   {"max_size", s.max_size},
          {"concentration", s.concentration}, {"eval_fraction", s.eval_fraction}, {"noise", s.noise},
          {"extra_label_prob", s.extra_label_prob}, {"seed", s.seed}};
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Record of one invocation. `config` holds everything needed to rerun it.
struct RunManifest {
  std::string run_id;
  Json config;
  std::string data_path;
  std::uint64_t data_fingerprint = 0;
  std::string started;
  std::string finished;
  Json artifacts = Json::object();

  Json to_json() const {
    Json cfg = config;
    cfg["data"] = data_path;
    return {{"run_id", run_id},
            {"config", cfg},
            {"data_fingerprint", hex64(data_fingerprint)},
            {"started", started},
            {"finished", finished},
            {"artifacts", artifacts}};
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + path + "'");
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace fedsim
