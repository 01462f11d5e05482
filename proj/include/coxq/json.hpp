#pragma once

// JSON (de)serialization of the public value types.

#include <string>

#include <json.hpp>

#include "coxq/analytic.hpp"
#include "coxq/env.hpp"
#include "coxq/errors.hpp"
#include "coxq/ldp.hpp"
#include "coxq/matrix.hpp"
#include "coxq/sim.hpp"

namespace coxq {

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json_value(const EnvSpec& env) {
  ordered_json j;
  j["family"] = std::string(env.family_name());
  std::visit(detail::overloaded{
                 [&](const Deterministic& f) { j["lambda"] = f.lambda; },
                 [&](const Gamma& f) {
                   j["shape"] = f.shape;
                   j["scale"] = f.scale;
                 },
                 [&](const Exponential& f) { j["rate"] = f.rate; },
                 [&](const DiscreteFinite& f) {
                   j["values"] = f.values;
                   j["probs"] = f.probs;
                 }},
             env.family());
  return j;
}

namespace detail {

template <class Json>
double require_number(const Json& j, const char* key, const char* where) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw ConfigError(std::string(where) + ": numeric field '" + key + "' is required");
  return j.at(key).template get<double>();
}

}  // namespace detail

/// {"family": "exponential", "rate": 1}, {"family": "gamma", "shape": k,
/// "scale": s}, {"family": "deterministic", "lambda": l} or
/// {"family": "discrete", "values": [...], "probs": [...]}.
template <class Json>
EnvSpec env_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("family") || !j.at("family").is_string())
    throw ConfigError("env: an object with a string field 'family' is required");
  const auto family = j.at("family").template get<std::string>();
  if (family == "deterministic") return EnvSpec::deterministic(detail::require_number(j, "lambda", "env"));
  if (family == "gamma")
    return EnvSpec::gamma(detail::require_number(j, "shape", "env"), detail::require_number(j, "scale", "env"));
  if (family == "exponential") return EnvSpec::exponential(detail::require_number(j, "rate", "env"));
  if (family == "discrete") {
    if (!j.contains("values") || !j.contains("probs"))
      throw ConfigError("env: discrete law needs 'values' and 'probs' arrays");
    return EnvSpec::discrete(j.at("values").template get<std::vector<double>>(),
                             j.at("probs").template get<std::vector<double>>());
  }
  throw ConfigError("env: unknown family '" + family +
                    "' (expected deterministic, gamma, exponential or discrete)");
}

inline ordered_json to_json_value(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t k = 0; k < m.size(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

inline ordered_json to_json_value(const RateResult& r) {
  ordered_json j;
  j["rate"] = r.rate;
  j["theta_star"] = r.theta_star;
  j["regime"] = to_string(r.regime);
  j["speed"] = {{"description", r.speed.describe()},
                {"exponent", r.speed.exponent},
                {"divisor", r.speed.divisor}};
  j["diagnostics"] = {{"quadrature_error", r.diagnostics.quadrature_error},
                      {"iterations", r.diagnostics.iterations},
                      {"stationarity_residual", r.diagnostics.stationarity_residual}};
  return j;
}

inline ordered_json to_json_value(const TailEstimate& e) {
  return {{"prob", e.prob},
          {"log_prob", e.log_prob},
          {"rel_err", e.rel_err},
          {"tilted_mean", e.tilted_mean},
          {"proxy_mean_gap", e.proxy_mean_gap},
          {"theta", e.theta},
          {"replications", e.replications}};
}

inline ordered_json to_json_value(const MomentReport& m) {
  ordered_json j;
  j["replications"] = m.replications;
  ordered_json grid = ordered_json::array();
  for (const auto& g : m.grid) {
    ordered_json entry;
    entry["time"] = g.time;
    ordered_json queues = ordered_json::array();
    for (const auto& q : g.queues)
      queues.push_back({{"mean", q.mean},
                        {"variance", q.variance},
                        {"mean_se", q.mean_se},
                        {"variance_se", q.variance_se}});
    entry["queues"] = queues;
    entry["covariance"] = to_json_value(g.covariance);
    grid.push_back(entry);
  }
  j["grid"] = grid;
  return j;
}

}  // namespace coxq
