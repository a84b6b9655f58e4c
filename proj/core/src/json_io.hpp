#pragma once

// JSON helpers shared by the fit artifact and the run configuration.

#include "ivf/data_model.hpp"

#include "json.hpp"

namespace ivf::detail {

using json = nlohmann::ordered_json;

inline json standardization_json(const StandardizationParams& p) {
  json j = json::object();
  for (std::size_t i = 0; i < p.names.size(); ++i) j[p.names[i]] = {{"mean", p.mean[i]}, {"sd", p.sd[i]}};
  return j;
}

inline StandardizationParams standardization_from_json(const json& j) {
  StandardizationParams p;
  for (const auto& [name, v] : j.items()) p.set(name, v.at("mean").get<double>(), v.at("sd").get<double>());
  return p;
}

inline json spec_json(const CovariateSpec& spec) {
  json j = json::object();
  for (auto s : kAllSubmodels) {
    json cols = json::array();
    for (auto c : spec.columns[index(s)]) cols.push_back(std::string(covariate_name(c)));
    j[std::string(submodel_code(s))] = cols;
  }
  return j;
}

inline CovariateSpec spec_from_json(const json& j) {
  CovariateSpec spec;
  for (auto s : kAllSubmodels) {
    for (const auto& name : j.at(std::string(submodel_code(s)))) {
      for (auto c : parse_covariates(name.get<std::string>())) spec.columns[index(s)].push_back(c);
    }
  }
  spec.validate();
  return spec;
}

}  // namespace ivf::detail
