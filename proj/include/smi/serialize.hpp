#pragma once

// JSON forms of parameter vectors, matrices, model specs and method states.

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "smi/methods.hpp"
#include "smi/nn.hpp"
#include "smi/objectives.hpp"

namespace smi::io {

using json = nlohmann::ordered_json;

inline json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

/// {"rows": r, "cols": c, "data": [column-major entries]}
inline json matrix_to_json(const Eigen::MatrixXd& m) {
  return json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto vals = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(vals.size()) != rows * cols) {
    throw std::runtime_error("matrix: data length does not match rows x cols");
  }
  return Eigen::Map<const Eigen::MatrixXd>(vals.data(), rows, cols);
}

inline json spec_to_json(const nn::ModelSpec& s) {
  return json{{"input_dim", s.input_dim},
              {"hidden", s.hidden_sizes},
              {"output_dim", s.output_dim},
              {"activation", "swish"},
              {"head", nn::to_string(s.head)}};
}

inline nn::ModelSpec spec_from_json(const json& j) {
  nn::ModelSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_sizes = j.at("hidden").get<std::vector<std::size_t>>();
  s.output_dim = j.at("output_dim").get<std::size_t>();
  const auto head = j.at("head").get<std::string>();
  if (head == "categorical") {
    s.head = nn::Head::categorical;
  } else if (head == "bernoulli") {
    s.head = nn::Head::bernoulli;
  } else if (head == "scalar") {
    s.head = nn::Head::scalar;
  } else {
    throw std::runtime_error("unknown head '" + head + "'");
  }
  s.validate();
  return s;
}

inline json to_json(const objectives::DensePenaltyState& s) {
  return json{{"anchor", vector_to_json(s.anchor)},
              {"hessian", matrix_to_json(s.hessian)},
              {"tasks_seen", s.tasks_seen}};
}

inline void from_json(const json& j, objectives::DensePenaltyState& s) {
  s.anchor = vector_from_json(j.at("anchor"));
  s.hessian = matrix_from_json(j.at("hessian"));
  s.tasks_seen = j.at("tasks_seen").get<std::size_t>();
}

inline json to_json(const objectives::DiagonalPenaltyState& s) {
  return json{{"anchor", vector_to_json(s.anchor)},
              {"diagonal", vector_to_json(s.diagonal)},
              {"tasks_seen", s.tasks_seen}};
}

inline void from_json(const json& j, objectives::DiagonalPenaltyState& s) {
  s.anchor = vector_from_json(j.at("anchor"));
  s.diagonal = vector_from_json(j.at("diagonal"));
  s.tasks_seen = j.at("tasks_seen").get<std::size_t>();
}

inline json to_json(const methods::SiState& s) {
  return json{{"importance", vector_to_json(s.importance)},
              {"path", vector_to_json(s.path)},
              {"anchor", vector_to_json(s.anchor)},
              {"tasks_seen", s.tasks_seen}};
}

inline void from_json(const json& j, methods::SiState& s) {
  s.importance = vector_from_json(j.at("importance"));
  s.path = vector_from_json(j.at("path"));
  s.anchor = vector_from_json(j.at("anchor"));
  s.tasks_seen = j.at("tasks_seen").get<std::size_t>();
}

inline json to_json(const objectives::ConsolidatorState& s) {
  return json{{"spec", spec_to_json(s.spec)},  {"phi", vector_to_json(s.phi)},
              {"lambda", s.lambda},            {"radius", s.radius},
              {"beta", s.beta},                {"sample_size", s.sample_size},
              {"fit_steps", s.fit_steps},      {"fit_lr", s.fit_lr},
              {"huber_delta", s.huber_delta},  {"warm_start", s.warm_start},
              {"tasks_seen", s.tasks_seen}};
}

inline void from_json(const json& j, objectives::ConsolidatorState& s) {
  s.spec = spec_from_json(j.at("spec"));
  s.phi = vector_from_json(j.at("phi"));
  s.lambda = j.at("lambda").get<double>();
  s.radius = j.at("radius").get<double>();
  s.beta = j.at("beta").get<double>();
  s.sample_size = j.at("sample_size").get<std::size_t>();
  s.fit_steps = j.at("fit_steps").get<std::size_t>();
  s.fit_lr = j.at("fit_lr").get<double>();
  s.huber_delta = j.at("huber_delta").get<double>();
  s.warm_start = j.value("warm_start", false);
  s.tasks_seen = j.at("tasks_seen").get<std::size_t>();
}

}  // namespace smi::io
