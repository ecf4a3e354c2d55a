// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcomp/gru/normalizer.hpp"
#include "dcomp/gru/params.hpp"

namespace dcomp::gru {

inline constexpr int kModelVersion = 1;

/**
 * Learned residual transition x_{t+1} = x_t + scale .* GRU(norm(x_t), h_t).
 *
 * train_mse holds the per-component one-step squared error measured on
 * held-out data, in state units. The filter uses it as process noise.
 */
struct TransitionModel {
  GruParams params;
  Normalizer normalizer;
  Vec train_mse;
  int model_version = kModelVersion;

  int state_dim() const { return params.input_dim; }
  int hidden_dim() const { return params.hidden_dim; }
  Vec zero_hidden() const { return Vec::Zero(params.hidden_dim); }

  // A model whose residual is identically zero (x' = x).
  static TransitionModel persistence(int state_dim, int hidden_dim) {
    TransitionModel m;
    m.params = GruParams::zeros(state_dim, hidden_dim);
    m.normalizer = Normalizer::identity(state_dim);
    m.train_mse = Vec::Zero(state_dim);
    return m;
  }
};

struct Prediction {
  Vec state;
  Vec hidden;
};

inline Prediction predict_next(const TransitionModel& model, const Vec& hidden,
                               const Vec& x) {
  dcomp::detail::require(x.size() == model.state_dim(),
                         "predict_next: state has wrong length");
  if (!x.allFinite()) throw NumericError("predict_next: non-finite state");
  CellOutput out =
      gru_cell_step(model.params, hidden, model.normalizer.normalize(x));
  Vec next = x + model.normalizer.residual_to_state(out.residual);
  for (Eigen::Index k = 0; k < next.size(); ++k) {
    if (!std::isfinite(next[k])) {
      throw NumericError("predict_next: non-finite prediction in component " +
                         std::to_string(k));
    }
  }
  return {std::move(next), std::move(out.hidden)};
}

/// [x0, x1, ..., xn] by n repeated applications of predict_next.
inline std::vector<Vec> open_loop_rollout(const TransitionModel& model,
                                          const Vec& x0, const Vec& h0, int n) {
  if (n < 0) throw ContractViolation("open_loop_rollout: n must be >= 0");
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  out.push_back(x0);
  Vec h = h0;
  for (int i = 0; i < n; ++i) {
    Prediction p = predict_next(model, h, out.back());
    out.push_back(std::move(p.state));
    h = std::move(p.hidden);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: a JSON document. Doubles are emitted in shortest round-trip
// form, so save/load is bit-exact.

namespace detail {

inline nlohmann::json tensor_to_json(const Mat& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

inline std::vector<double> vec_to_std(const Vec& v) {
  return {v.data(), v.data() + v.size()};
}

inline const nlohmann::json& field(const nlohmann::json& j,
                                   const std::string& key,
                                   const std::string& path) {
  if (!j.is_object() || !j.contains(key)) {
    throw LoadError("model file: missing field '" + path + key + "'");
  }
  return j.at(key);
}

inline Mat tensor_from_json(const nlohmann::json& j, Eigen::Index rows,
                            Eigen::Index cols, const std::string& path) {
  const auto& jr = field(j, "rows", path + ".");
  const auto& jc = field(j, "cols", path + ".");
  const auto& jd = field(j, "data", path + ".");
  if (!jr.is_number_integer() || !jc.is_number_integer() ||
      jr.get<Eigen::Index>() != rows || jc.get<Eigen::Index>() != cols) {
    throw LoadError("model file: field '" + path + "' has shape inconsistent with dims");
  }
  if (!jd.is_array() || static_cast<Eigen::Index>(jd.size()) != rows * cols) {
    throw LoadError("model file: field '" + path + ".data' has wrong length");
  }
  Mat m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, ++i) {
      if (!jd[i].is_number()) {
        throw LoadError("model file: non-numeric entry in '" + path + ".data'");
      }
      m(r, c) = jd[i].get<double>();
    }
  }
  return m;
}

inline Vec vec_from_json(const nlohmann::json& j, Eigen::Index n,
                         const std::string& path) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
    throw LoadError("model file: field '" + path + "' must be an array of length " +
                    std::to_string(n));
  }
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) {
      throw LoadError("model file: non-numeric entry in '" + path + "'");
    }
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

inline std::size_t line_of_offset(const std::string& text, std::size_t off) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < off && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

inline nlohmann::json model_to_json(const TransitionModel& m) {
  using nlohmann::json;
  json j;
  j["format"] = "dcomp-transition-model";
  j["model_version"] = m.model_version;
  j["input_dim"] = m.params.input_dim;
  j["hidden_dim"] = m.params.hidden_dim;
  auto gate = [](const Gate& g) {
    json o;
    o["input"] = detail::tensor_to_json(g.input);
    o["recurrent"] = detail::tensor_to_json(g.recurrent);
    o["bias"] = detail::vec_to_std(g.bias);
    return o;
  };
  j["update_gate"] = gate(m.params.update);
  j["reset_gate"] = gate(m.params.reset);
  j["candidate"] = gate(m.params.candidate);
  j["output"]["weight"] = detail::tensor_to_json(m.params.out_weight);
  j["output"]["bias"] = detail::vec_to_std(m.params.out_bias);
  j["normalizer"]["mean"] = detail::vec_to_std(m.normalizer.mean);
  j["normalizer"]["scale"] = detail::vec_to_std(m.normalizer.scale);
  j["train_mse"] = detail::vec_to_std(m.train_mse);
  return j;
}

inline TransitionModel model_from_json(const nlohmann::json& j) {
  using detail::field;
  if (!j.is_object()) throw LoadError("model file: top level must be an object");
  const auto& fmt = field(j, "format", "");
  if (!fmt.is_string() || fmt.get<std::string>() != "dcomp-transition-model") {
    throw LoadError("model file: field 'format' is not 'dcomp-transition-model'");
  }
  const auto& ver = field(j, "model_version", "");
  if (!ver.is_number_integer()) throw LoadError("model file: 'model_version' must be an integer");
  if (ver.get<int>() != kModelVersion) {
    throw LoadError("model file: unsupported model_version " +
                    std::to_string(ver.get<long long>()) + " (this build reads " +
                    std::to_string(kModelVersion) + ")");
  }
  const auto& jd = field(j, "input_dim", "");
  const auto& jh = field(j, "hidden_dim", "");
  if (!jd.is_number_integer() || !jh.is_number_integer() || jd.get<int>() <= 0 ||
      jh.get<int>() <= 0) {
    throw LoadError("model file: 'input_dim' and 'hidden_dim' must be positive integers");
  }
  const int d = jd.get<int>();
  const int h = jh.get<int>();

  TransitionModel m;
  m.model_version = kModelVersion;
  m.params.input_dim = d;
  m.params.hidden_dim = h;
  auto gate = [&](const std::string& name) {
    const auto& g = field(j, name, "");
    Gate out;
    out.input = detail::tensor_from_json(field(g, "input", name + "."), h, d, name + ".input");
    out.recurrent =
        detail::tensor_from_json(field(g, "recurrent", name + "."), h, h, name + ".recurrent");
    out.bias = detail::vec_from_json(field(g, "bias", name + "."), h, name + ".bias");
    return out;
  };
  m.params.update = gate("update_gate");
  m.params.reset = gate("reset_gate");
  m.params.candidate = gate("candidate");
  const auto& o = field(j, "output", "");
  m.params.out_weight = detail::tensor_from_json(field(o, "weight", "output."), d, h, "output.weight");
  m.params.out_bias = detail::vec_from_json(field(o, "bias", "output."), d, "output.bias");
  const auto& n = field(j, "normalizer", "");
  m.normalizer.mean = detail::vec_from_json(field(n, "mean", "normalizer."), d, "normalizer.mean");
  m.normalizer.scale =
      detail::vec_from_json(field(n, "scale", "normalizer."), d, "normalizer.scale");
  for (Eigen::Index k = 0; k < d; ++k) {
    if (!(m.normalizer.scale[k] > 0.0)) {
      throw LoadError("model file: 'normalizer.scale' entries must be positive");
    }
  }
  m.train_mse = detail::vec_from_json(field(j, "train_mse", ""), d, "train_mse");
  for (Eigen::Index k = 0; k < d; ++k) {
    if (!(m.train_mse[k] >= 0.0)) throw LoadError("model file: 'train_mse' entries must be >= 0");
  }
  try {
    m.params.validate();
  } catch (const std::exception& e) {
    throw LoadError(std::string("model file: ") + e.what());
  }
  return m;
}

inline std::string model_to_string(const TransitionModel& m) {
  return model_to_json(m).dump(1) + "\n";
}

inline TransitionModel model_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("model file: parse error at line " +
                    std::to_string(detail::line_of_offset(text, e.byte)) + ": " +
                    e.what());
  }
  return model_from_json(j);
}

inline void save_model(const TransitionModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open model file for writing: " + path);
  os << model_to_string(m);
  if (!os) throw IoError("failed writing model file: " + path);
}

inline TransitionModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open model file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return model_from_string(ss.str());
}

}  // namespace dcomp::gru
