#include "fame/params.hpp"

#include <cmath>
#include <fstream>

#include "fame/error.hpp"

namespace fame {

std::size_t ParamStore::add(std::string name, Matrix init) {
  if (index_.count(name)) throw Error(Errc::config, "duplicate parameter name '" + name + "'");
  if (!init.allFinite()) throw Error(Errc::config, "parameter '" + name + "' initialised non-finite");
  const std::size_t slot = values_.size();
  index_.emplace(name, slot);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return slot;
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParamStore::slot(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw Error(Errc::config, "unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& v : values_) {
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) flat.push_back(v(r, c));
  }
  return flat;
}

void ParamStore::unflatten(const std::vector<double>& flat) {
  if (flat.size() != scalar_count()) throw Error(Errc::dimension, "flat parameter vector has wrong length");
  std::size_t k = 0;
  for (auto& v : values_) {
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = flat[k++];
  }
}

bool ParamStore::all_finite() const {
  for (const auto& v : values_)
    if (!v.allFinite()) return false;
  return true;
}

GradStore::GradStore(const ParamStore& params) {
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void GradStore::zero() {
  for (auto& g : grads) g.setZero();
}

bool GradStore::all_finite() const {
  for (const auto& g : grads)
    if (!g.allFinite()) return false;
  return true;
}

double GradStore::squared_norm() const {
  double s = 0.0;
  for (const auto& g : grads) s += g.squaredNorm();
  return s;
}

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

nlohmann::json params_to_json(const ParamStore& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& v = params.value(i);
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(v.size()));
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) vals.push_back(v(r, c));
    arr.push_back({{"name", params.name(i)}, {"shape", {v.rows(), v.cols()}}, {"values", vals}});
  }
  return arr;
}

ParamStore params_from_json(const nlohmann::json& j) {
  ParamStore store;
  for (const auto& e : j) {
    const auto rows = e.at("shape").at(0).get<Eigen::Index>();
    const auto cols = e.at("shape").at(1).get<Eigen::Index>();
    const auto vals = e.at("values").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(vals.size()) != rows * cols) {
      throw Error(Errc::io, "checkpoint entry '" + e.at("name").get<std::string>() + "' has inconsistent shape");
    }
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = vals[k++];
    store.add(e.at("name").get<std::string>(), std::move(m));
  }
  return store;
}

void save_checkpoint(const std::filesystem::path& file, const ParamStore& params,
                     const nlohmann::json& meta) {
  nlohmann::json j;
  j["format"] = "fame-checkpoint";
  j["version"] = kCheckpointVersion;
  j["meta"] = meta;
  j["params"] = params_to_json(params);
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write checkpoint " + file.string());
  out << j.dump();
}

nlohmann::json load_checkpoint(const std::filesystem::path& file, ParamStore& params) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot read checkpoint " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::io, std::string("malformed checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "fame-checkpoint") throw Error(Errc::io, "not a fame checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw Error(Errc::io, "unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  params = params_from_json(j.at("params"));
  return j.value("meta", nlohmann::json::object());
}

}  // namespace fame
