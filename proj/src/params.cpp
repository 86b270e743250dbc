#include "dynens/params.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dynens {

Parameter::Parameter(std::string name, Matrix v)
    : value(std::move(v)),
      grad(Matrix::Zero(value.rows(), value.cols())),
      first_moment(Matrix::Zero(value.rows(), value.cols())),
      second_moment(Matrix::Zero(value.rows(), value.cols())),
      name_(std::move(name)) {}

void Parameter::reset_moments() {
  first_moment.setZero();
  second_moment.setZero();
}

Parameter& ParameterSet::add(std::string name, Matrix value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  return params_.emplace_back(std::move(name), std::move(value));
}

Parameter& ParameterSet::at(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name() == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& ParameterSet::at(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name() == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name() == name) return true;
  }
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterSet::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

void ParameterSet::reset_moments() {
  for (Parameter& p : params_) p.reset_moments();
}

Matrix uniform_fan_in(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(fan_in, fan_out);
  // Fill row-major so the draw order does not depend on Eigen's storage.
  for (int r = 0; r < fan_in; ++r) {
    for (int c = 0; c < fan_out; ++c) m(r, c) = dist(rng);
  }
  return m;
}

Adam::Adam(std::vector<ParameterSet*> sets, AdamConfig config)
    : sets_(std::move(sets)), config_(config) {
  if (config_.learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
}

void Adam::step() {
  for (ParameterSet* set : sets_) {
    for (Parameter& p : *set) {
      if (!p.grad.allFinite()) {
        throw NonFiniteGradient("non-finite gradient in parameter " + p.name());
      }
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (ParameterSet* set : sets_) {
    for (Parameter& p : *set) {
      p.first_moment = config_.beta1 * p.first_moment + (1.0 - config_.beta1) * p.grad;
      p.second_moment =
          config_.beta2 * p.second_moment + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
      p.value.array() -= config_.learning_rate * (p.first_moment.array() / bias1) /
                         ((p.second_moment.array() / bias2).sqrt() + config_.epsilon);
      p.zero_grad();
    }
  }
}

void Adam::reset() {
  step_ = 0;
  for (ParameterSet* set : sets_) set->reset_moments();
}

namespace {

nlohmann::json flatten(const Matrix& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
  }
  return arr;
}

Matrix unflatten(const nlohmann::json& arr, Eigen::Index rows, Eigen::Index cols,
                 const std::string& what) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != rows * cols) {
    throw std::runtime_error("checkpoint: bad array size for " + what);
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = arr[k++].get<double>();
  }
  return m;
}

void check_version(const nlohmann::json& j) {
  if (!j.contains("version")) throw std::runtime_error("checkpoint: missing version field");
  const int v = j.at("version").get<int>();
  if (v != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  }
}

}  // namespace

nlohmann::json to_json(const ParameterSet& set, std::int64_t adam_step) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["adam_step"] = adam_step;
  auto& params = j["params"] = nlohmann::json::array();
  for (const Parameter& p : set) {
    params.push_back({{"name", p.name()},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"value", flatten(p.value)},
                      {"m", flatten(p.first_moment)},
                      {"v", flatten(p.second_moment)}});
  }
  return j;
}

std::int64_t from_json(const nlohmann::json& j, ParameterSet& set) {
  check_version(j);
  const auto& params = j.at("params");
  if (params.size() != set.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (const auto& pj : params) {
    const auto name = pj.at("name").get<std::string>();
    Parameter& p = set.at(name);
    const auto rows = pj.at("rows").get<Eigen::Index>();
    const auto cols = pj.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    p.value = unflatten(pj.at("value"), rows, cols, name);
    p.first_moment = unflatten(pj.at("m"), rows, cols, name);
    p.second_moment = unflatten(pj.at("v"), rows, cols, name);
    p.zero_grad();
  }
  return j.value("adam_step", std::int64_t{0});
}

ParameterSet parameter_set_from_json(const nlohmann::json& j, std::int64_t* adam_step) {
  check_version(j);
  ParameterSet set;
  for (const auto& pj : j.at("params")) {
    const auto name = pj.at("name").get<std::string>();
    const auto rows = pj.at("rows").get<Eigen::Index>();
    const auto cols = pj.at("cols").get<Eigen::Index>();
    Parameter& p = set.add(name, unflatten(pj.at("value"), rows, cols, name));
    p.first_moment = unflatten(pj.at("m"), rows, cols, name);
    p.second_moment = unflatten(pj.at("v"), rows, cols, name);
  }
  if (adam_step) *adam_step = j.value("adam_step", std::int64_t{0});
  return set;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& set,
                     std::int64_t adam_step) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(set, adam_step).dump();
}

ParameterSet load_checkpoint(const std::filesystem::path& path, std::int64_t* adam_step) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return parameter_set_from_json(nlohmann::json::parse(in), adam_step);
}

}  // namespace dynens
