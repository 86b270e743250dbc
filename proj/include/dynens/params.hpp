#pragma once

#include "dynens/autodiff.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace dynens {

/// A named trainable matrix with its gradient and Adam moments.
class Parameter {
 public:
  Parameter(std::string name, Matrix value);

  const std::string& name() const { return name_; }

  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;

  void zero_grad() { grad.setZero(); }
  void reset_moments();

 private:
  std::string name_;
};

/// Ordered collection of parameters. Element addresses are stable for the
/// lifetime of the set, so graph leaves may point at them.
class ParameterSet {
 public:
  ParameterSet() = default;

  Parameter& add(std::string name, Matrix value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  void reset_moments();

 private:
  std::deque<Parameter> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight matrix of shape fan_in x fan_out.
Matrix uniform_fan_in(int fan_in, int fan_out, std::mt19937_64& rng);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam over one or more parameter sets sharing a single step counter.
class Adam {
 public:
  Adam(std::vector<ParameterSet*> sets, AdamConfig config = {});

  /// Applies one bias-corrected update, then zeroes all gradients.
  void step();
  /// Zeroes moments and the step counter.
  void reset();

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t step) { step_ = step; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<ParameterSet*> sets_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json to_json(const ParameterSet& set, std::int64_t adam_step = 0);
/// Restores values and moments into `set`; returns the stored Adam step.
/// Names and shapes must match the existing parameters exactly.
std::int64_t from_json(const nlohmann::json& j, ParameterSet& set);
/// Builds a fresh set holding exactly the stored parameters.
ParameterSet parameter_set_from_json(const nlohmann::json& j, std::int64_t* adam_step = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& set,
                     std::int64_t adam_step = 0);
ParameterSet load_checkpoint(const std::filesystem::path& path, std::int64_t* adam_step = nullptr);

}  // namespace dynens
