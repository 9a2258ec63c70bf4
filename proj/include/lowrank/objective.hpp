#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "lowrank/core.hpp"

namespace lowrank {

/// A differentiable f : R^{m x n} -> R with its gradient and, optionally, an
/// upper bound on the Lipschitz constant of the gradient over a closed ball.
///
/// Copies share the captured data; the callables must be pure so that
/// concurrent step branches can call them.
class Objective {
 public:
  using ValueFn = std::function<double(const Matrix&)>;
  using GradientFn = std::function<Matrix(const Matrix&)>;
  using LipschitzFn = std::function<double(const Matrix& center, double radius)>;

  Objective(Index m, Index n, ValueFn value, GradientFn gradient,
            std::optional<LipschitzFn> lipschitz, std::string name,
            nlohmann::json parameters = nlohmann::json::object())
      : m_(m),
        n_(n),
        value_(std::move(value)),
        gradient_(std::move(gradient)),
        lipschitz_(std::move(lipschitz)),
        name_(std::move(name)),
        parameters_(std::move(parameters)) {
    if (m < 1 || n < 1) throw PreconditionError("Objective: dimensions must be positive");
  }

  Index rows() const { return m_; }
  Index cols() const { return n_; }

  double value(const Matrix& x) const {
    check(x);
    return value_(x);
  }

  Matrix gradient(const Matrix& x) const {
    check(x);
    return gradient_(x);
  }

  bool has_lipschitz() const { return lipschitz_.has_value(); }

  double lipschitz_on_ball(const Matrix& center, double radius) const {
    if (!lipschitz_) throw Error("Objective '" + name_ + "' declares no Lipschitz bound");
    return (*lipschitz_)(center, radius);
  }

  const std::string& name() const { return name_; }
  const nlohmann::json& parameters() const { return parameters_; }

  nlohmann::json descriptor() const {
    return {{"name", name_}, {"m", m_}, {"n", n_}, {"parameters", parameters_}};
  }

 private:
  void check(const Matrix& x) const {
    if (x.rows() != m_ || x.cols() != n_) {
      throw PreconditionError("Objective '" + name_ + "': argument has the wrong shape");
    }
  }

  Index m_;
  Index n_;
  ValueFn value_;
  GradientFn gradient_;
  std::optional<LipschitzFn> lipschitz_;
  std::string name_;
  nlohmann::json parameters_;
};

}  // namespace lowrank
