#pragma once

// Central finite-difference checks of tape gradients, evaluated in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "wordpool/autodiff.hpp"

namespace wordpool::nn {

/// Builds a scalar loss on the tape from the given input node.
using ScalarFn = std::function<Var(Tape<double>&, Var)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline void check_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");
}

/// Maximum relative error between the analytic gradient of f at x and central
/// differences with step eps.
inline double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-5) {
  check_eps(eps);
  std::vector<double> analytic;
  {
    Tape<double> tape;
    Var in = tape.input(x, true);
    Var loss = f(tape, in);
    tape.backward(loss);
    const auto g = tape.grad(in);
    analytic.assign(g.begin(), g.end());
  }
  auto eval = [&](const std::vector<double>& values) {
    Tape<double> tape(false);
    Var in = tape.input(x.rows(), x.cols(), values);
    return tape.scalar(f(tape, in));
  };
  double worst = 0.0;
  std::vector<double> probe = x.data;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(numeric)) throw NonFiniteError("grad_check: non-finite finite-difference estimate");
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

/// Checks parameter gradients of a model loss. `loss` must build the loss on the
/// tape from `store`. Up to `per_tensor` coordinates of each parameter are
/// probed, chosen by `seed`.
inline double grad_check_params(ParamStore<double>& store, const std::function<Var(Tape<double>&)>& loss,
                                std::size_t per_tensor = 6, double eps = 1e-5, std::uint64_t seed = 1) {
  check_eps(eps);
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return tape.scalar(loss(tape));
  };
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto& p : store) {
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(per_tensor, coords.size()));
    for (std::size_t i : coords) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = eval();
      p.value[i] = orig - eps;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(numeric)) throw NonFiniteError("grad_check: non-finite finite-difference estimate");
      worst = std::max(worst, relative_error(p.grad[i], numeric));
    }
  }
  return worst;
}

}  // namespace wordpool::nn
