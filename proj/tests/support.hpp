#pragma once

// Shared helpers for the test suites: random generators for property sweeps
// and a central finite-difference oracle for autodiff checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "uqkit/autodiff.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/tensor.hpp"

namespace uqtest {

using uqkit::Rng;
using uqkit::Shape;
using uqkit::Tensor;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(uqkit::shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Builds a scalar loss from parameter Vars on a fresh tape.
using GraphFn = std::function<uqkit::Var(uqkit::Tape&, const std::vector<uqkit::Var>&)>;

inline double evaluate(const GraphFn& f, const std::vector<Tensor>& params) {
  uqkit::Tape tape;
  std::vector<uqkit::Var> vars;
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

inline std::vector<Tensor> analytic_grads(const GraphFn& f, const std::vector<Tensor>& params) {
  uqkit::Tape tape;
  std::vector<uqkit::Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  tape.backward(f(tape, vars));
  std::vector<Tensor> g;
  for (const auto& v : vars) g.push_back(tape.grad(v));
  return g;
}

// Central differences with step h for every coordinate of every parameter.
inline std::vector<Tensor> numeric_grads(const GraphFn& f, std::vector<Tensor> params, double h = 1e-5) {
  std::vector<Tensor> g;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor gp = Tensor::zeros(params[p].shape());
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double orig = params[p][k];
      params[p].data()[k] = orig + h;
      const double up = evaluate(f, params);
      params[p].data()[k] = orig - h;
      const double down = evaluate(f, params);
      params[p].data()[k] = orig;
      gp.data()[k] = (up - down) / (2.0 * h);
    }
    g.push_back(std::move(gp));
  }
  return g;
}

// max_k |a_k - n_k| / max(1, |a_k|, |n_k|) over all coordinates.
inline double max_relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& n) {
  double worst = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    for (std::size_t k = 0; k < a[p].size(); ++k) {
      const double scale = std::max({1.0, std::fabs(a[p][k]), std::fabs(n[p][k])});
      worst = std::max(worst, std::fabs(a[p][k] - n[p][k]) / scale);
    }
  }
  return worst;
}

inline double gradient_error(const GraphFn& f, const std::vector<Tensor>& params, double h = 1e-5) {
  return max_relative_error(analytic_grads(f, params), numeric_grads(f, params, h));
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace uqtest
