#pragma once

// Thin RAII wrapper over the GSL simplex minimiser (nmsimplex2).

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace eptomo::detail {

struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SimplexOptions {
  double initial_step = 0.2;
  double size_tolerance = 1e-8;  // simplex characteristic size at convergence
  int max_iterations = 5000;
};

inline SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                 const std::vector<double>& start, const SimplexOptions& options = {}) {
  const std::size_t n = start.size();
  if (n == 0) throw std::invalid_argument("nelder_mead: empty start point");

  struct Context {
    const std::function<double(const std::vector<double>&)>* f;
    std::vector<double> scratch;
  } ctx{&f, std::vector<double>(n)};

  gsl_multimin_function fn;
  fn.n = n;
  fn.params = &ctx;
  fn.f = [](const gsl_vector* v, void* params) {
    auto* c = static_cast<Context*>(params);
    for (std::size_t i = 0; i < c->scratch.size(); ++i) c->scratch[i] = gsl_vector_get(v, i);
    return (*c->f)(c->scratch);
  };

  using VecPtr = std::unique_ptr<gsl_vector, decltype(&gsl_vector_free)>;
  using MinPtr = std::unique_ptr<gsl_multimin_fminimizer, decltype(&gsl_multimin_fminimizer_free)>;
  VecPtr x0(gsl_vector_alloc(n), &gsl_vector_free);
  VecPtr step(gsl_vector_alloc(n), &gsl_vector_free);
  for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x0.get(), i, start[i]);
  gsl_vector_set_all(step.get(), options.initial_step);

  MinPtr s(gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n), &gsl_multimin_fminimizer_free);
  gsl_multimin_fminimizer_set(s.get(), &fn, x0.get(), step.get());

  SimplexResult out;
  for (out.iterations = 0; out.iterations < options.max_iterations;) {
    ++out.iterations;
    if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s.get()), options.size_tolerance) == GSL_SUCCESS) {
      out.converged = true;
      break;
    }
  }
  out.x.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.x[i] = gsl_vector_get(s->x, i);
  out.value = s->fval;
  return out;
}

}  // namespace eptomo::detail
