#pragma once

// Central finite-difference verification of analytic gradients (64-bit).

#include <functional>

#include "dualdis/autograd.hpp"

namespace dualdis {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  // "<parameter>[index]" of the largest error
  std::size_t checked = 0;
};

/// Relative error used throughout: |a - n| / max(|a|, |n|, 1e-3).
inline double gradient_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

/// Compares d loss / d p for every element of every parameter with
/// (L(p + h) - L(p - h)) / 2h. `loss` must build a scalar on the given tape.
inline GradCheckResult check_gradients(const std::function<Var<double>(Tape<double>&)>& loss,
                                       const std::vector<Parameter<double>*>& params, double step = 1e-3) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&loss] {
    Tape<double> tape(false);
    return loss(tape).value()[0];
  };
  GradCheckResult r;
  for (auto* p : params) {
    const Tensor<double> analytic = p->grad();
    for (std::size_t i = 0; i < p->value().size(); ++i) {
      const double orig = p->value()[i];
      p->value()[i] = orig + step;
      const double up = eval();
      p->value()[i] = orig - step;
      const double down = eval();
      p->value()[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double err = gradient_rel_error(analytic[i], numeric);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p->name() + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace dualdis
