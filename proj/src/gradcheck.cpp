#include "ncforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ncforge/error.hpp"

namespace ncf {

double grad_check(const DifferentiableFn& f, std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("grad_check: eps must be positive");
  const ValueAndGrad at = f(x);
  if (!std::isfinite(at.value)) throw NumericalError("grad_check: f non-finite at x");
  if (at.grad.size() != x.size()) throw ShapeError("grad_check: gradient length != x length");

  Vector probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe).value;
    probe[i] = x[i] - eps;
    const double down = f(probe).value;
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("grad_check: f non-finite at probe " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(at.grad[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

DifferentiableFn graph_function(GraphBuilder build, std::size_t rows, std::size_t cols) {
  return [build = std::move(build), rows, cols](std::span<const double> x) {
    Graph g;
    Var leaf = g.leaf(Matrix(rows, cols, std::vector<double>(x.begin(), x.end())));
    Var out = build(g, leaf);
    g.backward(out);
    return ValueAndGrad{g.value(out).item(), g.grad(leaf).data()};
  };
}

}  // namespace ncf
