#pragma once

#include <functional>
#include <span>

#include "ncforge/autodiff.hpp"
#include "ncforge/matrix.hpp"

namespace ncf {

struct ValueAndGrad {
  double value = 0.0;
  Vector grad;
};

using DifferentiableFn = std::function<ValueAndGrad(std::span<const double>)>;

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|). Throws NumericalError if f is non-finite at any probe point.
double grad_check(const DifferentiableFn& f, std::span<const double> x, double eps);

// Wraps a graph builder as a DifferentiableFn over a rows x cols leaf.
// The builder receives a fresh graph and the leaf, and returns the scalar
// output node.
using GraphBuilder = std::function<Var(Graph&, Var)>;
DifferentiableFn graph_function(GraphBuilder build, std::size_t rows, std::size_t cols);

}  // namespace ncf
