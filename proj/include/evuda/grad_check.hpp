#pragma once

#include <functional>
#include <span>
#include <vector>

#include "evuda/autodiff.hpp"

namespace evuda {

/// Builds a scalar output on `tape` from the tracked inputs.
using ScalarGraph = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

/// Largest |analytic - central difference| / max(1, |analytic|) over every
/// coordinate of every input.
double grad_check(const ScalarGraph& fn, const std::vector<Tensor>& points, double step = 1e-5);

/// Single-input convenience overload.
double grad_check(const std::function<Var(Tape&, Var)>& fn, const Tensor& point, double step = 1e-5);

}  // namespace evuda
