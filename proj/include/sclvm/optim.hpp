#ifndef SCLVM_OPTIM_HPP
#define SCLVM_OPTIM_HPP

#include "sclvm/common.hpp"

#include <functional>
#include <vector>

namespace sclvm {

/// Objective for minimization: returns the value at x and fills grad (same
/// size as x). Must be deterministic.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct OptimOptions {
    int max_iters = 3000;
    double step_size = 1e-2;       // Adam step / L-BFGS initial trial step
    double convergence_tol = 1e-7; // relative value change
    int patience = 10;             // consecutive small changes before stopping
    // Adam moments
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // L-BFGS
    int memory = 10;
    double armijo_c = 1e-4;
    double backtrack = 0.5;
    int max_line_steps = 30;
};

struct OptimResult {
    Vector best_x;
    double best_value = 0.0;
    std::vector<double> trace;  // value at x0, then one entry per iteration
    int iterations = 0;
    bool converged = false;
    bool aborted = false;  // numerical failure; best_x still holds the best visited point
};

OptimResult adam_minimize(const Objective& f, const Vector& x0, const OptimOptions& opts);
OptimResult lbfgs_minimize(const Objective& f, const Vector& x0, const OptimOptions& opts);

}  // namespace sclvm

#endif
