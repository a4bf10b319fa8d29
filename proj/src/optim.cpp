#include "sclvm/optim.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace sclvm {

namespace {

struct ConvergenceMonitor {
    double tol;
    int patience;
    int streak = 0;
    double last = 0.0;
    bool has_last = false;

    bool update(double value) {
        if (has_last) {
            const double rel = std::abs(value - last) / std::max(1.0, std::abs(value));
            streak = rel < tol ? streak + 1 : 0;
        }
        last = value;
        has_last = true;
        return streak >= patience;
    }
};

bool track_best(OptimResult& out, const Vector& x, double value) {
    if (!std::isfinite(value)) return false;
    if (out.trace.empty() || value < out.best_value) {
        out.best_value = value;
        out.best_x = x;
    }
    return true;
}

}  // namespace

OptimResult adam_minimize(const Objective& f, const Vector& x0, const OptimOptions& opts) {
    require(opts.max_iters >= 1, "max_iters must be at least 1");
    require(opts.step_size > 0.0 && opts.convergence_tol > 0.0,
            "step size and tolerance must be positive");

    OptimResult out;
    Vector x = x0;
    Vector grad(x.size());
    // A failure at the starting point leaves nothing to fall back on, so it
    // propagates; failures later in the run abort with the best state kept.
    double value = f(x, grad);
    if (!track_best(out, x, value))
        throw numerical_error("objective is not finite at the starting point");
    out.trace.push_back(value);

    Vector m = Vector::Zero(x.size());
    Vector v = Vector::Zero(x.size());
    ConvergenceMonitor monitor{opts.convergence_tol, opts.patience};
    monitor.update(value);

    for (int t = 1; t <= opts.max_iters; ++t) {
        m = opts.beta1 * m + (1.0 - opts.beta1) * grad;
        v = opts.beta2 * v + (1.0 - opts.beta2) * grad.array().square().matrix();
        const double bc1 = 1.0 - std::pow(opts.beta1, t);
        const double bc2 = 1.0 - std::pow(opts.beta2, t);
        x.array() -= opts.step_size * (m.array() / bc1) /
                     ((v.array() / bc2).sqrt() + opts.eps);

        try {
            value = f(x, grad);
        } catch (const numerical_error&) {
            out.aborted = true;
            break;
        }
        if (!std::isfinite(value) || !grad.allFinite()) {
            out.aborted = true;
            break;
        }
        track_best(out, x, value);
        out.trace.push_back(value);
        out.iterations = t;
        if (monitor.update(value)) {
            out.converged = true;
            break;
        }
    }
    return out;
}

OptimResult lbfgs_minimize(const Objective& f, const Vector& x0, const OptimOptions& opts) {
    require(opts.max_iters >= 1, "max_iters must be at least 1");
    require(opts.memory >= 1, "history size must be at least 1");

    OptimResult out;
    Vector x = x0;
    Vector grad(x.size());
    double value = f(x, grad);
    if (!track_best(out, x, value))
        throw numerical_error("objective is not finite at the starting point");
    out.trace.push_back(value);

    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;
    ConvergenceMonitor monitor{opts.convergence_tol, opts.patience};
    monitor.update(value);

    Vector q, direction, x_new, grad_new(x.size());
    for (int t = 1; t <= opts.max_iters; ++t) {
        // Two-loop recursion.
        q = grad;
        const auto k = static_cast<int>(s_hist.size());
        std::vector<double> alpha(static_cast<std::size_t>(k));
        for (int i = k - 1; i >= 0; --i) {
            alpha[static_cast<std::size_t>(i)] =
                rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
            q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
        }
        double gamma = 1.0;
        if (k > 0) {
            const auto& s = s_hist.back();
            const auto& yv = y_hist.back();
            gamma = s.dot(yv) / yv.squaredNorm();
        }
        q *= gamma;
        for (int i = 0; i < k; ++i) {
            const double beta =
                rho_hist[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)].dot(q);
            q += (alpha[static_cast<std::size_t>(i)] - beta) * s_hist[static_cast<std::size_t>(i)];
        }
        direction = -q;
        double dir_deriv = grad.dot(direction);
        if (!(dir_deriv < 0.0)) {
            direction = -grad;
            dir_deriv = grad.dot(direction);
            if (!(dir_deriv < 0.0)) break;  // stationary
        }

        // Armijo backtracking.
        double step = (k == 0) ? opts.step_size / std::max(1.0, grad.norm()) : 1.0;
        bool accepted = false;
        double value_new = value;
        for (int ls = 0; ls < opts.max_line_steps; ++ls) {
            x_new = x + step * direction;
            bool ok = true;
            try {
                value_new = f(x_new, grad_new);
            } catch (const numerical_error&) {
                ok = false;
            }
            if (ok && std::isfinite(value_new) && grad_new.allFinite() &&
                value_new <= value + opts.armijo_c * step * dir_deriv) {
                accepted = true;
                break;
            }
            step *= opts.backtrack;
        }
        if (!accepted) break;

        Vector s_vec = x_new - x;
        Vector y_vec = grad_new - grad;
        const double sy = s_vec.dot(y_vec);
        if (sy > 1e-12 * s_vec.norm() * y_vec.norm()) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        x = x_new;
        grad = grad_new;
        value = value_new;
        track_best(out, x, value);
        out.trace.push_back(value);
        out.iterations = t;
        if (monitor.update(value)) {
            out.converged = true;
            break;
        }
    }
    return out;
}

}  // namespace sclvm
