#include "sahp/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace sahp {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

LbfgsResult lbfgs_minimize(const std::function<double(const std::vector<double>&, std::vector<double>&)>& fn,
                           std::vector<double> x0, const LbfgsOptions& opt) {
    std::vector<double> x = std::move(x0);
    const std::size_t n = x.size();
    std::vector<double> grad(n, 0.0);
    double value = fn(x, grad);
    if (!std::isfinite(value)) throw std::runtime_error("lbfgs: objective not finite at the starting point");

    LbfgsResult result;
    result.trace.emplace_back(0, value);

    std::deque<std::vector<double>> s_hist, y_hist;
    std::deque<double> rho_hist;

    std::vector<double> direction(n), x_new(n), grad_new(n), s(n), y(n), q(n);
    for (int iter = 1; iter <= opt.max_iterations; ++iter) {
        if (norm2(grad) <= opt.gradient_tolerance) {
            result.converged = true;
            break;
        }
        // Two-loop recursion.
        q = grad;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * dot(s_hist[k], q);
            for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[k] * y_hist[k][i];
        }
        double h0 = 1.0;
        if (!s_hist.empty()) {
            double yy = dot(y_hist.back(), y_hist.back());
            if (yy > 0.0) h0 = dot(s_hist.back(), y_hist.back()) / yy;
        }
        for (std::size_t i = 0; i < n; ++i) q[i] *= h0;
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            double beta = rho_hist[k] * dot(y_hist[k], q);
            for (std::size_t i = 0; i < n; ++i) q[i] += s_hist[k][i] * (alpha[k] - beta);
        }
        for (std::size_t i = 0; i < n; ++i) direction[i] = -q[i];

        double slope = dot(grad, direction);
        if (!(slope < 0.0)) {
            // Fall back to steepest descent when curvature info is unusable.
            for (std::size_t i = 0; i < n; ++i) direction[i] = -grad[i];
            slope = dot(grad, direction);
            if (!(slope < 0.0)) {
                result.converged = true;
                break;
            }
        }

        double step = 1.0;
        double value_new = 0.0;
        bool accepted = false;
        for (int bt = 0; bt < opt.max_backtracks; ++bt) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * direction[i];
            value_new = fn(x_new, grad_new);
            if (std::isfinite(value_new) && value_new <= value + opt.armijo_c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= opt.backtrack_factor;
        }
        if (!accepted) break;

        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = grad_new[i] - grad[i];
        }
        double sy = dot(s, y);
        if (sy > 1e-12) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        double improvement = value - value_new;
        x = x_new;
        grad = grad_new;
        value = value_new;
        result.iterations = iter;
        result.trace.emplace_back(iter, value);
        if (improvement <= opt.relative_tolerance * (std::abs(value) + 1e-12)) {
            result.converged = true;
            break;
        }
    }
    result.x = std::move(x);
    result.value = value;
    return result;
}

}  // namespace sahp
