#pragma once

#include <functional>
#include <vector>

namespace sahp {

struct LbfgsOptions {
    int max_iterations = 1000;
    double relative_tolerance = 1e-6;
    double gradient_tolerance = 1e-10;
    int memory = 8;
    double armijo_c1 = 1e-4;
    double backtrack_factor = 0.5;
    int max_backtracks = 40;
};

struct LbfgsResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<std::pair<int, double>> trace;  // (iteration, value) including iteration 0
};

/// Limited-memory BFGS with Armijo backtracking line search. `fn` returns the
/// objective and fills the gradient. Accepted iterates are monotone
/// non-increasing in the objective.
LbfgsResult lbfgs_minimize(const std::function<double(const std::vector<double>&, std::vector<double>&)>& fn,
                           std::vector<double> x0, const LbfgsOptions& opt = {});

}  // namespace sahp
