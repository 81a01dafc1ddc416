// Small deterministic optimization helpers shared by the fitting stages:
// central finite-difference gradients and gradient descent with backtracking
// line search (monotone non-increasing loss).
#pragma once

#include <functional>
#include <vector>

#include "gsinsert/geometry.hpp"

namespace gsinsert {

using LossFn = std::function<double(const std::vector<double>&)>;
using ProjectFn = std::function<void(std::vector<double>&)>;

// Central finite differences: g_i = (f(p + h_i e_i) - f(p - h_i e_i)) / (2 h_i).
// Evaluations run in parallel; the result is ordered by parameter index.
std::vector<double> central_fd_gradient(const LossFn& f, const std::vector<double>& params,
                                        const std::vector<double>& steps);

// Convenience: uniform relative step h_i = rel_step * max(1, |p_i|).
std::vector<double> relative_fd_steps(const std::vector<double>& params, double rel_step);

struct GdConfig {
    double learning_rate = 5e-3;
    int max_iters = 500;
    double convergence_tol = 1e-5;  // on loss decrease per accepted step
    double fd_rel_step = 1e-4;
    std::vector<double> fd_steps;   // absolute per-parameter steps; overrides
                                    // fd_rel_step when nonempty
    int max_halvings = 30;          // backtracking budget per iteration
};

struct GdResult {
    std::vector<double> params;
    double final_loss = 0.0;
    int iters = 0;
    bool converged = false;           // loss delta fell below tol before max_iters
    std::vector<double> loss_history; // loss after each accepted iteration,
                                      // loss_history.front() = initial loss
};

// Projected gradient descent with backtracking halving: a step is accepted
// only when it does not increase the loss, so the history is monotone
// non-increasing.  `project` (may be null) normalizes params after each
// trial step, e.g. quaternion renormalization.  Optional `gradient`
// (may be null) supplies analytic gradients; otherwise central finite
// differences are used.
GdResult gradient_descent(const LossFn& f, std::vector<double> init, const GdConfig& cfg,
                          const ProjectFn& project = nullptr,
                          const std::function<std::vector<double>(const std::vector<double>&)>&
                              gradient = nullptr);

// Ten-parameter packing of a full DoF: 3 scale, 4 quaternion components
// (ambient, renormalized by the projection), 3 translation.
std::vector<double> pack_dof(const DoF& dof);
DoF unpack_dof(const std::vector<double>& params);  // normalizes the quaternion
void project_dof_params(std::vector<double>& params);

}  // namespace gsinsert
