#include "gsinsert/optim.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include "gsinsert/errors.hpp"

namespace gsinsert {

std::vector<double> relative_fd_steps(const std::vector<double>& params, double rel_step) {
    std::vector<double> steps(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        steps[i] = rel_step * std::max(1.0, std::abs(params[i]));
    return steps;
}

std::vector<double> central_fd_gradient(const LossFn& f, const std::vector<double>& params,
                                        const std::vector<double>& steps) {
    if (steps.size() != params.size())
        throw Degenerate("finite-difference steps must match parameter count");
    std::vector<std::future<double>> evals;
    evals.reserve(params.size() * 2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (const double sign : {+1.0, -1.0}) {
            evals.push_back(std::async(std::launch::async, [&f, &params, &steps, i, sign] {
                std::vector<double> p = params;
                p[i] += sign * steps[i];
                return f(p);
            }));
        }
    }
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double plus = evals[2 * i].get();
        const double minus = evals[2 * i + 1].get();
        grad[i] = (plus - minus) / (2.0 * steps[i]);
    }
    return grad;
}

GdResult gradient_descent(
    const LossFn& f, std::vector<double> init, const GdConfig& cfg, const ProjectFn& project,
    const std::function<std::vector<double>(const std::vector<double>&)>& gradient) {
    if (cfg.learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (cfg.max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!cfg.fd_steps.empty() && cfg.fd_steps.size() != init.size())
        throw ConfigError("fd_steps size must match parameter count");

    if (project) project(init);
    GdResult result;
    result.params = std::move(init);
    double loss = f(result.params);
    if (!std::isfinite(loss)) throw NonFinite("loss is non-finite at the initial point");
    result.loss_history.push_back(loss);

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        const std::vector<double> steps =
            cfg.fd_steps.empty() ? relative_fd_steps(result.params, cfg.fd_rel_step)
                                 : cfg.fd_steps;
        const std::vector<double> grad = gradient
                                             ? gradient(result.params)
                                             : central_fd_gradient(f, result.params, steps);
        double grad_norm_sq = 0;
        for (const double g : grad) {
            if (!std::isfinite(g)) throw NonFinite("gradient is non-finite");
            grad_norm_sq += g * g;
        }
        if (grad_norm_sq == 0.0) {
            result.converged = true;
            break;
        }

        double step = cfg.learning_rate;
        bool accepted = false;
        for (int halving = 0; halving <= cfg.max_halvings; ++halving) {
            std::vector<double> candidate = result.params;
            for (std::size_t i = 0; i < candidate.size(); ++i) candidate[i] -= step * grad[i];
            if (project) project(candidate);
            const double candidate_loss = f(candidate);
            if (std::isfinite(candidate_loss) && candidate_loss <= loss) {
                const double delta = loss - candidate_loss;
                result.params = std::move(candidate);
                loss = candidate_loss;
                result.loss_history.push_back(loss);
                ++result.iters;
                accepted = true;
                if (delta < cfg.convergence_tol) result.converged = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || result.converged) {
            if (!accepted) result.converged = true;  // no descent direction left
            break;
        }
    }
    result.final_loss = loss;
    return result;
}

std::vector<double> pack_dof(const DoF& dof) {
    return {dof.scale.x,       dof.scale.y,       dof.scale.z,       dof.rotation.w,
            dof.rotation.x,    dof.rotation.y,    dof.rotation.z,    dof.translation.x,
            dof.translation.y, dof.translation.z};
}

void project_dof_params(std::vector<double>& params) {
    if (params.size() != 10) throw Degenerate("DoF parameter vector must have 10 entries");
    const double n = std::sqrt(params[3] * params[3] + params[4] * params[4] +
                               params[5] * params[5] + params[6] * params[6]);
    if (n <= 1e-12) throw NonFinite("quaternion parameters collapsed to zero norm");
    for (int i = 3; i < 7; ++i) params[i] /= n;
}

DoF unpack_dof(const std::vector<double>& params) {
    if (params.size() != 10) throw Degenerate("DoF parameter vector must have 10 entries");
    DoF dof;
    dof.scale = {params[0], params[1], params[2]};
    dof.rotation = UnitQuat(params[3], params[4], params[5], params[6]);
    dof.translation = {params[7], params[8], params[9]};
    dof.validate();
    return dof;
}

}  // namespace gsinsert
