#include "camreg/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include <Eigen/Cholesky>

namespace camreg {

double RobustLoss::evaluate(double s) const {
    switch (kind) {
    case Kind::None:
        return s;
    case Kind::Huber: {
        const double d2 = scale * scale;
        return s <= d2 ? s : 2.0 * scale * std::sqrt(s) - d2;
    }
    case Kind::Cauchy: {
        const double c2 = scale * scale;
        return c2 * std::log1p(s / c2);
    }
    }
    return s;
}

double RobustLoss::weight(double s) const {
    switch (kind) {
    case Kind::None:
        return 1.0;
    case Kind::Huber:
        return s <= scale * scale ? 1.0 : scale / std::sqrt(s);
    case Kind::Cauchy:
        return 1.0 / (1.0 + s / (scale * scale));
    }
    return 1.0;
}

int tangent_size(Manifold m, int ambient_size) {
    switch (m) {
    case Manifold::SE3:
        return 6;
    case Manifold::Scalar:
        return 1;
    case Manifold::Euclidean:
        return ambient_size;
    }
    return ambient_size;
}

Eigen::VectorXd pose_to_params(const Pose &p) {
    Eigen::VectorXd v(7);
    v << p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z(), p.translation;
    return v;
}

Pose params_to_pose(const Eigen::VectorXd &v) {
    Pose p;
    p.rotation = UnitQuaternion(v(0), v(1), v(2), v(3));
    p.translation = v.segment<3>(4);
    return p;
}

Eigen::VectorXd retract(Manifold m, const Eigen::VectorXd &x, const Eigen::VectorXd &delta) {
    if (m != Manifold::SE3) return x + delta;
    Pose p = params_to_pose(x);
    p.translation += delta.head<3>();
    p.rotation = p.rotation * UnitQuaternion::exp(delta.tail<3>());
    return pose_to_params(p);
}

namespace {

Eigen::VectorXd checked_eval(const ResidualFunction &fn, const BlockValues &values) {
    Eigen::VectorXd r = fn(values);
    if (!r.allFinite()) throw NonFiniteResidual("residual evaluation produced a non-finite value");
    return r;
}

// Jacobian of one residual block; `blocks` is perturbed in place and restored.
Eigen::MatrixXd local_jacobian(const ResidualFunction &fn, std::vector<Eigen::VectorXd> &blocks,
                               const std::vector<Manifold> &manifolds, int residual_size, double step) {
    std::vector<const Eigen::VectorXd *> ptrs;
    int cols = 0;
    for (const auto &b : blocks) {
        ptrs.push_back(&b);
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) cols += tangent_size(manifolds[i], int(blocks[i].size()));
    const BlockValues view(ptrs);

    Eigen::MatrixXd J(residual_size, cols);
    int col = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const Eigen::VectorXd original = blocks[i];
        const int n = tangent_size(manifolds[i], int(original.size()));
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
        for (int k = 0; k < n; ++k, ++col) {
            delta(k) = step;
            blocks[i] = retract(manifolds[i], original, delta);
            const Eigen::VectorXd plus = checked_eval(fn, view);
            delta(k) = -step;
            blocks[i] = retract(manifolds[i], original, delta);
            const Eigen::VectorXd minus = checked_eval(fn, view);
            delta(k) = 0.0;
            J.col(col) = (plus - minus) / (2.0 * step);
        }
        blocks[i] = original;
    }
    return J;
}

}  // namespace

Eigen::MatrixXd numerical_jacobian(const ResidualFunction &fn, const std::vector<Eigen::VectorXd> &blocks,
                                   const std::vector<Manifold> &manifolds, double step) {
    if (blocks.size() != manifolds.size()) {
        throw std::invalid_argument("numerical_jacobian: blocks and manifolds differ in length");
    }
    std::vector<Eigen::VectorXd> work = blocks;
    std::vector<const Eigen::VectorXd *> ptrs;
    for (const auto &b : work) ptrs.push_back(&b);
    const Eigen::VectorXd r0 = checked_eval(fn, BlockValues(ptrs));
    return local_jacobian(fn, work, manifolds, int(r0.size()), step);
}

BlockId LeastSquaresProblem::add_parameter_block(Eigen::VectorXd initial, Manifold manifold) {
    if (!initial.allFinite()) throw std::invalid_argument("parameter block initialized with non-finite values");
    if (manifold == Manifold::SE3 && initial.size() != 7) {
        throw std::invalid_argument("SE3 parameter block must have 7 entries");
    }
    if (manifold == Manifold::Scalar && initial.size() != 1) {
        throw std::invalid_argument("Scalar parameter block must have 1 entry");
    }
    if (manifold == Manifold::SE3) initial = pose_to_params(params_to_pose(initial));
    const int n = tangent_size(manifold, int(initial.size()));
    params_.push_back({std::move(initial), manifold, tangent_dim_, n});
    tangent_dim_ += n;
    return params_.size() - 1;
}

void LeastSquaresProblem::add_residual_block(int residual_size, ResidualFunction fn, std::vector<BlockId> blocks,
                                             RobustLoss loss) {
    for (BlockId id : blocks) {
        if (id >= params_.size()) {
            std::ostringstream msg;
            msg << "residual block references unknown parameter block " << id;
            throw std::invalid_argument(msg.str());
        }
    }
    if (loss.kind != RobustLoss::Kind::None && !(loss.scale > 0.0)) {
        throw std::invalid_argument("robust loss scale must be positive");
    }
    residuals_.push_back({residual_size, std::move(fn), std::move(blocks), loss});
}

int LeastSquaresProblem::num_tangent_parameters() const { return tangent_dim_; }

BlockValues LeastSquaresProblem::view(const ResidualBlock &r) const {
    std::vector<const Eigen::VectorXd *> ptrs;
    ptrs.reserve(r.blocks.size());
    for (BlockId id : r.blocks) ptrs.push_back(&params_[id].value);
    return BlockValues(std::move(ptrs));
}

double LeastSquaresProblem::cost() const {
    double total = 0.0;
    for (const auto &r : residuals_) {
        const Eigen::VectorXd res = checked_eval(r.fn, view(r));
        total += r.loss.evaluate(res.squaredNorm());
    }
    return total;
}

std::string to_string(TerminationReason r) {
    switch (r) {
    case TerminationReason::NoParameters:
        return "no_parameters";
    case TerminationReason::GradientTolerance:
        return "gradient_tolerance";
    case TerminationReason::FunctionTolerance:
        return "function_tolerance";
    case TerminationReason::ParameterTolerance:
        return "parameter_tolerance";
    case TerminationReason::DampingLimit:
        return "damping_limit";
    case TerminationReason::MaxIterations:
        return "max_iterations";
    }
    return "unknown";
}

namespace {

struct NormalEquations {
    Eigen::MatrixXd H;
    Eigen::VectorXd g;
};

}  // namespace

namespace {
// Relative cost change treated as evaluation noise.
constexpr double kCostRoundoff = 64.0 * std::numeric_limits<double>::epsilon();
}  // namespace

SolveReport solve(LeastSquaresProblem &problem, const SolverOptions &options) {
    SolveReport report;
    const int n = problem.tangent_dim_;
    report.initial_cost = report.final_cost = problem.cost();
    report.cost_history.push_back(report.initial_cost);
    if (n == 0 || problem.residuals_.empty()) {
        report.converged = true;
        return report;
    }

    // Blocks are reduced in fixed order so solves are reproducible.
    auto linearize = [&]() {
        NormalEquations ne{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
        std::vector<Eigen::VectorXd> local;
        std::vector<Manifold> manifolds;
        for (const auto &r : problem.residuals_) {
            local.clear();
            manifolds.clear();
            for (BlockId id : r.blocks) {
                local.push_back(problem.params_[id].value);
                manifolds.push_back(problem.params_[id].manifold);
            }
            std::vector<const Eigen::VectorXd *> ptrs;
            for (const auto &b : local) ptrs.push_back(&b);
            const Eigen::VectorXd res = checked_eval(r.fn, BlockValues(ptrs));
            const Eigen::MatrixXd J = local_jacobian(r.fn, local, manifolds, r.size, options.jacobian_step);
            const double w = r.loss.weight(res.squaredNorm());

            int ci = 0;
            for (BlockId bi : r.blocks) {
                const auto &pi = problem.params_[bi];
                ne.g.segment(pi.tangent_offset, pi.tangent_size) +=
                    w * J.middleCols(ci, pi.tangent_size).transpose() * res;
                int cj = 0;
                for (BlockId bj : r.blocks) {
                    const auto &pj = problem.params_[bj];
                    ne.H.block(pi.tangent_offset, pj.tangent_offset, pi.tangent_size, pj.tangent_size) +=
                        w * J.middleCols(ci, pi.tangent_size).transpose() * J.middleCols(cj, pj.tangent_size);
                    cj += pj.tangent_size;
                }
                ci += pi.tangent_size;
            }
        }
        return ne;
    };

    double cost = report.initial_cost;
    double lambda = std::clamp(options.initial_lambda, options.min_lambda, options.max_lambda);
    NormalEquations ne = linearize();
    report.termination = TerminationReason::MaxIterations;

    while (report.iterations < options.max_iterations) {
        if (ne.g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
            report.termination = TerminationReason::GradientTolerance;
            break;
        }

        bool accepted = false;
        bool stop = false;
        while (!accepted) {
            Eigen::MatrixXd A = ne.H;
            for (int i = 0; i < n; ++i) A(i, i) += lambda * std::max(ne.H(i, i), 1e-6);
            const Eigen::VectorXd delta = -A.ldlt().solve(ne.g);

            double x_norm = 0.0;
            for (const auto &p : problem.params_) x_norm += p.value.squaredNorm();
            x_norm = std::sqrt(x_norm);
            if (!delta.allFinite() ||
                delta.norm() <= options.parameter_tolerance * (x_norm + options.parameter_tolerance)) {
                report.termination = TerminationReason::ParameterTolerance;
                stop = true;
                break;
            }

            std::vector<Eigen::VectorXd> saved;
            saved.reserve(problem.params_.size());
            for (auto &p : problem.params_) {
                saved.push_back(p.value);
                p.value = retract(p.manifold, p.value, delta.segment(p.tangent_offset, p.tangent_size));
            }

            double new_cost = std::numeric_limits<double>::infinity();
            try {
                new_cost = problem.cost();
            } catch (const NonFiniteResidual &) {
            }

            // Near the minimum the true decrease falls below the rounding of the
            // cost itself; there the gradient norm decides instead.
            bool polish = false;
            std::optional<NormalEquations> ne_new;
            if (new_cost > cost && new_cost - cost <= kCostRoundoff * cost) {
                ne_new = linearize();
                polish = ne_new->g.norm() < ne.g.norm();
            }
            if (new_cost <= cost || polish) {
                accepted = true;
                const double relative_decrease = std::max(cost - new_cost, 0.0) / cost;
                // A heavily damped step can stall the cost well short of the
                // minimum, so a small decrease only counts once steps are
                // close to Gauss-Newton.
                const bool undamped = lambda <= options.function_tolerance_max_lambda;
                cost = new_cost;
                report.cost_history.push_back(cost);
                ++report.iterations;
                lambda = std::max(lambda / 3.0, options.min_lambda);
                if ((undamped && relative_decrease < options.function_tolerance) || cost == 0.0) {
                    report.termination = TerminationReason::FunctionTolerance;
                    stop = true;
                } else {
                    ne = ne_new ? std::move(*ne_new) : linearize();
                }
            } else {
                for (std::size_t i = 0; i < saved.size(); ++i) problem.params_[i].value = std::move(saved[i]);
                lambda *= 10.0;
                if (lambda > options.max_lambda) {
                    report.termination = TerminationReason::DampingLimit;
                    stop = true;
                    break;
                }
            }
        }
        if (stop) break;
    }

    report.final_cost = cost;
    report.converged = report.termination != TerminationReason::MaxIterations;
    return report;
}

}  // namespace camreg
