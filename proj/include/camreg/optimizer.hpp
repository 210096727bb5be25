#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "camreg/geometry.hpp"

namespace camreg {

class NonFiniteResidual : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct RobustLoss {
    enum class Kind { None, Huber, Cauchy };

    Kind kind = Kind::None;
    double scale = 1.0;

    static RobustLoss none() { return {}; }
    static RobustLoss huber(double delta) { return {Kind::Huber, delta}; }
    static RobustLoss cauchy(double c) { return {Kind::Cauchy, c}; }

    /// rho(s) for a squared residual norm s >= 0.
    double evaluate(double squared_norm) const;
    /// d rho / d s, the IRLS weight.
    double weight(double squared_norm) const;
};

/// Tag that decides how a parameter block is perturbed.
/// SE3 blocks store [qw, qx, qy, qz, tx, ty, tz] and take 6-dim increments
/// [d_translation, d_rotation]: t += dt, q = q * exp(dphi).
enum class Manifold { Euclidean, Scalar, SE3 };

int tangent_size(Manifold m, int ambient_size);
Eigen::VectorXd pose_to_params(const Pose &p);
Pose params_to_pose(const Eigen::VectorXd &v);
/// x [+] delta for a block of the given manifold.
Eigen::VectorXd retract(Manifold m, const Eigen::VectorXd &x, const Eigen::VectorXd &delta);

/// Read-only view of the parameter blocks a residual depends on, in the
/// order they were listed when the residual was added.
class BlockValues {
  public:
    explicit BlockValues(std::vector<const Eigen::VectorXd *> blocks) : blocks_(std::move(blocks)) {}

    std::size_t size() const { return blocks_.size(); }
    const Eigen::VectorXd &operator[](std::size_t i) const { return *blocks_[i]; }
    Pose pose(std::size_t i) const { return params_to_pose(*blocks_[i]); }
    double scalar(std::size_t i) const { return (*blocks_[i])(0); }
    Vec3 vec3(std::size_t i) const { return blocks_[i]->head<3>(); }

  private:
    std::vector<const Eigen::VectorXd *> blocks_;
};

using ResidualFunction = std::function<Eigen::VectorXd(const BlockValues &)>;

/// Central-difference Jacobian of `fn` with respect to the tangent coordinates
/// of every block, columns concatenated in block order.
/// Throws NonFiniteResidual if any evaluation is NaN or infinite.
Eigen::MatrixXd numerical_jacobian(const ResidualFunction &fn, const std::vector<Eigen::VectorXd> &blocks,
                                   const std::vector<Manifold> &manifolds, double step = 1e-6);

using BlockId = std::size_t;

struct SolverOptions;
struct SolveReport;

class LeastSquaresProblem {
  public:
    BlockId add_parameter_block(Eigen::VectorXd initial, Manifold manifold = Manifold::Euclidean);
    BlockId add_pose_block(const Pose &initial) { return add_parameter_block(pose_to_params(initial), Manifold::SE3); }
    BlockId add_scalar_block(double initial) {
        return add_parameter_block(Eigen::VectorXd::Constant(1, initial), Manifold::Scalar);
    }

    /// Throws std::invalid_argument when a block id does not exist.
    void add_residual_block(int residual_size, ResidualFunction fn, std::vector<BlockId> blocks,
                            RobustLoss loss = RobustLoss::none());

    const Eigen::VectorXd &value(BlockId id) const { return params_.at(id).value; }
    Pose pose(BlockId id) const { return params_to_pose(value(id)); }
    double scalar(BlockId id) const { return value(id)(0); }

    std::size_t num_parameter_blocks() const { return params_.size(); }
    std::size_t num_residual_blocks() const { return residuals_.size(); }
    int num_tangent_parameters() const;

    /// Sum of robustified squared residual norms at the current values.
    double cost() const;

  private:
    friend SolveReport solve(LeastSquaresProblem &problem, const SolverOptions &options);

    struct ParameterBlock {
        Eigen::VectorXd value;
        Manifold manifold;
        int tangent_offset;
        int tangent_size;
    };
    struct ResidualBlock {
        int size;
        ResidualFunction fn;
        std::vector<BlockId> blocks;
        RobustLoss loss;
    };

    BlockValues view(const ResidualBlock &r) const;

    std::vector<ParameterBlock> params_;
    std::vector<ResidualBlock> residuals_;
    int tangent_dim_ = 0;
};

struct SolverOptions {
    int max_iterations = 100;
    double gradient_tolerance = 1e-10;
    double function_tolerance = 1e-12;
    /// The function tolerance only applies to steps taken with lambda at or
    /// below this value.
    double function_tolerance_max_lambda = 1e-6;
    double parameter_tolerance = 1e-14;
    double initial_lambda = 1e-4;
    double min_lambda = 1e-12;
    double max_lambda = 1e6;
    double jacobian_step = 1e-6;
};

enum class TerminationReason {
    NoParameters,
    GradientTolerance,
    FunctionTolerance,
    ParameterTolerance,
    DampingLimit,
    MaxIterations,
};

std::string to_string(TerminationReason r);

struct SolveReport {
    bool converged = false;
    int iterations = 0;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    TerminationReason termination = TerminationReason::NoParameters;
    /// Cost after each accepted step, starting with the initial cost. Never
    /// increases by more than the rounding of the cost (64 eps relative), which
    /// only happens on final polishing steps chosen by gradient norm.
    std::vector<double> cost_history;
};

/// Levenberg-Marquardt with IRLS reweighting of robust residual blocks.
/// Parameters are updated in place. MaxIterations is reported, not thrown.
SolveReport solve(LeastSquaresProblem &problem, const SolverOptions &options = {});

}  // namespace camreg
