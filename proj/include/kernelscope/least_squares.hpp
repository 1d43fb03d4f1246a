#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "kernelscope/errors.hpp"
#include "kernelscope/log.hpp"

namespace kernelscope {

enum class SingularPolicy {
    /// Rank-deficient design raises ConditioningError.
    raise,
    /// Rank-deficient design is solved with a 1e-10 * trace ridge on the normal equations.
    ridge,
};

/// Estimate of the 2-norm condition number from the diagonal of a pivoted R factor.
inline double condition_estimate(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
    const auto& r = qr.matrixR();
    const Eigen::Index n = std::min(r.rows(), r.cols());
    if (n == 0) return 1.0;
    const double first = std::abs(r(0, 0));
    const double last = std::abs(r(n - 1, n - 1));
    if (last == 0.0) return std::numeric_limits<double>::infinity();
    return first / last;
}

/// QR-based least squares solver for a fixed design, reusable across many right-hand sides.
class LeastSquares {
public:
    LeastSquares(const Eigen::MatrixXd& X, SingularPolicy policy, std::string label = "least squares")
        : label_(std::move(label)), qr_(X) {
        full_rank_ = qr_.rank() == X.cols();
        if (full_rank_) return;
        const double cond = condition_estimate(qr_);
        if (policy == SingularPolicy::raise)
            throw ConditioningError(label_ + ": rank-deficient design (rank " + std::to_string(qr_.rank()) + " of " +
                                        std::to_string(X.cols()) + ", condition estimate " + std::to_string(cond) + ")",
                                    cond);
        Eigen::MatrixXd gram = X.transpose() * X;
        const double ridge = 1e-10 * gram.trace();
        gram.diagonal().array() += ridge > 0.0 ? ridge : 1e-300;
        ridge_ = gram.ldlt();
        xt_ = X.transpose();
        log::info(label_ + ": design numerically singular (condition estimate " + std::to_string(cond) +
                  "), solved with ridge " + std::to_string(ridge));
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        if (full_rank_) return qr_.solve(rhs);
        return ridge_.solve(xt_ * rhs);
    }

    bool full_rank() const { return full_rank_; }

private:
    std::string label_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
    bool full_rank_ = true;
    Eigen::LDLT<Eigen::MatrixXd> ridge_;
    Eigen::MatrixXd xt_;
};

}  // namespace kernelscope
