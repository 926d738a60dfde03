#pragma once

#include <Eigen/Dense>

#include "histogen/fid/stats.hpp"

namespace histogen::fid {

struct SqrtmResult {
    // (A^{1/2} B A^{1/2})^{1/2}: similar to (AB)^{1/2}, hence trace-equal.
    Eigen::MatrixXd symmetric_sqrt;
    double trace = 0;
    bool stabilized = false;   // true when the eps*I retry was taken
    double applied_eps = 0;
};

// Trace of (AB)^{1/2} for symmetric PSD A, B via the symmetric
// eigendecomposition route. If roundoff drives eigenvalues below -tol the
// computation retries once with A+eps*I, B+eps*I and reports it.
SqrtmResult sqrtm_product(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                          double eps_stab = 1e-6);

struct FrechetResult {
    double distance = 0;  // FID value (d^2 form), clamped at 0
    bool stabilized = false;
    double applied_eps = 0;
};

// d^2 = |mu_a - mu_b|^2 + Tr(Sigma_a + Sigma_b - 2 (Sigma_a Sigma_b)^{1/2})
FrechetResult frechet_distance_full(const FeatureStats& a, const FeatureStats& b,
                                    double eps_stab = 1e-6);

inline double frechet_distance(const FeatureStats& a, const FeatureStats& b,
                               double eps_stab = 1e-6) {
    return frechet_distance_full(a, b, eps_stab).distance;
}

}  // namespace histogen::fid
