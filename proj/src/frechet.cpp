#include "histogen/fid/frechet.hpp"

namespace histogen::fid {

namespace {

void check_symmetric(const Eigen::MatrixXd& m, const char* name) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw ConfigError(std::string("sqrtm_product: ") + name + " is not symmetric");
    }
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

// Returns (sqrt matrix, min eigenvalue of the symmetrized product).
std::pair<Eigen::MatrixXd, double> symmetric_route(const Eigen::MatrixXd& a,
                                                   const Eigen::MatrixXd& b) {
    const Eigen::MatrixXd sa = psd_sqrt(a);
    Eigen::MatrixXd m = sa * b * sa;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const double min_eig = es.eigenvalues().minCoeff();
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd root = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    return {std::move(root), min_eig};
}

}  // namespace

SqrtmResult sqrtm_product(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double eps_stab) {
    if (A.rows() != A.cols() || B.rows() != B.cols() || A.rows() != B.rows()) {
        throw ConfigError("sqrtm_product: dimension mismatch");
    }
    check_symmetric(A, "A");
    check_symmetric(B, "B");

    const double tol = 1e-9 * std::max(1.0, std::max(A.cwiseAbs().maxCoeff(),
                                                     B.cwiseAbs().maxCoeff()));
    SqrtmResult out;
    auto [root, min_eig] = symmetric_route(A, B);
    if (min_eig < -tol) {
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(A.rows(), A.cols());
        auto [root2, min_eig2] = symmetric_route(A + eps_stab * eye, B + eps_stab * eye);
        out.symmetric_sqrt = std::move(root2);
        out.stabilized = true;
        out.applied_eps = eps_stab;
    } else {
        out.symmetric_sqrt = std::move(root);
    }
    out.trace = out.symmetric_sqrt.trace();
    return out;
}

FrechetResult frechet_distance_full(const FeatureStats& a, const FeatureStats& b,
                                    double eps_stab) {
    if (a.dim() != b.dim()) throw ConfigError("frechet_distance: dimension mismatch");
    if (!a.covariance_valid() || !b.covariance_valid()) {
        throw ConfigError("frechet_distance: both sides need n >= 2");
    }
    if (!a.all_finite() || !b.all_finite()) {
        throw ConfigError("frechet_distance: non-finite statistics");
    }

    const Eigen::MatrixXd ca = a.covariance();
    const Eigen::MatrixXd cb = b.covariance();
    const SqrtmResult root = sqrtm_product(ca, cb, eps_stab);

    const double mean_term = (a.mean() - b.mean()).squaredNorm();
    const double trace_term = ca.trace() + cb.trace() - 2.0 * root.trace;

    FrechetResult out;
    out.distance = std::max(0.0, mean_term + trace_term);  // clamp roundoff negatives
    out.stabilized = root.stabilized;
    out.applied_eps = root.applied_eps;
    return out;
}

}  // namespace histogen::fid
