#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "histogen/core/errors.hpp"

namespace histogen::fid {

// Streaming sufficient statistics (count, mean, centered second moment) of a
// feature distribution. Batch updates and merges use the numerically stable
// pairwise form, so any sharding/merge order reproduces the dense computation
// to tight tolerance; this is what makes 200k-image runs feasible.
class FeatureStats {
public:
    FeatureStats() = default;
    explicit FeatureStats(Eigen::Index d)
        : d_(d), mean_(Eigen::VectorXd::Zero(d)), m2_(Eigen::MatrixXd::Zero(d, d)) {}

    Eigen::Index dim() const { return d_; }
    std::int64_t count() const { return n_; }
    const Eigen::VectorXd& mean() const { return mean_; }

    bool covariance_valid() const { return n_ >= 2; }

    // Unbiased covariance (divide by n-1), matching the reference FID
    // convention. Undefined (throws) for n < 2.
    Eigen::MatrixXd covariance() const {
        if (!covariance_valid()) {
            throw ConfigError("FeatureStats: covariance undefined for n=" + std::to_string(n_));
        }
        Eigen::MatrixXd cov = m2_ / static_cast<double>(n_ - 1);
        return 0.5 * (cov + cov.transpose());  // enforce exact symmetry
    }

    // batch: one feature vector per row.
    void accumulate(const Eigen::MatrixXd& batch) {
        if (batch.cols() != d_) {
            throw ConfigError("FeatureStats: batch dimension " + std::to_string(batch.cols()) +
                              " != " + std::to_string(d_));
        }
        const std::int64_t nb = batch.rows();
        if (nb == 0) return;
        const Eigen::VectorXd mb = batch.colwise().mean();
        Eigen::MatrixXd centered = batch.rowwise() - mb.transpose();
        FeatureStats other(d_);
        other.n_ = nb;
        other.mean_ = mb;
        other.m2_ = centered.transpose() * centered;
        merge(other);
    }

    // Associative, order-insensitive (within roundoff) pairwise merge.
    void merge(const FeatureStats& other) {
        if (other.d_ != d_) throw ConfigError("FeatureStats: merge dimension mismatch");
        if (other.n_ == 0) return;
        if (n_ == 0) {
            *this = other;
            return;
        }
        const double na = static_cast<double>(n_);
        const double nb = static_cast<double>(other.n_);
        const double nt = na + nb;
        const Eigen::VectorXd delta = other.mean_ - mean_;
        mean_ += (nb / nt) * delta;
        m2_ += other.m2_ + (na * nb / nt) * (delta * delta.transpose());
        n_ += other.n_;
    }

    bool all_finite() const { return mean_.allFinite() && m2_.allFinite(); }

    // Serialization hooks (see stats cache IO in score.hpp).
    const Eigen::MatrixXd& m2() const { return m2_; }
    static FeatureStats from_raw(Eigen::Index d, std::int64_t n, Eigen::VectorXd mean,
                                 Eigen::MatrixXd m2) {
        FeatureStats s(d);
        s.n_ = n;
        s.mean_ = std::move(mean);
        s.m2_ = std::move(m2);
        return s;
    }

private:
    Eigen::Index d_ = 0;
    std::int64_t n_ = 0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd m2_;
};

// Spec-level free function: accumulate a batch into a copy of stats.
inline FeatureStats accumulate(const FeatureStats& stats, const Eigen::MatrixXd& batch) {
    FeatureStats out = stats;
    out.accumulate(batch);
    return out;
}

}  // namespace histogen::fid
