#pragma once

// Test-only reference implementations, kept independent of the production
// code paths they check.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "histogen/core/rng.hpp"
#include "histogen/diffusion/schedule.hpp"
#include "histogen/nn/param.hpp"

namespace oracles {

using histogen::Index;
using histogen::Rng;

// ---- finite differences --------------------------------------------------

struct GradCheckResult {
    double max_rel_err = 0;
    int checked = 0;
};

// loss() must be a pure function of the parameter values; backward() must
// populate grads for the current point. Checks n_samples randomly chosen
// parameter coordinates with central differences.
inline GradCheckResult grad_check(histogen::nn::NamedParams<double>& params,
                                  const std::function<double()>& loss,
                                  const std::function<void()>& backward, int n_samples, Rng& rng,
                                  double h_scale = 1e-5) {
    for (auto& [name, p] : params) p->zero_grad();
    loss();
    backward();

    // flatten coordinates
    std::vector<std::pair<std::size_t, Index>> coords;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (Index i = 0; i < params[pi].second->value.size(); ++i) coords.push_back({pi, i});
    }
    GradCheckResult result;
    for (int s = 0; s < n_samples; ++s) {
        const auto [pi, i] = coords[rng.uniform_index(coords.size())];
        auto& p = *params[pi].second;
        const double analytic = p.grad[i];
        const double v0 = p.value[i];
        const double h = h_scale * std::max(1.0, std::abs(v0));
        p.value[i] = v0 + h;
        const double lp = loss();
        p.value[i] = v0 - h;
        const double lm = loss();
        p.value[i] = v0;
        const double numeric = (lp - lm) / (2 * h);
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        result.max_rel_err = std::max(result.max_rel_err, rel);
        ++result.checked;
    }
    return result;
}

// ---- dense feature statistics ---------------------------------------------

struct DenseStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased
};

inline DenseStats dense_stats(const Eigen::MatrixXd& all_rows) {
    DenseStats s;
    s.mean = all_rows.colwise().mean();
    Eigen::MatrixXd centered = all_rows.rowwise() - s.mean.transpose();
    s.cov = centered.transpose() * centered / static_cast<double>(all_rows.rows() - 1);
    return s;
}

// ---- FID oracle via general (non-symmetric) eigendecomposition ------------

// trace((A*B)^{1/2}) through the complex eigenvalues of the plain product;
// a genuinely different route from the production A^{1/2} B A^{1/2} path.
inline double sqrtm_trace_eig_oracle(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(A * B);
    double tr = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        std::complex<double> lam = es.eigenvalues()[i];
        if (lam.real() < 0 && std::abs(lam.imag()) < 1e-12) lam = {0.0, lam.imag()};
        tr += std::sqrt(lam).real();
    }
    return tr;
}

inline double fid_oracle(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a,
                         const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& cov_b) {
    const double mean_term = (mu_a - mu_b).squaredNorm();
    const double tr = cov_a.trace() + cov_b.trace() - 2.0 * sqrtm_trace_eig_oracle(cov_a, cov_b);
    return mean_term + tr;
}

// ---- extended-precision Denman-Beavers square root -------------------------

using LongMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

inline double sqrtm_trace_denman_beavers(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                         int iters = 60) {
    const LongMat P = (A * B).cast<long double>();
    LongMat Y = P;
    LongMat Z = LongMat::Identity(P.rows(), P.cols());
    for (int k = 0; k < iters; ++k) {
        const LongMat Yn = 0.5L * (Y + Z.inverse());
        const LongMat Zn = 0.5L * (Z + Y.inverse());
        Y = Yn;
        Z = Zn;
    }
    return static_cast<double>(Y.trace());
}

// ---- reference DDPM ancestral sampler --------------------------------------

// One ancestral step with a caller-supplied eps prediction.
inline Eigen::VectorXd ddpm_ancestral_step(const Eigen::VectorXd& z_t,
                                           const Eigen::VectorXd& eps_hat, int t,
                                           const histogen::diffusion::NoiseSchedule& sched,
                                           const Eigen::VectorXd& noise) {
    const double alpha = sched.alpha(t);
    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double beta = sched.beta(t);
    Eigen::VectorXd mean =
        (z_t - (beta / std::sqrt(1.0 - ab_t)) * eps_hat) / std::sqrt(alpha);
    if (t == 1) return mean;
    const double post_var = beta * (1.0 - ab_prev) / (1.0 - ab_t);
    return mean + std::sqrt(post_var) * noise;
}

// ---- independent tokenizer reimplementation --------------------------------

// Same rules (lowercase, whitespace words, greedy longest-match with the
// marker, byte fallback) implemented over a plain std::set of vocab strings.
inline std::vector<int> tokenize_reference(const std::string& text,
                                           const std::vector<std::string>& vocab_lines) {
    std::set<std::string> vocab;
    std::size_t max_len = 1;
    std::vector<std::string> by_id = vocab_lines;
    std::map<std::string, int> ids;
    for (std::size_t i = 257; i < vocab_lines.size(); ++i) {
        vocab.insert(vocab_lines[i]);
        ids[vocab_lines[i]] = static_cast<int>(i);
        max_len = std::max(max_len, vocab_lines[i].size());
    }
    // normalize
    std::string norm;
    bool pending = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending = !norm.empty();
            continue;
        }
        if (pending) {
            norm.push_back(' ');
            pending = false;
        }
        norm.push_back(static_cast<char>(std::tolower(c)));
    }
    std::vector<int> out;
    std::size_t w = 0;
    const std::string marker = "\xE2\x96\x81";
    while (w < norm.size()) {
        std::size_t end = norm.find(' ', w);
        if (end == std::string::npos) end = norm.size();
        const std::string marked = marker + norm.substr(w, end - w);
        std::size_t pos = 0;
        while (pos < marked.size()) {
            bool matched = false;
            for (std::size_t len = std::min(max_len, marked.size() - pos); len >= 1; --len) {
                const std::string cand = marked.substr(pos, len);
                if (vocab.count(cand)) {
                    out.push_back(ids[cand]);
                    pos += len;
                    matched = true;
                    break;
                }
            }
            if (!matched) {
                out.push_back(1 + static_cast<unsigned char>(marked[pos]));
                ++pos;
            }
        }
        w = end + 1;
    }
    return out;
}

}  // namespace oracles
