#include "timbrefit/error.hpp"
#include "timbrefit/optimizer.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace timbrefit {
namespace {

constexpr double kMinEigenvalue = 1e-14;
constexpr double kMaxSigma = 2.0;

} // namespace

double reflect_unit(double x) {
    if (!std::isfinite(x)) return 0.5;
    if (x >= 0.0 && x <= 1.0) return x;
    double y = std::fmod(x, 2.0);
    if (y < 0.0) y += 2.0;
    return y > 1.0 ? 2.0 - y : y;
}

CmaEs::CmaEs(ParamVector start, const CmaConfig& config)
    : n_(start.size()), lambda_(config.lambda), mean_(std::move(start)), sigma_(config.sigma0), rng_(config.seed) {
    if (n_ == 0) throw InputError("CMA-ES needs a non-empty start vector");
    if (lambda_ < 4) throw InputError("CMA-ES population size must be at least 4");
    if (!(config.sigma0 > 0.0 && config.sigma0 <= 0.5)) throw InputError("sigma0 must lie in (0, 0.5]");
    for (auto& v : mean_) v = reflect_unit(v);

    const double n = static_cast<double>(n_);
    mu_ = lambda_ / 2;
    weights_.resize(static_cast<Eigen::Index>(mu_));
    for (std::size_t i = 0; i < mu_; ++i) {
        weights_[static_cast<Eigen::Index>(i)] = std::log((static_cast<double>(lambda_) + 1.0) / 2.0) - std::log(static_cast<double>(i + 1));
    }
    weights_ /= weights_.sum();
    mu_eff_ = 1.0 / weights_.squaredNorm();

    c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
    d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
    c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
    c_1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
    c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) / ((n + 2.0) * (n + 2.0) + mu_eff_));
    chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    const auto dim = static_cast<Eigen::Index>(n_);
    C_ = Eigen::MatrixXd::Identity(dim, dim);
    B_ = Eigen::MatrixXd::Identity(dim, dim);
    D_ = Eigen::VectorXd::Ones(dim);
    p_sigma_ = Eigen::VectorXd::Zero(dim);
    p_c_ = Eigen::VectorXd::Zero(dim);
    best_ = mean_;
    best_loss_ = std::numeric_limits<double>::infinity();
}

std::vector<ParamVector> CmaEs::ask() {
    const auto dim = static_cast<Eigen::Index>(n_);
    Eigen::Map<const Eigen::VectorXd> m(mean_.data(), dim);
    pending_.assign(lambda_, ParamVector(n_));
    Eigen::VectorXd z(dim);
    for (auto& cand : pending_) {
        for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal_(rng_);
        const Eigen::VectorXd x = m + sigma_ * (B_ * (D_.asDiagonal() * z));
        for (std::size_t i = 0; i < n_; ++i) cand[i] = reflect_unit(x[static_cast<Eigen::Index>(i)]);
    }
    return pending_;
}

void CmaEs::tell(std::span<const ParamVector> candidates, std::span<const double> losses) {
    if (candidates.size() != pending_.size() || losses.size() != pending_.size() ||
        !std::equal(candidates.begin(), candidates.end(), pending_.begin())) {
        throw InputError("CMA-ES tell() must receive exactly the candidates of the preceding ask()");
    }
    const auto dim = static_cast<Eigen::Index>(n_);
    std::vector<double> keyed(losses.begin(), losses.end());
    for (auto& l : keyed) {
        if (std::isnan(l)) l = std::numeric_limits<double>::infinity();
    }
    std::vector<std::size_t> order(lambda_);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keyed[a] < keyed[b]; });

    evaluations_ += lambda_;
    if (keyed[order[0]] < best_loss_) {
        best_loss_ = keyed[order[0]];
        best_ = candidates[order[0]];
    }

    Eigen::Map<const Eigen::VectorXd> old_mean(mean_.data(), dim);
    const Eigen::VectorXd m_old = old_mean;
    Eigen::MatrixXd steps(dim, static_cast<Eigen::Index>(mu_));
    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i < mu_; ++i) {
        const auto& x = candidates[order[i]];
        Eigen::Map<const Eigen::VectorXd> xv(x.data(), dim);
        steps.col(static_cast<Eigen::Index>(i)) = (xv - m_old) / sigma_;
        y_w += weights_[static_cast<Eigen::Index>(i)] * steps.col(static_cast<Eigen::Index>(i));
    }
    const Eigen::VectorXd m_new = m_old + sigma_ * y_w;
    for (std::size_t i = 0; i < n_; ++i) mean_[i] = reflect_unit(m_new[static_cast<Eigen::Index>(i)]);

    // C^{-1/2} y_w = B D^{-1} B^T y_w
    const Eigen::VectorXd c_inv_sqrt_y = B_ * (D_.cwiseInverse().asDiagonal() * (B_.transpose() * y_w));
    p_sigma_ = (1.0 - c_sigma_) * p_sigma_ + std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * c_inv_sqrt_y;
    const double gen = static_cast<double>(generation_ + 1);
    const double ps_norm = p_sigma_.norm();
    const bool h_sigma = ps_norm / std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * gen)) <
                         (1.4 + 2.0 / (static_cast<double>(n_) + 1.0)) * chi_n_;
    p_c_ = (1.0 - c_c_) * p_c_ + (h_sigma ? std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) : 0.0) * y_w;
    const double delta_h = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);

    Eigen::MatrixXd rank_mu = steps * weights_.asDiagonal() * steps.transpose();
    C_ = (1.0 + c_1_ * delta_h - c_1_ - c_mu_) * C_ + c_1_ * (p_c_ * p_c_.transpose()) + c_mu_ * rank_mu;
    C_ = (0.5 * (C_ + C_.transpose())).eval();

    sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
    sigma_ = std::clamp(sigma_, 1e-300, kMaxSigma);
    ++generation_;
    decompose();
}

void CmaEs::decompose() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C_);
    Eigen::VectorXd values = eig.eigenvalues();
    B_ = eig.eigenvectors();
    const double top = std::max(values.maxCoeff(), kMinEigenvalue);
    const double floor = std::max(kMinEigenvalue * 10.0, top * 1e-14);
    if (values.minCoeff() < floor || !values.allFinite()) {
        for (auto& v : values) v = std::isfinite(v) ? std::max(v, floor) : floor;
        C_ = B_ * values.asDiagonal() * B_.transpose();
        C_ = (0.5 * (C_ + C_.transpose())).eval();
    }
    D_ = values.cwiseSqrt();
}

} // namespace timbrefit
