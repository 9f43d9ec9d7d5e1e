#include "factor_core.hpp"

#include <cmath>
#include <numbers>

namespace tigm::detail {

namespace {

double log_det_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const auto& m = llt.matrixLLT();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) sum += std::log(m(i, i));
    return 2.0 * sum;
}

}  // namespace

FactorCore::FactorCore(const MtcaModel& model)
    : model_(&model), clusters_(model.clusters), L_(model.transforms.size()), K_(model.factors()),
      n_(model.shape.n()), fast_(model.uses_fast_path()) {
    require(K_ < n_ || n_ == 0, "factor models need fewer factors than pixels");
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    const auto cache_count = fast_ ? clusters_ : clusters_ * L_;
    caches_.resize(cache_count);
    for (std::size_t c = 0; c < clusters_; ++c) {
        const Image& mu = model.mu[c];
        const Image& phi = model.phi[c];
        const Eigen::MatrixXd& lambda = model.lambda[c];
        require(static_cast<std::size_t>(lambda.rows()) == n_ && static_cast<std::size_t>(lambda.cols()) == K_,
                "factor loading matrix has the wrong shape");
        require(mu.size() == n_ && phi.size() == n_, "factor template length mismatch");
        const std::size_t per_cluster = fast_ ? 1 : L_;
        for (std::size_t l = 0; l < per_cluster; ++l) {
            StateCache& sc = caches_[fast_ ? c : c * L_ + l];
            sc.latent_prec.setZero(n_);
            double log_norm = static_cast<double>(n_) * log_2pi;
            if (fast_) {
                for (std::size_t s = 0; s < n_; ++s) {
                    sc.latent_prec[s] = 1.0 / phi[s];
                    log_norm += std::log(phi[s]);
                }
                sc.v.setZero(n_);
                sc.beta.setZero(n_);
                sc.z_var.setZero(n_);
            } else {
                const auto& op = model.transforms[l];
                const auto src = op.source();
                sc.d_inv.resize(n_);
                for (std::size_t p = 0; p < n_; ++p) {
                    const double d = src[p] == TransformOp::kVoid ? model.psi[p] : phi[src[p]] + model.psi[p];
                    sc.d_inv[p] = 1.0 / d;
                    log_norm += std::log(d);
                    if (src[p] != TransformOp::kVoid) sc.latent_prec[src[p]] = sc.d_inv[p];
                }
                const auto inv = op.inverse_index();
                sc.v.resize(n_);
                sc.beta.resize(n_);
                for (std::size_t s = 0; s < n_; ++s) {
                    const std::size_t o = static_cast<std::size_t>(inv[s]);
                    const double ip = o < n_ ? 1.0 / model.psi[o] : 0.0;
                    sc.v[s] = 1.0 / (1.0 / phi[s] + ip);
                    sc.beta[s] = sc.v[s] / phi[s];
                }
            }
            if (K_ > 0) {
                Eigen::MatrixXd cap = Eigen::MatrixXd::Identity(K_, K_);
                cap.noalias() += lambda.transpose() * sc.latent_prec.asDiagonal() * lambda;
                Eigen::LLT<Eigen::MatrixXd> llt(cap);
                require(llt.info() == Eigen::Success, "capacitance matrix is not positive definite");
                log_norm += log_det_llt(llt);
                sc.s_y = llt.solve(Eigen::MatrixXd::Identity(K_, K_));
                sc.s_y = 0.5 * (sc.s_y + sc.s_y.transpose());
            } else {
                sc.s_y.resize(0, 0);
            }
            sc.log_norm = log_norm;
            if (!fast_) {
                const Eigen::MatrixXd lambda_s = lambda * sc.s_y;
                sc.z_var = sc.v;
                if (K_ > 0) {
                    const Eigen::VectorXd q = (lambda_s.array() * lambda.array()).rowwise().sum();
                    sc.z_var.array() += sc.beta.array().square() * q.array();
                }
                sc.beta_lambda_s = sc.beta.asDiagonal() * lambda_s;
            }
        }
    }
}

void FactorCore::residual_and_project(std::span<const double> x, std::size_t l, std::size_t c,
                                      Eigen::VectorXd& resid, Eigen::VectorXd& proj, double& quad) const {
    const auto& op = model_->transforms[l];
    const Image& mu = model_->mu[c];
    const StateCache& sc = cache(l, c);
    Eigen::VectorXd u(n_);
    resid.resize(n_);
    quad = 0.0;
    if (fast_) {
        const auto inv = op.inverse_index();
        for (std::size_t s = 0; s < n_; ++s) {
            resid[s] = x[inv[s]] - mu[s];
            u[s] = resid[s] * sc.latent_prec[s];
            quad += resid[s] * u[s];
        }
    } else {
        const auto src = op.source();
        u.setZero();
        for (std::size_t p = 0; p < n_; ++p) {
            const bool hit = src[p] != TransformOp::kVoid;
            resid[p] = x[p] - (hit ? mu[src[p]] : 0.0);
            const double w = resid[p] * sc.d_inv[p];
            quad += resid[p] * w;
            if (hit) u[src[p]] = w;
        }
    }
    if (K_ > 0) {
        proj.noalias() = model_->lambda[c].transpose() * u;
    } else {
        proj.resize(0);
    }
}

double FactorCore::cond_loglik(std::span<const double> x, std::size_t l, std::size_t c,
                               Eigen::VectorXd& y_mean) const {
    Eigen::VectorXd resid, proj;
    double quad = 0.0;
    residual_and_project(x, l, c, resid, proj, quad);
    const StateCache& sc = cache(l, c);
    if (K_ > 0) {
        y_mean.noalias() = sc.s_y * proj;
        quad -= proj.dot(y_mean);
    } else {
        y_mean.resize(0);
    }
    return -0.5 * (sc.log_norm + quad);
}

double FactorCore::cond_loglik(std::span<const double> x, std::size_t l, std::size_t c) const {
    Eigen::VectorXd y;
    return cond_loglik(x, l, c, y);
}

void FactorCore::latent_moments(std::span<const double> x, std::size_t l, std::size_t c,
                                const Eigen::VectorXd& y_mean, Image& z_mean, Image& z_var) const {
    const auto& op = model_->transforms[l];
    const auto inv = op.inverse_index();
    z_mean.assign(n_, 0.0);
    z_var.assign(n_, 0.0);
    if (fast_) {
        for (std::size_t s = 0; s < n_; ++s) z_mean[s] = x[inv[s]];
        return;
    }
    const StateCache& sc = cache(l, c);
    const Image& mu = model_->mu[c];
    const Image& phi = model_->phi[c];
    Eigen::VectorXd lm = K_ > 0 ? Eigen::VectorXd(model_->lambda[c] * y_mean) : Eigen::VectorXd::Zero(n_);
    for (std::size_t s = 0; s < n_; ++s) {
        const std::size_t o = static_cast<std::size_t>(inv[s]);
        const double obs = o < n_ ? x[o] / model_->psi[o] : 0.0;
        const double a = sc.v[s] * (mu[s] / phi[s] + obs);
        z_mean[s] = a + sc.beta[s] * lm[s];
        z_var[s] = sc.z_var[s];
    }
}

FactorCore::Stats::Stats(std::size_t clusters_in, std::size_t transforms_in, std::size_t n_in, std::size_t factors_in)
    : clusters(clusters_in), transforms(transforms_in), n(n_in), factors(factors_in),
      szy(clusters_in, Eigen::MatrixXd::Zero(n_in, factors_in + 1)),
      szz(clusters_in, Eigen::VectorXd::Zero(n_in)),
      syy(clusters_in, Eigen::MatrixXd::Zero(factors_in + 1, factors_in + 1)), resid(Eigen::VectorXd::Zero(n_in)),
      mass(clusters_in * transforms_in, 0.0) {}

void FactorCore::Stats::merge(const Stats& other) {
    for (std::size_t c = 0; c < clusters; ++c) {
        szy[c] += other.szy[c];
        szz[c] += other.szz[c];
        syy[c] += other.syy[c];
    }
    resid += other.resid;
    for (std::size_t i = 0; i < mass.size(); ++i) mass[i] += other.mass[i];
}

double FactorCore::Stats::cluster_mass(std::size_t c) const {
    double m = 0.0;
    for (std::size_t l = 0; l < transforms; ++l) m += mass[c * transforms + l];
    return m;
}

void FactorCore::state_logliks(std::span<const double> x, std::span<double> log_lik,
                               std::vector<Eigen::VectorXd>& y_means) const {
    y_means.resize(clusters_ * L_);
    for (std::size_t c = 0; c < clusters_; ++c)
        for (std::size_t l = 0; l < L_; ++l) log_lik[c * L_ + l] = cond_loglik(x, l, c, y_means[c * L_ + l]);
}

void FactorCore::accumulate(std::span<const double> x, std::span<const double> weights,
                            const std::vector<Eigen::VectorXd>& y_means, Stats& stats) const {
    Image z_mean, z_var;
    for (std::size_t c = 0; c < clusters_; ++c) {
        for (std::size_t l = 0; l < L_; ++l) {
            const double w = weights[c * L_ + l];
            if (w == 0.0) continue;
            const Eigen::VectorXd& m = y_means[c * L_ + l];
            const StateCache& sc = cache(l, c);
            stats.mass[c * L_ + l] += w;
            latent_moments(x, l, c, m, z_mean, z_var);
            const Eigen::Map<const Eigen::VectorXd> ez(z_mean.data(), static_cast<Eigen::Index>(n_));
            const Eigen::Map<const Eigen::VectorXd> vz(z_var.data(), static_cast<Eigen::Index>(n_));
            stats.szy[c].col(0) += w * ez;
            stats.szz[c].array() += w * (ez.array().square() + vz.array());
            auto& syy = stats.syy[c];
            syy(0, 0) += w;
            if (K_ > 0) {
                auto rest = stats.szy[c].rightCols(static_cast<Eigen::Index>(K_));
                rest.noalias() += (w * ez) * m.transpose();
                if (!fast_) rest += w * sc.beta_lambda_s;
                syy.block(1, 0, K_, 1) += w * m;
                syy.block(0, 1, 1, K_) += w * m.transpose();
                syy.bottomRightCorner(K_, K_) += w * (sc.s_y + m * m.transpose());
            }
            if (!fast_) {
                const auto src = model_->transforms[l].source();
                for (std::size_t p = 0; p < n_; ++p) {
                    if (src[p] == TransformOp::kVoid) {
                        stats.resid[p] += w * x[p] * x[p];
                    } else {
                        const double d = x[p] - z_mean[src[p]];
                        stats.resid[p] += w * (d * d + z_var[src[p]]);
                    }
                }
            }
        }
    }
}

}  // namespace tigm::detail
