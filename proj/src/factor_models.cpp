#include "tigm/factor_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "factor_core.hpp"
#include "model_util.hpp"

namespace tigm {

namespace {

MtcaModel as_mixture(const TcaModel& m) {
    MtcaModel out;
    out.shape = m.shape;
    out.transforms = m.transforms;
    out.clusters = 1;
    out.pi = {1.0};
    out.mu = {m.mu};
    out.lambda = {m.lambda};
    out.phi = {m.phi};
    out.rho = m.rho;
    out.psi = m.psi;
    out.fast_likelihood = m.fast_likelihood;
    out.variance_floor = m.variance_floor;
    out.frozen = m.frozen;
    return out;
}

TcaModel from_mixture(MtcaModel m) {
    TcaModel out;
    out.shape = m.shape;
    out.transforms = std::move(m.transforms);
    out.mu = std::move(m.mu[0]);
    out.lambda = std::move(m.lambda[0]);
    out.phi = std::move(m.phi[0]);
    out.rho = std::move(m.rho);
    out.psi = std::move(m.psi);
    out.fast_likelihood = m.fast_likelihood;
    out.variance_floor = m.variance_floor;
    out.frozen = std::move(m.frozen);
    return out;
}

std::vector<double> log_prior_table(const MtcaModel& model) {
    const std::size_t L = model.transforms.size();
    std::vector<double> prior(model.clusters * L);
    for (std::size_t c = 0; c < model.clusters; ++c)
        for (std::size_t l = 0; l < L; ++l) prior[c * L + l] = std::log(model.rho[c * L + l]) + std::log(model.pi[c]);
    return prior;
}

std::vector<TransformParams> frozen_directions(const std::vector<FrozenColumn>& frozen) {
    std::vector<TransformParams> dirs;
    for (const auto& f : frozen) dirs.push_back(f.direction);
    return dirs;
}

void refresh_frozen(const Image& mu, const TransformationSet& transforms, const std::vector<FrozenColumn>& frozen,
                    Eigen::MatrixXd& lambda) {
    if (frozen.empty()) return;
    const auto dirs = frozen_directions(frozen);
    const Eigen::MatrixXd cols = tangent_columns(mu, transforms, dirs);
    for (std::size_t i = 0; i < frozen.size(); ++i) lambda.col(static_cast<Eigen::Index>(frozen[i].column)) = cols.col(i);
}

void validate_frozen(const std::vector<FrozenColumn>& frozen, std::size_t K) {
    std::vector<bool> seen(K, false);
    for (const auto& f : frozen) {
        require(f.column < K, "frozen column index out of range");
        require(!seen[f.column], "frozen column listed twice");
        seen[f.column] = true;
    }
}

}  // namespace

void TcaModel::validate() const { as_mixture(*this).validate(); }

void MtcaModel::validate() const {
    const std::size_t n = shape.n();
    const std::size_t L = transforms.size();
    require(transforms.shape() == shape, "MtcaModel: transformation set shape differs from model shape");
    require(clusters >= 1, "MtcaModel: at least one cluster");
    require(pi.size() == clusters && mu.size() == clusters && phi.size() == clusters && lambda.size() == clusters,
            "MtcaModel: cluster arrays");
    require(rho.size() == clusters * L, "MtcaModel: rho must have C * L entries");
    require(psi.size() == n, "MtcaModel: psi length");
    detail::check_distribution(pi, "MtcaModel: pi");
    const std::size_t K = factors();
    require(K < n, "MtcaModel: factor count must be below the pixel count");
    for (std::size_t c = 0; c < clusters; ++c) {
        require(mu[c].size() == n && phi[c].size() == n, "MtcaModel: template length");
        require(static_cast<std::size_t>(lambda[c].rows()) == n && static_cast<std::size_t>(lambda[c].cols()) == K,
                "MtcaModel: loading matrix shape");
        require(lambda[c].allFinite(), "MtcaModel: nonfinite loading");
        detail::check_distribution(std::span(rho).subspan(c * L, L), "MtcaModel: rho column");
        detail::check_positive(phi[c], "MtcaModel: phi");
    }
    detail::check_positive(psi, "MtcaModel: psi");
    validate_frozen(frozen, K);
}

double mtca_cond_loglik(const MtcaModel& model, const Image& x, std::size_t l, std::size_t c) {
    require_length(x, model.shape, "mtca_cond_loglik");
    require(l < model.transforms.size() && c < model.clusters, "mtca_cond_loglik: state out of range");
    detail::check_finite(x, "mtca_cond_loglik");
    model.validate();
    detail::FactorCore core(model);
    return core.cond_loglik(x, l, c);
}

double tca_cond_loglik(const TcaModel& model, const Image& x, std::size_t l) {
    return mtca_cond_loglik(as_mixture(model), x, l, 0);
}

PosteriorSummary mtca_posterior(const MtcaModel& model, const Image& x) {
    require_length(x, model.shape, "mtca_posterior");
    detail::check_finite(x, "mtca_posterior");
    model.validate();
    detail::FactorCore core(model);
    const std::size_t L = model.transforms.size();
    const std::size_t S = model.clusters * L;
    const std::size_t K = core.factors();
    PosteriorSummary post;
    post.transforms = L;
    post.clusters = model.clusters;
    post.log_joint.resize(S);
    std::vector<Eigen::VectorXd> y_means;
    core.state_logliks(x, post.log_joint, y_means);
    const auto prior = log_prior_table(model);
    for (std::size_t s = 0; s < S; ++s) post.log_joint[s] += prior[s];
    post.resp = post.log_joint;
    post.loglik = normalize_log_weights(post.resp);
    post.z_mean.resize(S);
    post.z_var.resize(S);
    post.y_mean.resize(S);
    post.y_cov.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
        const std::size_t l = s % L, c = s / L;
        core.latent_moments(x, l, c, y_means[s], post.z_mean[s], post.z_var[s]);
        post.y_mean[s].assign(y_means[s].data(), y_means[s].data() + K);
        post.y_cov[s].resize(K * K);
        const auto& cov = core.y_cov(l, c);
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j) post.y_cov[s][i * K + j] = cov(i, j);
    }
    return post;
}

PosteriorSummary tca_posterior(const TcaModel& model, const Image& x) { return mtca_posterior(as_mixture(model), x); }

double mtca_loglik(const MtcaModel& model, std::span<const Image> data, const ParallelConfig& parallel) {
    model.validate();
    detail::FactorCore core(model);
    const auto prior = log_prior_table(model);
    const std::size_t chunks = parallel.chunk_count(data.size());
    std::vector<double> partial(chunks, 0.0);
    parallel_chunks(data.size(), chunks, parallel.resolved_threads(), [&](std::size_t k, std::size_t b, std::size_t e) {
        std::vector<double> table(prior.size());
        std::vector<Eigen::VectorXd> y_means;
        for (std::size_t d = b; d < e; ++d) {
            require_length(data[d], model.shape, "mtca_loglik");
            core.state_logliks(data[d], table, y_means);
            for (std::size_t s = 0; s < table.size(); ++s) table[s] += prior[s];
            partial[k] += log_sum_exp(table);
        }
    });
    return std::accumulate(partial.begin(), partial.end(), 0.0);
}

double tca_loglik(const TcaModel& model, std::span<const Image> data, const ParallelConfig& parallel) {
    return mtca_loglik(as_mixture(model), data, parallel);
}

double tca_loglik(const TcaModel& model, const Image& x) {
    return mtca_loglik(as_mixture(model), std::span<const Image>(&x, 1));
}

StepResult<MtcaModel> mtca_em_step(const MtcaModel& model, std::span<const Image> data, const EmOptions& options) {
    require(!data.empty(), "mtca_em_step: empty batch");
    model.validate();
    const std::size_t L = model.transforms.size();
    const std::size_t C = model.clusters;
    const std::size_t n = model.shape.n();
    const std::size_t K = model.factors();
    detail::FactorCore core(model);
    const auto prior = log_prior_table(model);

    const std::size_t chunks = options.parallel.chunk_count(data.size());
    std::vector<detail::FactorCore::Stats> stats(chunks, detail::FactorCore::Stats(C, L, n, K));
    std::vector<double> partial(chunks, 0.0);
    parallel_chunks(data.size(), chunks, options.parallel.resolved_threads(),
                    [&](std::size_t k, std::size_t b, std::size_t e) {
                        std::vector<double> table(prior.size());
                        std::vector<Eigen::VectorXd> y_means;
                        for (std::size_t d = b; d < e; ++d) {
                            require_length(data[d], model.shape, "mtca_em_step");
                            detail::check_finite(data[d], "mtca_em_step");
                            core.state_logliks(data[d], table, y_means);
                            for (std::size_t s = 0; s < table.size(); ++s) table[s] += prior[s];
                            partial[k] += normalize_log_weights(table);
                            core.accumulate(data[d], table, y_means, stats[k]);
                        }
                    });
    for (std::size_t k = 1; k < chunks; ++k) stats[0].merge(stats[k]);
    const auto& st = stats[0];

    StepResult<MtcaModel> result{model, std::accumulate(partial.begin(), partial.end(), 0.0), {}};
    result.report.loglik = result.loglik;
    MtcaModel& next = result.model;
    const double N = static_cast<double>(data.size());
    const double floor = model.variance_floor;

    // Columns of the augmented loading [mu | Lambda] that are solved for.
    std::vector<bool> is_frozen(K + 1, false);
    for (const auto& f : model.frozen) is_frozen[f.column + 1] = true;
    std::vector<Eigen::Index> free_idx, frozen_idx;
    for (std::size_t j = 0; j <= K; ++j) (is_frozen[j] ? frozen_idx : free_idx).push_back(static_cast<Eigen::Index>(j));

    for (std::size_t c = 0; c < C; ++c) {
        const double Nc = st.cluster_mass(c);
        result.report.cluster_mass.push_back(Nc);
        if (!(Nc > options.rescue_fraction * N) || Nc <= 0.0) {
            detail::rescue_template(next.mu[c], next.phi[c], data, options.rescue_seed, c);
            refresh_frozen(next.mu[c], next.transforms, next.frozen, next.lambda[c]);
            for (std::size_t l = 0; l < L; ++l) next.rho[c * L + l] = 1.0 / static_cast<double>(L);
            next.pi[c] = 1.0 / static_cast<double>(C);
            result.report.rescued.push_back(c);
            continue;
        }
        next.pi[c] = Nc / N;
        if (!options.freeze_rho) {
            for (std::size_t l = 0; l < L; ++l) next.rho[c * L + l] = st.mass[c * L + l] / Nc;
        }

        Eigen::MatrixXd aug(n, K + 1);
        aug.col(0) = Eigen::Map<const Eigen::VectorXd>(model.mu[c].data(), static_cast<Eigen::Index>(n));
        if (K > 0) aug.rightCols(static_cast<Eigen::Index>(K)) = model.lambda[c];
        const Eigen::MatrixXd& syy = st.syy[c];
        const Eigen::MatrixXd& szy = st.szy[c];
        Eigen::MatrixXd rhs = szy(Eigen::all, free_idx);
        if (!frozen_idx.empty()) rhs -= aug(Eigen::all, frozen_idx) * syy(frozen_idx, free_idx);
        const Eigen::MatrixXd syy_free = syy(free_idx, free_idx);
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(syy_free);
        const Eigen::MatrixXd solved = ldlt.solve(rhs.transpose()).transpose();
        aug(Eigen::all, free_idx) = solved;

        const Eigen::VectorXd cross = (aug.array() * szy.array()).rowwise().sum();
        const Eigen::VectorXd quad = ((aug * syy).array() * aug.array()).rowwise().sum();
        for (std::size_t s = 0; s < n; ++s) {
            const double v = (st.szz[c][s] - 2.0 * cross[s] + quad[s]) / Nc;
            next.phi[c][s] = std::max(floor, v);
            next.mu[c][s] = aug(s, 0);
        }
        if (K > 0) next.lambda[c] = aug.rightCols(static_cast<Eigen::Index>(K));
        if (options.refresh_tangents) refresh_frozen(next.mu[c], next.transforms, next.frozen, next.lambda[c]);
    }
    detail::normalize(next.pi);
    if (!core.fast()) {
        for (std::size_t p = 0; p < n; ++p) next.psi[p] = st.resid[p] / N;
        detail::finish_psi(next.psi, options.tie_psi, floor);
    }
    return result;
}

StepResult<TcaModel> tca_em_step(const TcaModel& model, std::span<const Image> data, const EmOptions& options) {
    auto step = mtca_em_step(as_mixture(model), data, options);
    return {from_mixture(std::move(step.model)), step.loglik, std::move(step.report)};
}

namespace {

Eigen::MatrixXd random_loading(std::size_t n, std::size_t K, double scale, std::mt19937_64& rng) {
    if (K == 0) return Eigen::MatrixXd(n, 0);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd raw(n, K);
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
        for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
    return scale * q;
}

}  // namespace

MtcaModel mtca_init(const TransformationSet& transforms, std::size_t clusters, std::size_t factors,
                    std::span<const Image> data, std::uint64_t seed, std::vector<FrozenColumn> frozen) {
    require(!data.empty(), "mtca_init: empty data");
    require(clusters >= 1, "mtca_init: at least one cluster");
    const std::size_t n = transforms.shape().n();
    require(factors < n, "mtca_init: factor count must be below the pixel count");
    validate_frozen(frozen, factors);
    const std::size_t L = transforms.size();
    const double var = detail::reference_variance(data);
    std::mt19937_64 rng(seed);
    MtcaModel m;
    m.shape = transforms.shape();
    m.transforms = transforms;
    m.clusters = clusters;
    m.variance_floor = 1e-6 * var;
    m.pi.assign(clusters, 1.0 / static_cast<double>(clusters));
    m.rho.assign(clusters * L, 1.0 / static_cast<double>(L));
    m.psi.assign(n, var);
    m.frozen = std::move(frozen);
    const auto picks = detail::distinct_picks(data.size(), clusters, rng);
    std::normal_distribution<double> jitter(0.0, 0.01 * std::sqrt(var));
    for (std::size_t c = 0; c < clusters; ++c) {
        require_length(data[picks[c]], m.shape, "mtca_init");
        Image mu = data[picks[c]];
        if (clusters > 1)
            for (double& v : mu) v += jitter(rng);
        m.lambda.push_back(random_loading(n, factors, std::sqrt(var), rng));
        refresh_frozen(mu, transforms, m.frozen, m.lambda.back());
        m.mu.push_back(std::move(mu));
        m.phi.emplace_back(n, var);
    }
    return m;
}

TcaModel tca_init(const TransformationSet& transforms, std::size_t factors, std::span<const Image> data,
                  std::uint64_t seed, std::vector<FrozenColumn> frozen) {
    return from_mixture(mtca_init(transforms, 1, factors, data, seed, std::move(frozen)));
}

Image sample(const MtcaModel& model, std::uint64_t seed) {
    model.validate();
    std::mt19937_64 rng(seed);
    const std::size_t L = model.transforms.size();
    const std::size_t K = model.factors();
    const std::size_t c = detail::draw_index(model.pi, rng);
    const std::size_t l = detail::draw_index(std::span(model.rho).subspan(c * L, L), rng);
    std::normal_distribution<double> normal;
    Eigen::VectorXd y(K);
    for (std::size_t k = 0; k < K; ++k) y[k] = normal(rng);
    Image z(model.shape.n());
    const Eigen::VectorXd ly = K > 0 ? Eigen::VectorXd(model.lambda[c] * y) : Eigen::VectorXd::Zero(z.size());
    for (std::size_t s = 0; s < z.size(); ++s)
        z[s] = model.mu[c][s] + ly[s] + std::sqrt(model.phi[c][s]) * normal(rng);
    Image x = tigm::apply(model.transforms[l], z);
    if (!model.uses_fast_path()) {
        for (std::size_t p = 0; p < x.size(); ++p) x[p] += std::sqrt(model.psi[p]) * normal(rng);
    }
    return x;
}

Image sample(const TcaModel& model, std::uint64_t seed) { return sample(as_mixture(model), seed); }

Eigen::MatrixXd tangent_columns(const Image& mu, const TransformationSet& transforms,
                                std::span<const TransformParams> directions) {
    require_length(mu, transforms.shape(), "tangent_columns");
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(mu.size()), static_cast<Eigen::Index>(directions.size()));
    for (std::size_t k = 0; k < directions.size(); ++k) {
        const auto& d = directions[k];
        require(!(d.shear == 0.0 && d.dv == 0 && d.dh == 0), "tangent direction must be nonzero");
        const auto plus = transforms.find(d);
        const auto minus = transforms.find({-d.shear, -d.dv, -d.dh});
        require(plus.has_value() && minus.has_value(),
                "tangent direction needs both +step and -step ops in the transformation set");
        const Image up = tigm::apply(transforms[*plus], mu);
        const Image down = tigm::apply(transforms[*minus], mu);
        for (std::size_t p = 0; p < mu.size(); ++p) cols(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) = 0.5 * (up[p] - down[p]);
    }
    return cols;
}

std::size_t bayes_classify_loglik(std::span<const double> class_loglik, std::span<const double> priors) {
    require(class_loglik.size() == priors.size() && !priors.empty(), "bayes_classify: priors/models mismatch");
    std::vector<double> score(class_loglik.size());
    for (std::size_t k = 0; k < score.size(); ++k) score[k] = class_loglik[k] + std::log(priors[k]);
    return argmax(score);
}

std::size_t bayes_classify(std::span<const TcaModel> models, std::span<const double> priors, const Image& x) {
    require(models.size() >= 2, "bayes_classify: need at least two class models");
    std::vector<double> ll(models.size());
    for (std::size_t k = 0; k < models.size(); ++k) {
        require(models[k].shape == models[0].shape, "bayes_classify: class models disagree on image shape");
        ll[k] = tca_loglik(models[k], x);
    }
    return bayes_classify_loglik(ll, priors);
}

}  // namespace tigm
