#include "tigm/tmg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "diag_core.hpp"
#include "model_util.hpp"

namespace tigm {

void TmgModel::validate() const {
    const std::size_t n = shape.n();
    const std::size_t L = transforms.size();
    require(transforms.shape() == shape, "TmgModel: transformation set shape differs from model shape");
    require(clusters >= 1, "TmgModel: at least one cluster");
    require(pi.size() == clusters && mu.size() == clusters && phi.size() == clusters, "TmgModel: cluster arrays");
    require(rho.size() == clusters * L, "TmgModel: rho must have C * L entries");
    require(psi.size() == n, "TmgModel: psi length");
    detail::check_distribution(pi, "TmgModel: pi");
    for (std::size_t c = 0; c < clusters; ++c) {
        require(mu[c].size() == n && phi[c].size() == n, "TmgModel: template length");
        detail::check_distribution(std::span(rho).subspan(c * L, L), "TmgModel: rho column");
        detail::check_positive(phi[c], "TmgModel: phi");
    }
    detail::check_positive(psi, "TmgModel: psi");
}

std::pair<std::size_t, std::size_t> PosteriorSummary::map_state() const {
    const std::size_t s = argmax(resp);
    return {s % transforms, s / transforms};
}

double tmg_cond_loglik(const TmgModel& model, const Image& x, std::size_t l, std::size_t c) {
    require_length(x, model.shape, "tmg_cond_loglik");
    require(l < model.transforms.size() && c < model.clusters, "tmg_cond_loglik: state out of range");
    detail::check_finite(x, "tmg_cond_loglik");
    detail::DiagCore core(model.transforms, model.mu, model.phi, model.psi);
    return core.cond_loglik(x, l, c);
}

namespace {

std::vector<double> log_prior_table(const TmgModel& model) {
    const std::size_t L = model.transforms.size();
    std::vector<double> prior(model.clusters * L);
    for (std::size_t c = 0; c < model.clusters; ++c)
        for (std::size_t l = 0; l < L; ++l) prior[c * L + l] = std::log(model.rho[c * L + l]) + std::log(model.pi[c]);
    return prior;
}

}  // namespace

PosteriorSummary tmg_posterior(const TmgModel& model, const Image& x) {
    require_length(x, model.shape, "tmg_posterior");
    detail::check_finite(x, "tmg_posterior");
    detail::DiagCore core(model.transforms, model.mu, model.phi, model.psi);
    const std::size_t S = core.states();
    const std::size_t n = model.shape.n();
    PosteriorSummary post;
    post.transforms = model.transforms.size();
    post.clusters = model.clusters;
    post.log_joint.resize(S);
    core.emission_table(x, post.log_joint);
    const auto prior = log_prior_table(model);
    for (std::size_t s = 0; s < S; ++s) post.log_joint[s] += prior[s];
    post.resp = post.log_joint;
    post.loglik = normalize_log_weights(post.resp);
    post.z_mean.assign(S, Image(n));
    post.z_var.assign(S, Image(n));
    for (std::size_t s = 0; s < S; ++s) {
        core.latent_posterior(x, s % post.transforms, s / post.transforms, post.z_mean[s], post.z_var[s]);
    }
    return post;
}

double tmg_loglik(const TmgModel& model, std::span<const Image> data, const ParallelConfig& parallel) {
    detail::DiagCore core(model.transforms, model.mu, model.phi, model.psi);
    const auto prior = log_prior_table(model);
    const std::size_t chunks = parallel.chunk_count(data.size());
    std::vector<double> partial(chunks, 0.0);
    parallel_chunks(data.size(), chunks, parallel.resolved_threads(), [&](std::size_t k, std::size_t b, std::size_t e) {
        std::vector<double> table(core.states());
        for (std::size_t d = b; d < e; ++d) {
            require_length(data[d], model.shape, "tmg_loglik");
            core.emission_table(data[d], table);
            for (std::size_t s = 0; s < table.size(); ++s) table[s] += prior[s];
            partial[k] += log_sum_exp(table);
        }
    });
    return std::accumulate(partial.begin(), partial.end(), 0.0);
}

StepResult<TmgModel> tmg_em_step(const TmgModel& model, std::span<const Image> data, const EmOptions& options) {
    require(!data.empty(), "tmg_em_step: empty batch");
    model.validate();
    const std::size_t L = model.transforms.size();
    const std::size_t C = model.clusters;
    const std::size_t n = model.shape.n();
    detail::DiagCore core(model.transforms, model.mu, model.phi, model.psi);
    const auto prior = log_prior_table(model);

    const std::size_t chunks = options.parallel.chunk_count(data.size());
    std::vector<detail::DiagCore::Stats> stats(chunks, detail::DiagCore::Stats(C, L, n));
    std::vector<double> partial(chunks, 0.0);
    parallel_chunks(data.size(), chunks, options.parallel.resolved_threads(),
                    [&](std::size_t k, std::size_t b, std::size_t e) {
                        std::vector<double> table(core.states());
                        for (std::size_t d = b; d < e; ++d) {
                            require_length(data[d], model.shape, "tmg_em_step");
                            detail::check_finite(data[d], "tmg_em_step");
                            core.emission_table(data[d], table);
                            for (std::size_t s = 0; s < table.size(); ++s) table[s] += prior[s];
                            partial[k] += normalize_log_weights(table);
                            core.accumulate(data[d], table, stats[k]);
                        }
                    });
    for (std::size_t k = 1; k < chunks; ++k) stats[0].merge(stats[k]);
    const auto& st = stats[0];

    StepResult<TmgModel> result{model, std::accumulate(partial.begin(), partial.end(), 0.0), {}};
    result.report.loglik = result.loglik;
    TmgModel& next = result.model;
    const double N = static_cast<double>(data.size());
    const double floor = model.variance_floor;

    for (std::size_t c = 0; c < C; ++c) {
        const double Nc = st.cluster_mass(c);
        result.report.cluster_mass.push_back(Nc);
        if (!(Nc > options.rescue_fraction * N) || Nc <= 0.0) {
            detail::rescue_template(next.mu[c], next.phi[c], data, options.rescue_seed, c);
            for (std::size_t l = 0; l < L; ++l) next.rho[c * L + l] = 1.0 / static_cast<double>(L);
            next.pi[c] = 1.0 / static_cast<double>(C);
            result.report.rescued.push_back(c);
            continue;
        }
        next.pi[c] = Nc / N;
        if (!options.freeze_rho) {
            for (std::size_t l = 0; l < L; ++l) next.rho[c * L + l] = st.mass[c * L + l] / Nc;
        }
        for (std::size_t s = 0; s < n; ++s) {
            const double m = st.z[c * n + s] / Nc;
            next.mu[c][s] = m;
            next.phi[c][s] = std::max(floor, st.zz[c * n + s] / Nc - m * m);
        }
    }
    detail::normalize(next.pi);
    for (std::size_t p = 0; p < n; ++p) next.psi[p] = st.resid[p] / N;
    detail::finish_psi(next.psi, options.tie_psi, floor);
    return result;
}

TmgModel tmg_init(const TransformationSet& transforms, std::size_t clusters, std::span<const Image> data,
                  std::uint64_t seed) {
    require(!data.empty(), "tmg_init: empty data");
    require(clusters >= 1, "tmg_init: at least one cluster");
    const std::size_t n = transforms.shape().n();
    const std::size_t L = transforms.size();
    const double var = detail::reference_variance(data);
    std::mt19937_64 rng(seed);
    TmgModel m;
    m.shape = transforms.shape();
    m.transforms = transforms;
    m.clusters = clusters;
    m.variance_floor = 1e-6 * var;
    m.pi.assign(clusters, 1.0 / static_cast<double>(clusters));
    m.rho.assign(clusters * L, 1.0 / static_cast<double>(L));
    m.psi.assign(n, var);
    const auto picks = detail::distinct_picks(data.size(), clusters, rng);
    std::normal_distribution<double> jitter(0.0, 0.01 * std::sqrt(var));
    for (std::size_t c = 0; c < clusters; ++c) {
        require_length(data[picks[c]], m.shape, "tmg_init");
        Image mu = data[picks[c]];
        for (double& v : mu) v += jitter(rng);
        m.mu.push_back(std::move(mu));
        m.phi.emplace_back(n, var);
    }
    return m;
}

Image sample(const TmgModel& model, std::uint64_t seed) {
    model.validate();
    std::mt19937_64 rng(seed);
    const std::size_t L = model.transforms.size();
    const std::size_t c = detail::draw_index(model.pi, rng);
    const std::size_t l = detail::draw_index(std::span(model.rho).subspan(c * L, L), rng);
    std::normal_distribution<double> normal;
    Image z(model.shape.n());
    for (std::size_t s = 0; s < z.size(); ++s) z[s] = model.mu[c][s] + std::sqrt(model.phi[c][s]) * normal(rng);
    Image x = tigm::apply(model.transforms[l], z);
    for (std::size_t p = 0; p < x.size(); ++p) x[p] += std::sqrt(model.psi[p]) * normal(rng);
    return x;
}

}  // namespace tigm
