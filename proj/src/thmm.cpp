#include "tigm/thmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "diag_core.hpp"
#include "model_util.hpp"

namespace tigm {

const char* to_string(MotionMode mode) { return mode == MotionMode::Vector ? "vector" : "magnitude"; }

MotionMode motion_mode_from_string(const std::string& text) {
    if (text == "vector") return MotionMode::Vector;
    if (text == "magnitude") return MotionMode::Magnitude;
    throw ContractViolation("unknown motion mode '" + text + "' (expected vector or magnitude)");
}

// ------------------------------------------------------------------ MotionBins

namespace {

int canonical(int delta, std::size_t m) {
    const int M = static_cast<int>(m);
    const int h = M / 2;
    return ((delta + h) % M + M) % M - h;
}

}  // namespace

MotionBins::MotionBins(const TransformationSet& transforms, MotionMode mode, int threshold)
    : mode_(mode), threshold_(threshold), cyclic_(transforms.cyclic_grid()) {
    require(transforms.grid().has_value(), "motion prior needs a grid-structured transformation set");
    require(threshold >= 0, "motion threshold must be nonnegative");
    mv_ = transforms.grid()->vertical;
    mh_ = transforms.grid()->horizontal;
    auto range = [&](std::size_t m) {
        const int M = static_cast<int>(m);
        return cyclic_ ? std::pair{-(M / 2), M - 1 - M / 2} : std::pair{-(M - 1), M - 1};
    };
    const auto [vlo, vhi] = range(mv_);
    const auto [hlo, hhi] = range(mh_);
    std::map<int, std::vector<std::pair<int, int>>> by_key;
    const int t2 = threshold * threshold;
    for (int di = vlo; di <= vhi; ++di)
        for (int dj = hlo; dj <= hhi; ++dj) {
            const int r2 = di * di + dj * dj;
            if (r2 > t2) continue;
            if (mode == MotionMode::Vector) {
                members_.push_back({{di, dj}});
            } else {
                by_key[static_cast<int>(std::lround(std::sqrt(static_cast<double>(r2))))].push_back({di, dj});
            }
        }
    for (auto& [key, list] : by_key) members_.push_back(std::move(list));

    moves_.assign(mv_ * mh_, {});
    for (std::size_t l = 0; l < mv_ * mh_; ++l) {
        const int i = static_cast<int>(l / mh_), j = static_cast<int>(l % mh_);
        for (std::size_t b = 0; b < members_.size(); ++b)
            for (const auto& [di, dj] : members_[b]) {
                int ti = i + di, tj = j + dj;
                if (cyclic_) {
                    ti = ((ti % static_cast<int>(mv_)) + static_cast<int>(mv_)) % static_cast<int>(mv_);
                    tj = ((tj % static_cast<int>(mh_)) + static_cast<int>(mh_)) % static_cast<int>(mh_);
                } else if (ti < 0 || tj < 0 || ti >= static_cast<int>(mv_) || tj >= static_cast<int>(mh_)) {
                    continue;
                }
                moves_[l].push_back({static_cast<std::size_t>(ti) * mh_ + static_cast<std::size_t>(tj), b});
            }
    }
}

std::pair<int, int> MotionBins::displacement(std::size_t l, std::size_t l2) const {
    int di = static_cast<int>(l2 / mh_) - static_cast<int>(l / mh_);
    int dj = static_cast<int>(l2 % mh_) - static_cast<int>(l % mh_);
    if (cyclic_) di = canonical(di, mv_), dj = canonical(dj, mh_);
    return {di, dj};
}

std::size_t MotionBins::bin_of(int di, int dj) const {
    for (std::size_t b = 0; b < members_.size(); ++b)
        for (const auto& m : members_[b])
            if (m.first == di && m.second == dj) return b;
    return members_.size();
}

std::vector<double> uniform_motion_table(const MotionBins& bins, std::size_t rows) {
    double total = 0.0;
    for (std::size_t b = 0; b < bins.bins(); ++b) total += static_cast<double>(bins.bin_size(b));
    std::vector<double> table;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t b = 0; b < bins.bins(); ++b) table.push_back(static_cast<double>(bins.bin_size(b)) / total);
    return table;
}

// ------------------------------------------------------------------ model

void ThmmModel::validate() const {
    const std::size_t n = shape.n();
    const std::size_t L = transforms.size();
    require(transforms.shape() == shape, "ThmmModel: transformation set shape differs from model shape");
    require(transforms.grid().has_value(), "ThmmModel: transformation set needs a shift grid");
    require(classes >= 1, "ThmmModel: at least one class");
    require(mu.size() == classes && phi.size() == classes, "ThmmModel: class arrays");
    require(psi.size() == n, "ThmmModel: psi length");
    require(initial.size() == classes * L, "ThmmModel: initial distribution must have C * L entries");
    require(class_trans.size() == classes * classes, "ThmmModel: class transition matrix must be C x C");
    detail::check_distribution(initial, "ThmmModel: initial distribution");
    for (std::size_t c = 0; c < classes; ++c) {
        require(mu[c].size() == n && phi[c].size() == n, "ThmmModel: template length");
        detail::check_positive(phi[c], "ThmmModel: phi");
        detail::check_distribution(std::span(class_trans).subspan(c * classes, classes), "ThmmModel: class_trans row");
    }
    detail::check_positive(psi, "ThmmModel: psi");
    const MotionBins b = bins();
    require(motion.table.size() == motion_rows() * b.bins(), "ThmmModel: motion table size does not match the bins");
    for (std::size_t r = 0; r < motion_rows(); ++r)
        detail::check_distribution(std::span(motion.table).subspan(r * b.bins(), b.bins()), "ThmmModel: motion row");
}

namespace {

struct Edge {
    std::size_t to;
    std::size_t bin;
    double p;
    double log_p;
};

/// Everything the recursions need, built once per model.
class Engine {
public:
    explicit Engine(const ThmmModel& model)
        : m_(model), C_(model.classes), L_(model.transforms.size()), S_(C_ * L_), bins_(model.bins()),
          core_(model.transforms, model.mu, model.phi, model.psi) {
        model.validate();
        const std::size_t rows = model.motion_rows();
        edges_.assign(rows * L_, {});
        norm_.assign(rows * L_, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* q = model.motion.table.data() + r * bins_.bins();
            for (std::size_t l = 0; l < L_; ++l) {
                double z = 0.0;
                for (const auto& mv : bins_.moves(l)) z += q[mv.bin] / static_cast<double>(bins_.bin_size(mv.bin));
                norm_[r * L_ + l] = z;
                for (const auto& mv : bins_.moves(l)) {
                    const double w = q[mv.bin] / static_cast<double>(bins_.bin_size(mv.bin));
                    if (w <= 0.0 || z <= 0.0) continue;
                    edges_[r * L_ + l].push_back({mv.to, mv.bin, w / z, std::log(w / z)});
                }
            }
        }
        log_a_.resize(C_ * C_);
        for (std::size_t i = 0; i < C_ * C_; ++i) log_a_[i] = std::log(model.class_trans[i]);
        log_pi_.resize(S_);
        for (std::size_t s = 0; s < S_; ++s) log_pi_[s] = std::log(model.initial[s]);
    }

    std::size_t C() const { return C_; }
    std::size_t L() const { return L_; }
    std::size_t S() const { return S_; }
    const MotionBins& bins() const { return bins_; }
    const detail::DiagCore& core() const { return core_; }
    std::size_t row(std::size_t c) const { return m_.motion.per_class ? c : 0; }
    const std::vector<Edge>& edges(std::size_t c, std::size_t l) const { return edges_[row(c) * L_ + l]; }
    double norm(std::size_t r, std::size_t l) const { return norm_[r * L_ + l]; }
    double a(std::size_t c, std::size_t c2) const { return m_.class_trans[c * C_ + c2]; }
    double log_a(std::size_t c, std::size_t c2) const { return log_a_[c * C_ + c2]; }
    double log_pi(std::size_t s) const { return log_pi_[s]; }

    std::vector<std::vector<double>> emissions(std::span<const Image> frames, const ParallelConfig& parallel) const {
        std::vector<std::vector<double>> out(frames.size(), std::vector<double>(S_));
        const std::size_t chunks = parallel.chunk_count(frames.size());
        parallel_chunks(frames.size(), chunks, parallel.resolved_threads(), [&](std::size_t, std::size_t b, std::size_t e) {
            for (std::size_t t = b; t < e; ++t) {
                require_length(frames[t], m_.shape, "thmm frame");
                detail::check_finite(frames[t], "thmm frame");
                core_.emission_table(frames[t], out[t]);
            }
        });
        return out;
    }

    /// out(s') = sum_s a(s) p(s' | s)
    void predict(std::span<const double> a, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        if (!m_.motion.per_class) {
            std::vector<double> mixed(S_, 0.0);  // (c', l): class step first
            for (std::size_t c = 0; c < C_; ++c)
                for (std::size_t c2 = 0; c2 < C_; ++c2) {
                    const double w = a_(c, c2);
                    if (w == 0.0) continue;
                    for (std::size_t l = 0; l < L_; ++l) mixed[c2 * L_ + l] += a[c * L_ + l] * w;
                }
            for (std::size_t c2 = 0; c2 < C_; ++c2)
                for (std::size_t l = 0; l < L_; ++l) {
                    const double v = mixed[c2 * L_ + l];
                    if (v == 0.0) continue;
                    for (const auto& e : edges(c2, l)) out[c2 * L_ + e.to] += v * e.p;
                }
        } else {
            std::vector<double> moved(S_, 0.0);  // (c, l'): motion step under the previous class
            for (std::size_t c = 0; c < C_; ++c)
                for (std::size_t l = 0; l < L_; ++l) {
                    const double v = a[c * L_ + l];
                    if (v == 0.0) continue;
                    for (const auto& e : edges(c, l)) moved[c * L_ + e.to] += v * e.p;
                }
            for (std::size_t c = 0; c < C_; ++c)
                for (std::size_t c2 = 0; c2 < C_; ++c2) {
                    const double w = a_(c, c2);
                    if (w == 0.0) continue;
                    for (std::size_t l = 0; l < L_; ++l) out[c2 * L_ + l] += w * moved[c * L_ + l];
                }
        }
    }

    /// v(c, l') = sum_c' a(c, c') u(c', l')
    std::vector<double> class_pull(std::span<const double> u) const {
        std::vector<double> v(S_, 0.0);
        for (std::size_t c = 0; c < C_; ++c)
            for (std::size_t c2 = 0; c2 < C_; ++c2) {
                const double w = a_(c, c2);
                if (w == 0.0) continue;
                for (std::size_t l = 0; l < L_; ++l) v[c * L_ + l] += w * u[c2 * L_ + l];
            }
        return v;
    }

    /// out(s) = sum_s' p(s' | s) u(s')
    void pull(std::span<const double> u, std::span<double> out) const {
        const auto v = class_pull(u);
        for (std::size_t c = 0; c < C_; ++c)
            for (std::size_t l = 0; l < L_; ++l) {
                double acc = 0.0;
                for (const auto& e : edges(c, l)) acc += e.p * v[c * L_ + e.to];
                out[c * L_ + l] = acc;
            }
    }

    double transition(std::size_t from, std::size_t to) const {
        const std::size_t c = from / L_, l = from % L_, c2 = to / L_, l2 = to % L_;
        double p = 0.0;
        for (const auto& e : edges(c, l))
            if (e.to == l2) p += e.p;
        return a(c, c2) * p;
    }

private:
    double a_(std::size_t c, std::size_t c2) const { return m_.class_trans[c * C_ + c2]; }

    const ThmmModel& m_;
    std::size_t C_, L_, S_;
    MotionBins bins_;
    detail::DiagCore core_;
    std::vector<std::vector<Edge>> edges_;
    std::vector<double> norm_;
    std::vector<double> log_a_, log_pi_;
};

[[noreturn]] void underflow(std::size_t t) {
    throw NumericalUnderflow("thmm: zero total path probability at frame " + std::to_string(t));
}

struct ForwardPass {
    std::vector<std::vector<double>> alpha;  // normalized
    std::vector<double> scale;               // normalizer of step t (scaled emissions)
    std::vector<std::vector<double>> e;      // emissions divided by their per-frame maximum
    double loglik = 0.0;
};

ForwardPass forward(const Engine& eng, std::span<const Image> frames, const ThmmModel& model,
                    const ParallelConfig& parallel) {
    require(!frames.empty(), "thmm: sequence must have at least one frame");
    const std::size_t S = eng.S(), T = frames.size();
    ForwardPass fp;
    const auto log_e = eng.emissions(frames, parallel);
    fp.e.assign(T, std::vector<double>(S));
    fp.alpha.assign(T, std::vector<double>(S));
    fp.scale.assign(T, 0.0);
    std::vector<double> pred(S);
    for (std::size_t t = 0; t < T; ++t) {
        const double top = *std::max_element(log_e[t].begin(), log_e[t].end());
        if (!std::isfinite(top)) underflow(t);
        for (std::size_t s = 0; s < S; ++s) fp.e[t][s] = std::exp(log_e[t][s] - top);
        if (t == 0) {
            for (std::size_t s = 0; s < S; ++s) fp.alpha[0][s] = model.initial[s] * fp.e[0][s];
        } else {
            eng.predict(fp.alpha[t - 1], pred);
            for (std::size_t s = 0; s < S; ++s) fp.alpha[t][s] = pred[s] * fp.e[t][s];
        }
        const double z = std::accumulate(fp.alpha[t].begin(), fp.alpha[t].end(), 0.0);
        if (!(z > 0.0) || !std::isfinite(z)) underflow(t);
        for (double& v : fp.alpha[t]) v /= z;
        fp.scale[t] = z;
        fp.loglik += std::log(z) + top;
    }
    return fp;
}

std::vector<std::size_t> viterbi_path(const Engine& eng, std::span<const Image> frames,
                                      const ParallelConfig& parallel, bool per_class) {
    require(!frames.empty(), "thmm: sequence must have at least one frame");
    const std::size_t C = eng.C(), L = eng.L(), S = eng.S(), T = frames.size();
    const double ninf = -std::numeric_limits<double>::infinity();
    const auto log_e = eng.emissions(frames, parallel);
    std::vector<double> delta(S), next(S);
    std::vector<std::vector<std::uint32_t>> back(T, std::vector<std::uint32_t>(S, 0));
    for (std::size_t s = 0; s < S; ++s) delta[s] = eng.log_pi(s) + log_e[0][s];

    std::vector<double> stage(S);
    std::vector<std::size_t> stage_arg(S);
    for (std::size_t t = 1; t < T; ++t) {
        std::fill(next.begin(), next.end(), ninf);
        auto& bp = back[t];
        if (!per_class) {
            // max over the previous class at fixed position, then over motion.
            for (std::size_t c2 = 0; c2 < C; ++c2)
                for (std::size_t l = 0; l < L; ++l) {
                    double best = ninf;
                    std::size_t arg = 0;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double v = delta[c * L + l] + eng.log_a(c, c2);
                        if (v > best) best = v, arg = c;
                    }
                    stage[c2 * L + l] = best;
                    stage_arg[c2 * L + l] = arg * L + l;
                }
            std::vector<std::size_t> owner(S, S);
            for (std::size_t c2 = 0; c2 < C; ++c2)
                for (std::size_t l = 0; l < L; ++l) {
                    const double base = stage[c2 * L + l];
                    if (base == ninf) continue;
                    const std::size_t pred = stage_arg[c2 * L + l];
                    for (const auto& e : eng.edges(c2, l)) {
                        const std::size_t to = c2 * L + e.to;
                        const double v = base + e.log_p;
                        if (v > next[to] || (v == next[to] && pred < owner[to])) next[to] = v, owner[to] = pred;
                    }
                }
            for (std::size_t s = 0; s < S; ++s) bp[s] = static_cast<std::uint32_t>(owner[s] == S ? 0 : owner[s]);
        } else {
            // max over motion under the previous class, then over that class.
            std::vector<std::size_t> owner(S, S);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t l = 0; l < L; ++l) {
                    const double base = delta[c * L + l];
                    if (base == ninf) continue;
                    for (const auto& e : eng.edges(c, l)) {
                        const std::size_t to = c * L + e.to;
                        const double v = base + e.log_p;
                        if (v > stage[to] || owner[to] == S || (v == stage[to] && c * L + l < owner[to]))
                            stage[to] = v, owner[to] = c * L + l;
                    }
                }
            for (std::size_t s = 0; s < S; ++s)
                if (owner[s] == S) stage[s] = ninf;
            for (std::size_t c2 = 0; c2 < C; ++c2)
                for (std::size_t l = 0; l < L; ++l) {
                    double best = ninf;
                    std::size_t arg = S;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double v = stage[c * L + l] + eng.log_a(c, c2);
                        if (v > best) best = v, arg = owner[c * L + l];
                    }
                    next[c2 * L + l] = best;
                    bp[c2 * L + l] = static_cast<std::uint32_t>(arg == S ? 0 : arg);
                }
        }
        for (std::size_t s = 0; s < S; ++s) next[s] += log_e[t][s];
        std::swap(delta, next);
    }
    const std::size_t last = argmax(delta);
    if (delta[last] == ninf) underflow(T - 1);
    std::vector<std::size_t> path(T);
    path[T - 1] = last;
    for (std::size_t t = T - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
    return path;
}

}  // namespace

double transition_probability(const ThmmModel& model, std::size_t from, std::size_t to) {
    Engine eng(model);
    require(from < eng.S() && to < eng.S(), "transition_probability: state out of range");
    return eng.transition(from, to);
}

std::vector<double> emission_loglik(const ThmmModel& model, const Image& frame) {
    Engine eng(model);
    return eng.emissions(std::span<const Image>(&frame, 1), ParallelConfig{true, 1})[0];
}

SequencePosterior forward_backward(const ThmmModel& model, std::span<const Image> frames, bool include_map_path,
                                   const ParallelConfig& parallel) {
    Engine eng(model);
    const std::size_t C = eng.C(), L = eng.L(), S = eng.S(), T = frames.size();
    const std::size_t B = eng.bins().bins();
    auto fp = forward(eng, frames, model, parallel);

    SequencePosterior post;
    post.states = S;
    post.loglik = fp.loglik;
    post.class_pairs.assign(C * C, 0.0);
    post.motion_counts.assign(model.motion_rows() * B, 0.0);
    post.gamma.assign(T, std::vector<double>(S));

    // beta is kept max-normalized and each step's pair statistics are divided
    // by their own total, so no step depends on the forward scale (which can
    // be tiny when a frame's best state is unreachable).
    std::vector<double> beta(S, 1.0), prev(S), u(S);
    std::vector<double> step_pairs(C * C), step_motion(post.motion_counts.size());
    post.gamma[T - 1] = fp.alpha[T - 1];
    for (std::size_t t = T - 1; t > 0; --t) {
        for (std::size_t s = 0; s < S; ++s) u[s] = fp.e[t][s] * beta[s];
        const auto& a = fp.alpha[t - 1];
        std::fill(step_pairs.begin(), step_pairs.end(), 0.0);
        std::fill(step_motion.begin(), step_motion.end(), 0.0);
        // Transition statistics for the step t-1 -> t.
        const auto v = eng.class_pull(u);
        for (std::size_t c = 0; c < C; ++c) {
            double* counts = step_motion.data() + eng.row(c) * B;
            for (std::size_t l = 0; l < L; ++l) {
                const double w = a[c * L + l];
                if (w == 0.0) continue;
                for (const auto& e : eng.edges(c, l)) counts[e.bin] += w * e.p * v[c * L + e.to];
            }
        }
        if (!model.motion.per_class) {
            std::vector<double> h(S, 0.0);  // h(c', l) = sum_l' p(l' | l) u(c', l')
            for (std::size_t c2 = 0; c2 < C; ++c2)
                for (std::size_t l = 0; l < L; ++l)
                    for (const auto& e : eng.edges(0, l)) h[c2 * L + l] += e.p * u[c2 * L + e.to];
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t c2 = 0; c2 < C; ++c2) {
                    double acc = 0.0;
                    for (std::size_t l = 0; l < L; ++l) acc += a[c * L + l] * h[c2 * L + l];
                    step_pairs[c * C + c2] += eng.a(c, c2) * acc;
                }
        } else {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t c2 = 0; c2 < C; ++c2) {
                    double acc = 0.0;
                    for (std::size_t l = 0; l < L; ++l) {
                        const double w = a[c * L + l];
                        if (w == 0.0) continue;
                        double inner = 0.0;
                        for (const auto& e : eng.edges(c, l)) inner += e.p * u[c2 * L + e.to];
                        acc += w * inner;
                    }
                    step_pairs[c * C + c2] += eng.a(c, c2) * acc;
                }
        }
        eng.pull(u, prev);
        std::swap(beta, prev);
        double z = 0.0;
        for (std::size_t s = 0; s < S; ++s) z += (post.gamma[t - 1][s] = a[s] * beta[s]);
        if (!(z > 0.0) || !std::isfinite(z)) underflow(t);
        for (double& g : post.gamma[t - 1]) g /= z;
        for (std::size_t i = 0; i < step_pairs.size(); ++i) post.class_pairs[i] += step_pairs[i] / z;
        for (std::size_t i = 0; i < step_motion.size(); ++i) post.motion_counts[i] += step_motion[i] / z;
        const double top = *std::max_element(beta.begin(), beta.end());
        for (double& b : beta) b /= top;
    }
    if (include_map_path) post.map_path = viterbi_path(eng, frames, parallel, model.motion.per_class);
    return post;
}

std::vector<std::size_t> viterbi(const ThmmModel& model, std::span<const Image> frames,
                                 const ParallelConfig& parallel) {
    Engine eng(model);
    return viterbi_path(eng, frames, parallel, model.motion.per_class);
}

double score_sequence(const ThmmModel& model, std::span<const Image> frames, const ParallelConfig& parallel) {
    Engine eng(model);
    return forward(eng, frames, model, parallel).loglik;
}

double path_log_probability(const ThmmModel& model, std::span<const Image> frames, std::span<const std::size_t> path) {
    Engine eng(model);
    require(path.size() == frames.size() && !frames.empty(), "path_log_probability: path/frames length mismatch");
    const auto log_e = eng.emissions(frames, ParallelConfig{true, 1});
    double lp = eng.log_pi(path[0]) + log_e[0][path[0]];
    for (std::size_t t = 1; t < path.size(); ++t)
        lp += std::log(eng.transition(path[t - 1], path[t])) + log_e[t][path[t]];
    return lp;
}

// ------------------------------------------------------------------ EM

StepResult<ThmmModel> thmm_em_step(const ThmmModel& model, std::span<const Sequence> sequences,
                                   const ThmmEmOptions& options) {
    require(!sequences.empty(), "thmm_em_step: need at least one sequence");
    Engine eng(model);
    const std::size_t C = eng.C(), L = eng.L(), S = eng.S(), n = model.shape.n();
    const std::size_t B = eng.bins().bins(), rows = model.motion_rows();
    const auto& par = options.em.parallel;

    detail::DiagCore::Stats stats(C, L, n);
    std::vector<double> class_pairs(C * C, 0.0), motion_counts(rows * B, 0.0), first(S, 0.0);
    std::vector<double> departures(rows * L, 0.0);  // expected visits at t < T-1
    std::vector<Image> all_frames;
    double loglik = 0.0, frame_count = 0.0;
    for (const auto& seq : sequences) {
        require(!seq.empty(), "thmm_em_step: empty sequence");
        const auto post = forward_backward(model, seq, false, par);
        loglik += post.loglik;
        frame_count += static_cast<double>(seq.size());
        for (std::size_t i = 0; i < class_pairs.size(); ++i) class_pairs[i] += post.class_pairs[i];
        for (std::size_t i = 0; i < motion_counts.size(); ++i) motion_counts[i] += post.motion_counts[i];
        for (std::size_t s = 0; s < S; ++s) first[s] += post.gamma[0][s];
        for (std::size_t t = 0; t + 1 < seq.size(); ++t)
            for (std::size_t s = 0; s < S; ++s) departures[eng.row(s / L) * L + s % L] += post.gamma[t][s];

        const std::size_t chunks = par.chunk_count(seq.size());
        std::vector<detail::DiagCore::Stats> partial(chunks, detail::DiagCore::Stats(C, L, n));
        parallel_chunks(seq.size(), chunks, par.resolved_threads(), [&](std::size_t k, std::size_t b, std::size_t e) {
            for (std::size_t t = b; t < e; ++t) eng.core().accumulate(seq[t], post.gamma[t], partial[k]);
        });
        for (const auto& p : partial) stats.merge(p);
        all_frames.insert(all_frames.end(), seq.begin(), seq.end());
    }

    StepResult<ThmmModel> result{model, loglik, {}};
    result.report.loglik = loglik;
    ThmmModel& next = result.model;
    const double floor = model.variance_floor;
    const double nseq = static_cast<double>(sequences.size());

    std::vector<double> class_first(C, 0.0);
    for (std::size_t s = 0; s < S; ++s) class_first[s / L] += first[s];
    for (std::size_t c = 0; c < C; ++c) {
        const double Nc = stats.cluster_mass(c);
        result.report.cluster_mass.push_back(Nc);
        if (!(Nc > options.em.rescue_fraction * frame_count) || Nc <= 0.0) {
            detail::rescue_template(next.mu[c], next.phi[c], all_frames, options.em.rescue_seed, c);
            for (std::size_t c2 = 0; c2 < C; ++c2) next.class_trans[c * C + c2] = 1.0 / static_cast<double>(C);
            result.report.rescued.push_back(c);
            continue;
        }
        for (std::size_t s = 0; s < n; ++s) {
            const double m = stats.z[c * n + s] / Nc;
            next.mu[c][s] = m;
            next.phi[c][s] = std::max(floor, stats.zz[c * n + s] / Nc - m * m);
        }
        double row = 0.0;
        for (std::size_t c2 = 0; c2 < C; ++c2) row += class_pairs[c * C + c2];
        if (row > 0.0)
            for (std::size_t c2 = 0; c2 < C; ++c2) next.class_trans[c * C + c2] = class_pairs[c * C + c2] / row;
    }
    for (std::size_t p = 0; p < n; ++p) next.psi[p] = stats.resid[p] / frame_count;
    detail::finish_psi(next.psi, options.em.tie_psi, floor);

    if (model.joint_initial) {
        for (std::size_t s = 0; s < S; ++s) next.initial[s] = first[s] / nseq;
    } else {
        for (std::size_t s = 0; s < S; ++s) next.initial[s] = class_first[s / L] / nseq / static_cast<double>(L);
    }
    // Rescued classes keep a small foothold in the initial distribution.
    for (std::size_t c : result.report.rescued)
        for (std::size_t l = 0; l < L; ++l)
            next.initial[c * L + l] = std::max(next.initial[c * L + l], 1.0 / static_cast<double>(S));
    detail::normalize(next.initial);

    if (!options.clamp_motion) {
        const auto& bins = eng.bins();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* cnt = motion_counts.data() + r * B;
            const double total = std::accumulate(cnt, cnt + B, 0.0);
            if (!(total > 0.0)) continue;
            std::vector<double> q(model.motion.table.begin() + static_cast<std::ptrdiff_t>(r * B),
                                  model.motion.table.begin() + static_cast<std::ptrdiff_t>((r + 1) * B));
            if (bins.cyclic()) {
                for (std::size_t b = 0; b < B; ++b) q[b] = cnt[b] / total;
            } else {
                // Minorize-maximize on sum_b n_b log q_b - sum_l D_l log Z_l(q).
                for (std::size_t sweep = 0; sweep < std::max<std::size_t>(1, options.motion_sweeps); ++sweep) {
                    std::vector<double> denom(B, 0.0);
                    for (std::size_t l = 0; l < L; ++l) {
                        const double D = departures[r * L + l];
                        if (D == 0.0) continue;
                        double z = 0.0;
                        for (const auto& mv : bins.moves(l)) z += q[mv.bin] / static_cast<double>(bins.bin_size(mv.bin));
                        if (!(z > 0.0)) continue;
                        for (const auto& mv : bins.moves(l))
                            denom[mv.bin] += D / (z * static_cast<double>(bins.bin_size(mv.bin)));
                    }
                    double sum = 0.0;
                    for (std::size_t b = 0; b < B; ++b) sum += (q[b] = denom[b] > 0.0 ? cnt[b] / denom[b] : 0.0);
                    for (double& v : q) v /= sum;
                }
            }
            std::copy(q.begin(), q.end(), next.motion.table.begin() + static_cast<std::ptrdiff_t>(r * B));
        }
    }
    return result;
}

ThmmModel thmm_init_from_tmg(const TmgModel& tmg, const ThmmConfig& config) {
    tmg.validate();
    require(config.self_transition > 0.0 && config.self_transition <= 1.0, "thmm init: self transition in (0, 1]");
    ThmmModel m;
    m.shape = tmg.shape;
    m.transforms = tmg.transforms;
    m.classes = tmg.clusters;
    m.mu = tmg.mu;
    m.phi = tmg.phi;
    m.psi = tmg.psi;
    m.variance_floor = tmg.variance_floor;
    m.joint_initial = config.joint_initial;
    const std::size_t C = m.classes, L = m.transforms.size();
    if (config.align_templates && m.transforms.grid() && m.transforms.cyclic_grid()) {
        const std::size_t ref = argmax(tmg.pi);
        const auto centered = [](Image v) {
            const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            for (double& x : v) x -= mean;
            return v;
        };
        const Image target = centered(m.mu[ref]);
        for (std::size_t c = 0; c < C; ++c) {
            if (c == ref) continue;
            std::size_t best_l = 0;
            double best = -INFINITY;
            for (std::size_t l = 0; l < L; ++l) {
                const Image moved = centered(tigm::apply(m.transforms[l], m.mu[c]));
                const double score = std::inner_product(moved.begin(), moved.end(), target.begin(), 0.0);
                if (score > best) best = score, best_l = l;
            }
            m.mu[c] = tigm::apply(m.transforms[best_l], m.mu[c]);
            m.phi[c] = tigm::apply(m.transforms[best_l], m.phi[c]);
        }
    }
    m.initial.resize(C * L);
    for (std::size_t s = 0; s < C * L; ++s) m.initial[s] = tmg.pi[s / L] / static_cast<double>(L);
    m.class_trans.assign(C * C, C > 1 ? (1.0 - config.self_transition) / static_cast<double>(C - 1) : 1.0);
    for (std::size_t c = 0; c < C; ++c) m.class_trans[c * C + c] = C > 1 ? config.self_transition : 1.0;
    m.motion = config.motion;
    if (m.motion.table.empty()) m.motion.table = uniform_motion_table(m.bins(), m.motion_rows());
    m.validate();
    return m;
}

// ------------------------------------------------------------------ inference tasks

std::vector<Image> denoise(const ThmmModel& model, std::span<const Image> frames, DenoiseMode mode,
                           const ParallelConfig& parallel) {
    const std::size_t L = model.transforms.size(), n = model.shape.n();
    std::vector<Image> out(frames.size(), Image(n, 0.0));
    if (mode == DenoiseMode::Hard) {
        const auto path = viterbi(model, frames, parallel);
        for (std::size_t t = 0; t < frames.size(); ++t)
            out[t] = tigm::apply(model.transforms[path[t] % L], model.mu[path[t] / L]);
        return out;
    }
    const auto post = forward_backward(model, frames, false, parallel);
    detail::DiagCore core(model.transforms, model.mu, model.phi, model.psi);
    Image buf(n);
    for (std::size_t t = 0; t < frames.size(); ++t)
        for (std::size_t s = 0; s < post.states; ++s) {
            const double g = post.gamma[t][s];
            if (g == 0.0) continue;
            core.observed_posterior_mean(frames[t], s % L, s / L, buf);
            for (std::size_t p = 0; p < n; ++p) out[t][p] += g * buf[p];
        }
    return out;
}

std::vector<Image> stabilize(const ThmmModel& model, std::span<const Image> frames, const ParallelConfig& parallel) {
    const std::size_t L = model.transforms.size(), n = model.shape.n();
    const auto post = forward_backward(model, frames, false, parallel);
    detail::DiagCore core(model.transforms, model.mu, model.phi, model.psi);
    std::vector<Image> out(frames.size(), Image(n, 0.0));
    Image mean(n), var(n);
    for (std::size_t t = 0; t < frames.size(); ++t)
        for (std::size_t s = 0; s < post.states; ++s) {
            const double g = post.gamma[t][s];
            if (g == 0.0) continue;
            core.latent_posterior(frames[t], s % L, s / L, mean, var);
            for (std::size_t p = 0; p < n; ++p) out[t][p] += g * mean[p];
        }
    return out;
}

std::vector<TrackPoint> track(const ThmmModel& model, std::span<const Image> frames, bool use_viterbi,
                              const ParallelConfig& parallel) {
    const std::size_t L = model.transforms.size();
    const auto post = forward_backward(model, frames, use_viterbi, parallel);
    std::vector<TrackPoint> out;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const auto& g = post.gamma[t];
        const std::size_t s = use_viterbi ? post.map_path[t] : argmax(g);
        double runner = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k)
            if (k != s) runner = std::max(runner, g[k]);
        TrackPoint tp;
        tp.t = t;
        tp.c = s / L;
        tp.l = s % L;
        std::tie(tp.dv, tp.dh) = model.transforms.grid_shift(tp.l);
        tp.log_margin = std::log(g[s]) - std::log(runner);
        out.push_back(tp);
    }
    return out;
}

SampledSequence sample_sequence(const ThmmModel& model, std::size_t T, std::uint64_t seed) {
    Engine eng(model);
    const std::size_t L = eng.L(), C = eng.C(), n = model.shape.n();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    SampledSequence out;
    std::size_t s = detail::draw_index(model.initial, rng);
    for (std::size_t t = 0; t < T; ++t) {
        if (t > 0) {
            const std::size_t c = s / L, l = s % L;
            const std::size_t c2 = detail::draw_index(std::span(model.class_trans).subspan(c * C, C), rng);
            const auto& edges = eng.edges(c, l);
            std::vector<double> p;
            for (const auto& e : edges) p.push_back(e.p);
            require(!p.empty(), "sample_sequence: position without successors");
            s = c2 * L + edges[detail::draw_index(p, rng)].to;
        }
        const std::size_t c = s / L, l = s % L;
        Image z(n);
        for (std::size_t k = 0; k < n; ++k) z[k] = model.mu[c][k] + std::sqrt(model.phi[c][k]) * normal(rng);
        Image x = tigm::apply(model.transforms[l], z);
        for (std::size_t p = 0; p < n; ++p) x[p] += std::sqrt(model.psi[p]) * normal(rng);
        out.frames.push_back(std::move(x));
        out.states.push_back(s);
    }
    return out;
}

}  // namespace tigm
