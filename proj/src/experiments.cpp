#include "tigm/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "model_util.hpp"

namespace tigm {

TransformationSet build_transforms(const TransformSpec& spec, ImageShape shape) {
    if (spec.kind == "identity") return identity_set(shape);
    if (spec.kind == "translate") return build_translation_set(shape, spec.shifts_v, spec.shifts_h, spec.boundary);
    if (spec.kind == "shear") return build_shear_translation_set(shape, default_shear_family(), spec.boundary);
    throw ContractViolation("unknown transformation kind '" + spec.kind + "' (identity, translate or shear)");
}

// ---------------------------------------------------------------- training

namespace {

std::vector<Image> flatten(std::span<const Sequence> sequences) {
    std::vector<Image> out;
    for (const auto& s : sequences) out.insert(out.end(), s.begin(), s.end());
    return out;
}

bool converged(double prev, double cur, double tol) {
    return std::isfinite(prev) && std::abs(cur - prev) <= tol * std::abs(prev);
}

template <class Model, class Step>
Model run_em(Model model, const EmSchedule& schedule, std::vector<StepReport>& steps, std::size_t restart,
             const StepCallback& on_step, Step&& step) {
    double prev = -INFINITY;
    for (std::size_t it = 0; it < schedule.max_iterations; ++it) {
        auto r = step(model);
        r.report.iteration = it;
        steps.push_back(r.report);
        if (on_step) on_step(restart, r.report);
        model = std::move(r.model);
        const bool stop = converged(prev, r.loglik, schedule.tolerance);
        prev = r.loglik;
        if (stop) break;
    }
    return model;
}

}  // namespace

double total_loglik(const AnyModel& model, std::span<const Sequence> sequences, const ParallelConfig& parallel) {
    if (const auto* m = std::get_if<ThmmModel>(&model)) {
        double s = 0.0;
        for (const auto& seq : sequences) s += score_sequence(*m, seq, parallel);
        return s;
    }
    const auto data = flatten(sequences);
    if (const auto* m = std::get_if<TmgModel>(&model)) return tmg_loglik(*m, data, parallel);
    if (const auto* m = std::get_if<TcaModel>(&model)) return tca_loglik(*m, data, parallel);
    return mtca_loglik(std::get<MtcaModel>(model), data, parallel);
}

TrainOutcome train_model(const TrainSettings& st, ImageShape shape, std::span<const Sequence> sequences,
                         const StepCallback& on_step) {
    require(!sequences.empty() && !sequences[0].empty(), "train_model: no training data");
    require(st.restarts >= 1, "train_model: need at least one restart");
    const TransformationSet ts = build_transforms(st.transforms, shape);
    const auto data = flatten(sequences);
    TrainOutcome best{TmgModel{}, {}, {}, 0, -INFINITY};
    bool have = false;
    for (std::size_t r = 0; r < st.restarts; ++r) {
        const std::uint64_t seed = detail::mix_seed(st.seed, r);
        EmOptions em = st.em;
        em.rescue_seed = detail::mix_seed(seed, 0x7e5c);
        std::vector<StepReport> steps;
        AnyModel model = TmgModel{};
        switch (st.family) {
            case Family::Tmg: {
                auto m = tmg_init(ts, st.classes, data, seed);
                model = run_em(std::move(m), st.schedule, steps, r, on_step,
                               [&](const TmgModel& x) { return tmg_em_step(x, data, em); });
                break;
            }
            case Family::Tca: {
                auto m = tca_init(ts, st.factors, data, seed);
                m.fast_likelihood = st.fast_likelihood;
                model = run_em(std::move(m), st.schedule, steps, r, on_step,
                               [&](const TcaModel& x) { return tca_em_step(x, data, em); });
                break;
            }
            case Family::Mtca: {
                auto m = mtca_init(ts, st.classes, st.factors, data, seed);
                m.fast_likelihood = st.fast_likelihood;
                model = run_em(std::move(m), st.schedule, steps, r, on_step,
                               [&](const MtcaModel& x) { return mtca_em_step(x, data, em); });
                break;
            }
            case Family::Thmm: {
                auto tmg = tmg_init(ts, st.classes, data, seed);
                for (std::size_t it = 0; it < st.init_iterations; ++it) tmg = tmg_em_step(tmg, data, em).model;
                ThmmConfig cfg;
                cfg.motion = st.motion;
                cfg.joint_initial = st.joint_initial;
                cfg.self_transition = st.self_transition;
                cfg.align_templates = st.align_templates;
                ThmmEmOptions opt;
                opt.em = em;
                opt.clamp_motion = st.clamp_motion;
                model = run_em(thmm_init_from_tmg(tmg, cfg), st.schedule, steps, r, on_step,
                               [&](const ThmmModel& x) { return thmm_em_step(x, sequences, opt); });
                break;
            }
        }
        const double ll = total_loglik(model, sequences, st.em.parallel);
        best.restart_loglik.push_back(ll);
        if (!have || ll > best.loglik) {
            have = true;
            best.model = std::move(model);
            best.steps = std::move(steps);
            best.best_restart = r;
            best.loglik = ll;
        }
    }
    return best;
}

std::vector<std::size_t> assign_clusters(const AnyModel& model, std::span<const Image> data) {
    std::vector<std::size_t> out(data.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::vector<double> mass;
        std::size_t L = 0;
        if (const auto* m = std::get_if<TmgModel>(&model)) {
            mass = tmg_posterior(*m, data[i]).resp;
            L = m->transforms.size();
        } else if (const auto* m = std::get_if<MtcaModel>(&model)) {
            mass = mtca_posterior(*m, data[i]).resp;
            L = m->transforms.size();
        } else if (const auto* m = std::get_if<ThmmModel>(&model)) {
            mass = forward_backward(*m, data.subspan(i, 1)).gamma[0];
            L = m->transforms.size();
        } else {
            continue;  // one cluster
        }
        std::vector<double> per_class(mass.size() / L, 0.0);
        for (std::size_t s = 0; s < mass.size(); ++s) per_class[s / L] += mass[s];
        out[i] = argmax(per_class);
    }
    return out;
}

std::size_t TcaClassifier::classify(const Image& x) const { return bayes_classify(models, priors, x); }

TcaClassifier train_tca_classifier(std::span<const Image> data, std::span<const std::size_t> labels,
                                   std::size_t classes, const TransformationSet& transforms, std::size_t factors,
                                   const EmSchedule& schedule, std::size_t restarts, std::uint64_t seed,
                                   const EmOptions& em) {
    require(data.size() == labels.size(), "train_tca_classifier: data and labels differ in length");
    require(restarts >= 1, "train_tca_classifier: need at least one restart");
    TcaClassifier out;
    for (std::size_t k = 0; k < classes; ++k) {
        std::vector<Image> own;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (labels[i] == k) own.push_back(data[i]);
        require(!own.empty(), "train_tca_classifier: class " + std::to_string(k) + " has no examples");
        out.priors.push_back(static_cast<double>(own.size()) / static_cast<double>(data.size()));
        TcaModel best;
        double best_ll = -INFINITY;
        for (std::size_t r = 0; r < restarts; ++r) {
            const std::uint64_t s = detail::mix_seed(seed, k * 1000 + r);
            EmOptions opt = em;
            opt.rescue_seed = detail::mix_seed(s, 0x7e5c);
            std::vector<StepReport> steps;
            auto m = run_em(tca_init(transforms, factors, own, s), schedule, steps, r, {},
                            [&](const TcaModel& x) { return tca_em_step(x, own, opt); });
            const double ll = tca_loglik(m, own, em.parallel);
            if (ll > best_ll) best_ll = ll, best = std::move(m);
        }
        out.models.push_back(std::move(best));
    }
    return out;
}

// ---------------------------------------------------------------- metrics

double classification_error(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
    require(predicted.size() == truth.size() && !truth.empty(), "classification_error: length mismatch or empty");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) wrong += predicted[i] != truth[i];
    return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

double cluster_purity_error(std::span<const std::size_t> clusters, std::span<const std::size_t> truth) {
    require(clusters.size() == truth.size() && !truth.empty(), "cluster_purity_error: length mismatch or empty");
    std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i < truth.size(); ++i) ++counts[clusters[i]][truth[i]];
    std::size_t right = 0;
    for (const auto& [cluster, by_label] : counts) {
        std::size_t top = 0;
        for (const auto& [label, n] : by_label) top = std::max(top, n);  // map order: ties keep the smaller label
        right += top;
    }
    return 1.0 - static_cast<double>(right) / static_cast<double>(truth.size());
}

double shift_agreement(std::span<const std::pair<int, int>> predicted, std::span<const std::pair<int, int>> truth) {
    require(predicted.size() == truth.size() && !truth.empty(), "shift_agreement: length mismatch or empty");
    std::size_t same = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) same += predicted[i] == truth[i];
    return static_cast<double>(same) / static_cast<double>(truth.size());
}

double normalized_correlation(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && !a.empty(), "normalized_correlation: length mismatch or empty");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------- pac-man

namespace {

int wrap(int v, int m) { return ((v % m) + m) % m; }

// Best correlation of a 3x3 sprite with any (wrapping) 3x3 window of mu.
double best_window(const Image& mu, ImageShape shape, const Image& sprite) {
    double best = -1.0;
    Image win(9);
    for (std::size_t r = 0; r < shape.height; ++r)
        for (std::size_t c = 0; c < shape.width; ++c) {
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    win[i * 3 + j] = mu[shape.index(wrap(static_cast<int>(r) + i, static_cast<int>(shape.height)),
                                                    wrap(static_cast<int>(c) + j, static_cast<int>(shape.width)))];
            best = std::max(best, normalized_correlation(win, sprite));
        }
    return best;
}

}  // namespace

bool PacmanEvaluation::passed() const { return means_ok && track_agreement >= 0.9 && motion_ok && turns_ok; }

std::string PacmanEvaluation::summary() const {
    std::ostringstream os;
    os << "matched_means=" << matched_means << " means_ok=" << means_ok << " track=" << track_agreement
       << " motion=[";
    for (std::size_t i = 0; i < motion_mass.size(); ++i) os << (i ? " " : "") << motion_mass[i];
    os << "] min_left_turn=" << min_left_turn << " max_other=" << max_other_offdiag << " turns_ok=" << turns_ok;
    return os.str();
}

PacmanEvaluation evaluate_pacman(const ThmmModel& model, const Dataset& data, const ParallelConfig& parallel) {
    const std::size_t C = model.classes;
    const auto& sprites = pacman_sprites();
    PacmanEvaluation ev;
    ev.corr.assign(C * 4, -1.0);
    for (std::size_t c = 0; c < C; ++c) {
        double top = -1.0;
        for (std::size_t k = 0; k < 4; ++k) {
            ev.corr[c * 4 + k] = best_window(model.mu[c], data.shape, sprites[k]);
            top = std::max(top, ev.corr[c * 4 + k]);
        }
        ev.matched_means += top >= 0.9;
    }

    // Injective sprite -> class matching maximizing total correlation.
    std::vector<std::size_t> class_of(4, C), best_assign;
    double best_total = -INFINITY;
    const std::size_t K = std::min<std::size_t>(4, C);
    auto search = [&](auto&& self, std::size_t k, std::vector<bool>& used, double total) -> void {
        if (k == K) {
            if (total > best_total) best_total = total, best_assign = class_of;
            return;
        }
        for (std::size_t c = 0; c < C; ++c) {
            if (used[c]) continue;
            used[c] = true;
            class_of[k] = c;
            self(self, k + 1, used, total + ev.corr[c * 4 + k]);
            used[c] = false;
        }
        class_of[k] = C;
    };
    std::vector<bool> used(C, false);
    search(search, 0, used, 0.0);
    class_of = best_assign;
    ev.sprite_of_class.assign(C, 4);
    ev.means_ok = K == 4;
    for (std::size_t k = 0; k < K; ++k) {
        ev.sprite_of_class[class_of[k]] = k;
        ev.means_ok = ev.means_ok && ev.corr[class_of[k] * 4 + k] >= 0.9;
    }

    // Tracks: MAP shift plus the most common per-class offset to the truth.
    const auto path = viterbi(model, data.frames, parallel);
    const std::size_t L = model.transforms.size();
    const int H = static_cast<int>(data.shape.height), W = static_cast<int>(data.shape.width);
    std::vector<std::map<std::pair<int, int>, std::size_t>> offsets(C);
    std::vector<std::pair<int, int>> shift(path.size());
    for (std::size_t t = 0; t < path.size(); ++t) {
        shift[t] = model.transforms.grid_shift(path[t] % L);
        const auto& truth = data.truth.shifts[t];
        ++offsets[path[t] / L][{wrap(truth.first - shift[t].first, H), wrap(truth.second - shift[t].second, W)}];
    }
    std::vector<std::pair<int, int>> offset(C, {0, 0});
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t top = 0;
        for (const auto& [o, n] : offsets[c])
            if (n > top) top = n, offset[c] = o;
    }
    std::size_t agree = 0;
    for (std::size_t t = 0; t < path.size(); ++t) {
        const auto& o = offset[path[t] / L];
        const auto& truth = data.truth.shifts[t];
        agree += wrap(shift[t].first + o.first, H) == wrap(truth.first, H) &&
                 wrap(shift[t].second + o.second, W) == wrap(truth.second, W);
    }
    ev.track_agreement = static_cast<double>(agree) / static_cast<double>(path.size());

    // Motion mass on "stay" and "one step along the mouth direction".
    const MotionBins bins = model.bins();
    ev.motion_ok = K == 4;
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t row = model.motion.per_class ? class_of[k] : 0;
        const auto [dv, dh] = direction_step(k);
        double mass = 0.0;
        for (auto [di, dj] : {std::pair<int, int>{0, 0}, std::pair<int, int>{dv, dh}}) {
            const std::size_t b = bins.bin_of(di, dj);
            if (b < bins.bins())
                mass += model.motion.table[row * bins.bins() + b] / static_cast<double>(bins.bin_size(b));
        }
        ev.motion_mass.push_back(mass);
        ev.motion_ok = ev.motion_ok && mass >= 0.85;
    }

    // Among matched classes the left-turn transitions dominate the other switches.
    ev.min_left_turn = INFINITY;
    ev.max_other_offdiag = -INFINITY;
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < K; ++j) {
            if (j == k) continue;
            const double a = model.class_trans[class_of[k] * C + class_of[j]];
            if (j == left_turn(k)) ev.min_left_turn = std::min(ev.min_left_turn, a);
            else ev.max_other_offdiag = std::max(ev.max_other_offdiag, a);
        }
    ev.turns_ok = K == 4 && ev.min_left_turn > ev.max_other_offdiag;
    return ev;
}

}  // namespace tigm
