#pragma once

// Training pipelines and evaluation metrics shared by the CLI and the
// acceptance runner.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tigm/factor_models.hpp"
#include "tigm/model_io.hpp"
#include "tigm/synthgen.hpp"
#include "tigm/thmm.hpp"
#include "tigm/tmg.hpp"

namespace tigm {

// ---------------------------------------------------------------- transformation sets

struct TransformSpec {
    /// identity | translate | shear (the 29-op shear+translation family)
    std::string kind = "translate";
    std::size_t shifts_v = 1;
    std::size_t shifts_h = 1;
    Boundary boundary = Boundary::Wrap;
};

TransformationSet build_transforms(const TransformSpec& spec, ImageShape shape);

// ---------------------------------------------------------------- training

struct TrainSettings {
    Family family = Family::Tmg;
    std::size_t classes = 1;
    std::size_t factors = 0;
    TransformSpec transforms{};
    EmOptions em{};
    EmSchedule schedule{};
    std::size_t restarts = 1;
    std::uint64_t seed = 0;
    bool fast_likelihood = false;
    /// THMM: the motion prior (an empty table is filled uniformly) and the
    /// number of TMG iterations used to initialize the templates.
    MotionPrior motion{};
    bool clamp_motion = false;
    bool joint_initial = false;
    double self_transition = 0.5;
    bool align_templates = true;
    std::size_t init_iterations = 20;
};

struct TrainOutcome {
    AnyModel model;
    std::vector<StepReport> steps;         // of the selected restart
    std::vector<double> restart_loglik;    // final loglik per restart
    std::size_t best_restart = 0;
    double loglik = 0.0;                   // of the returned model
};

using StepCallback = std::function<void(std::size_t restart, const StepReport&)>;

/// Runs every restart with seeds derived from settings.seed and keeps the one
/// with the highest final log-likelihood (ties toward the earlier restart).
/// Static families flatten the sequences into one data set.
TrainOutcome train_model(const TrainSettings& settings, ImageShape shape, std::span<const Sequence> sequences,
                         const StepCallback& on_step = {});

/// Total log-likelihood of the data under any model family.
double total_loglik(const AnyModel& model, std::span<const Sequence> sequences, const ParallelConfig& parallel = {});

/// Most probable class per datum, marginalizing the transformation.
std::vector<std::size_t> assign_clusters(const AnyModel& model, std::span<const Image> data);

/// One TCA per class trained on its examples; prediction by Bayes rule with
/// empirical class priors.
struct TcaClassifier {
    std::vector<TcaModel> models;
    std::vector<double> priors;

    std::size_t classify(const Image& x) const;
};

TcaClassifier train_tca_classifier(std::span<const Image> data, std::span<const std::size_t> labels,
                                   std::size_t classes, const TransformationSet& transforms, std::size_t factors,
                                   const EmSchedule& schedule, std::size_t restarts, std::uint64_t seed,
                                   const EmOptions& em = {});

// ---------------------------------------------------------------- metrics

double classification_error(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

/// Each cluster is labeled with its most frequent true class (ties toward
/// the smaller label); returns the resulting error rate.
double cluster_purity_error(std::span<const std::size_t> clusters, std::span<const std::size_t> truth);

double shift_agreement(std::span<const std::pair<int, int>> predicted, std::span<const std::pair<int, int>> truth);

/// Pearson correlation; 0 when either side is constant.
double normalized_correlation(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------- pac-man

struct PacmanEvaluation {
    /// corr[c * 4 + k]: best correlation of sprite k with any 3x3 window of mu_c.
    std::vector<double> corr;
    /// Sprite assigned to each class under the best injective matching of
    /// sprites to classes, or 4 when unassigned.
    std::vector<std::size_t> sprite_of_class;
    std::size_t matched_means = 0;   // classes with max_k corr >= 0.9
    bool means_ok = false;           // all four sprites matched at >= 0.9
    double track_agreement = 0.0;    // MAP shifts vs truth after per-class offset alignment
    std::vector<double> motion_mass; // per matched class: mass on stay or mouth-direction step
    bool motion_ok = false;          // every entry >= 0.85
    double min_left_turn = 0.0, max_other_offdiag = 0.0;
    bool turns_ok = false;

    /// Means, tracks (>= 90% agreement), motion and turn checks all hold.
    bool passed() const;
    std::string summary() const;
};

PacmanEvaluation evaluate_pacman(const ThmmModel& model, const Dataset& data, const ParallelConfig& parallel = {});

}  // namespace tigm
