#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tigm/em.hpp"
#include "tigm/image.hpp"
#include "tigm/tmg.hpp"
#include "tigm/transform.hpp"

namespace tigm {

using Sequence = std::vector<Image>;

enum class MotionMode { Vector, Magnitude };

const char* to_string(MotionMode mode);
MotionMode motion_mode_from_string(const std::string& text);

/// Prior over the relative motion m = (i_t - i_{t-1}, j_t - j_{t-1}) between
/// consecutive grid positions.
///
/// Vector mode has one bin per displacement with |m| <= threshold; magnitude
/// mode has one bin per rounded length 0..threshold, shared equally by the
/// displacements that fall in it. `table` holds one row of bin probabilities,
/// or one row per previous class when per_class is set.
struct MotionPrior {
    MotionMode mode = MotionMode::Vector;
    int threshold = 3;
    bool per_class = false;
    std::vector<double> table;  // [row * bins + b]

    friend bool operator==(const MotionPrior&, const MotionPrior&) = default;
};

/// Displacement bins and per-position successor lists for one grid.
///
/// On a cyclic grid (wrap boundary, one shift per pixel) displacements are
/// taken modulo the grid size, so every position has the same successors.
/// Otherwise moves that leave the grid are dropped and the remaining ones are
/// renormalized per position.
class MotionBins {
public:
    struct Move {
        std::size_t to;
        std::size_t bin;
    };

    MotionBins() = default;
    MotionBins(const TransformationSet& transforms, MotionMode mode, int threshold);

    std::size_t bins() const noexcept { return members_.size(); }
    std::size_t positions() const noexcept { return moves_.size(); }
    /// Number of displacements sharing bin b (1 in vector mode).
    std::size_t bin_size(std::size_t b) const { return members_[b].size(); }
    /// Displacements (di, dj) in bin b.
    const std::vector<std::pair<int, int>>& bin_members(std::size_t b) const { return members_[b]; }
    const std::vector<Move>& moves(std::size_t l) const { return moves_[l]; }
    /// Bin of displacement (di, dj), or bins() when outside the threshold.
    std::size_t bin_of(int di, int dj) const;
    /// Canonical displacement from position l to position l2.
    std::pair<int, int> displacement(std::size_t l, std::size_t l2) const;
    bool cyclic() const noexcept { return cyclic_; }

private:
    MotionMode mode_ = MotionMode::Vector;
    int threshold_ = 0;
    bool cyclic_ = false;
    std::size_t mv_ = 1, mh_ = 1;
    std::vector<std::vector<std::pair<int, int>>> members_;
    std::vector<std::vector<Move>> moves_;
};

/// Transformed hidden Markov model over the lumped state s = c * L + l.
///
///   p(s_t | s_{t-1}) = class_trans(c_{t-1}, c_t) * p(m(l_{t-1}, l_t) [| c_{t-1}])
///   x_t | s_t ~ N(G_l mu_c, G_l Phi_c G_l^T + Psi)
struct ThmmModel {
    ImageShape shape{};
    TransformationSet transforms;  // must carry a shift grid
    std::size_t classes = 1;
    std::vector<Image> mu;
    std::vector<Image> phi;
    Image psi;
    std::vector<double> initial;      // pi_s, [c * L + l]
    bool joint_initial = false;       // learn pi_s jointly instead of uniform-over-l x learned-over-c
    std::vector<double> class_trans;  // [c_prev * C + c_next]
    MotionPrior motion;
    double variance_floor = 1e-9;

    std::size_t states() const noexcept { return classes * transforms.size(); }
    std::size_t motion_rows() const noexcept { return motion.per_class ? classes : 1; }
    MotionBins bins() const { return MotionBins(transforms, motion.mode, motion.threshold); }
    void validate() const;

    friend bool operator==(const ThmmModel&, const ThmmModel&) = default;
};

/// Uniform motion table (uniform over displacements within the threshold).
std::vector<double> uniform_motion_table(const MotionBins& bins, std::size_t rows);

/// p(s_t = to | s_{t-1} = from) under the factorized transition.
double transition_probability(const ThmmModel& model, std::size_t from, std::size_t to);

struct SequencePosterior {
    std::size_t states = 0;
    std::vector<std::vector<double>> gamma;  // [t][s]
    std::vector<double> class_pairs;         // expected class transitions [c_prev * C + c_next]
    std::vector<double> motion_counts;       // expected motion-bin counts [row * bins + b]
    std::vector<std::size_t> map_path;       // filled when requested
    double loglik = 0.0;
};

/// log N(x_t; G_l mu_c, ...) for every state, [c * L + l].
std::vector<double> emission_loglik(const ThmmModel& model, const Image& frame);

/// Exact smoothed marginals and transition statistics; per-step cost
/// O(C^2 L B) for B motion bins.
SequencePosterior forward_backward(const ThmmModel& model, std::span<const Image> frames,
                                   bool include_map_path = false, const ParallelConfig& parallel = {});

/// MAP state sequence; ties toward the smallest lumped index.
std::vector<std::size_t> viterbi(const ThmmModel& model, std::span<const Image> frames,
                                 const ParallelConfig& parallel = {});

/// log p(x_{1:T}) from the forward pass.
double score_sequence(const ThmmModel& model, std::span<const Image> frames, const ParallelConfig& parallel = {});

/// log p(x_{1:T}, s_{1:T}) for a given state path.
double path_log_probability(const ThmmModel& model, std::span<const Image> frames, std::span<const std::size_t> path);

struct ThmmEmOptions {
    EmOptions em{};
    /// Keep the motion table fixed (for user-supplied priors).
    bool clamp_motion = false;
    /// Minorize-maximize sweeps for the motion table on non-cyclic grids.
    std::size_t motion_sweeps = 20;
};

StepResult<ThmmModel> thmm_em_step(const ThmmModel& model, std::span<const Sequence> sequences,
                                   const ThmmEmOptions& options = {});

struct ThmmConfig {
    MotionPrior motion{};  // table left empty is filled uniformly
    bool joint_initial = false;
    double self_transition = 0.5;
    /// On cyclic grids, shift every template to best correlate with the most
    /// probable one. This is free under the TMG (the shift moves into l) but
    /// matters for the motion prior, which sees class switches as displacements.
    bool align_templates = true;
};

/// Templates and noise from a trained TMG (optionally registered to each
/// other); pi_s = pi_c / L, sticky uniform class transitions, uniform motion.
ThmmModel thmm_init_from_tmg(const TmgModel& tmg, const ThmmConfig& config = {});

enum class DenoiseMode { Hard, Soft };

/// Hard: G_l mu_c along the Viterbi path. Soft: sum_s gamma_t(s) G_l E[z | x_t, s].
std::vector<Image> denoise(const ThmmModel& model, std::span<const Image> frames, DenoiseMode mode,
                           const ParallelConfig& parallel = {});

/// sum_s gamma_t(s) E[z | x_t, s]: frames registered to the latent frame.
std::vector<Image> stabilize(const ThmmModel& model, std::span<const Image> frames,
                             const ParallelConfig& parallel = {});

struct TrackPoint {
    std::size_t t = 0;
    std::size_t c = 0;
    std::size_t l = 0;
    int dv = 0;
    int dh = 0;
    /// log gamma of the chosen state minus log gamma of the runner-up.
    double log_margin = 0.0;
};

std::vector<TrackPoint> track(const ThmmModel& model, std::span<const Image> frames, bool use_viterbi = false,
                              const ParallelConfig& parallel = {});

struct SampledSequence {
    std::vector<Image> frames;
    std::vector<std::size_t> states;
};

SampledSequence sample_sequence(const ThmmModel& model, std::size_t T, std::uint64_t seed);

}  // namespace tigm
