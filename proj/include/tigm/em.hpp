#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tigm/image.hpp"
#include "tigm/parallel.hpp"

namespace tigm {

struct EmOptions {
    /// Keep transformation probabilities at their current values.
    bool freeze_rho = false;
    /// Replace the sensor variances by their mean after every M-step.
    bool tie_psi = false;
    /// A cluster whose expected count falls below rescue_fraction * N is reseeded.
    double rescue_fraction = 1e-6;
    std::uint64_t rescue_seed = 0;
    /// Recompute frozen tangent columns from the new mean after each M-step.
    bool refresh_tangents = true;
    ParallelConfig parallel{};
};

struct StepReport {
    std::size_t iteration = 0;
    /// Total log-likelihood of the data under the model that entered the step.
    double loglik = 0.0;
    std::vector<double> cluster_mass;
    std::vector<std::size_t> rescued;

    /// One line of `key=value` fields, e.g. `iter=3 loglik=-12.5 mass=4,6 rescued=`.
    std::string to_line() const;
};

template <class Model>
struct StepResult {
    Model model;
    double loglik = 0.0;
    StepReport report;
};

/// Stopping rule for an EM run: fixed iteration cap, or relative improvement
/// below `tolerance`, whichever comes first.
struct EmSchedule {
    std::size_t max_iterations = 30;
    double tolerance = 1e-7;
};

/// Mean of the per-pixel variance over the data set (one number).
double global_pixel_variance(std::span<const Image> data);

/// log(sum(exp(values))); -inf when every entry is -inf.
double log_sum_exp(std::span<const double> values);

/// Normalizes log weights in place into probabilities; returns the log normalizer.
double normalize_log_weights(std::span<double> values);

/// Index of the largest entry, ties toward the smaller index.
std::size_t argmax(std::span<const double> values);

}  // namespace tigm
