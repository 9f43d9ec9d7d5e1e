#include "tigm/em.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace tigm {

std::string StepReport::to_line() const {
    std::ostringstream out;
    out.precision(17);
    out << "iter=" << iteration << " loglik=" << loglik << " mass=";
    for (std::size_t i = 0; i < cluster_mass.size(); ++i) out << (i ? "," : "") << cluster_mass[i];
    out << " rescued=";
    for (std::size_t i = 0; i < rescued.size(); ++i) out << (i ? "," : "") << rescued[i];
    return out.str();
}

double global_pixel_variance(std::span<const Image> data) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (const auto& x : data) {
        for (double v : x) {
            sum += v;
            sq += v * v;
        }
        count += x.size();
    }
    if (count == 0) return 0.0;
    const double mean = sum / static_cast<double>(count);
    return std::max(0.0, sq / static_cast<double>(count) - mean * mean);
}

double log_sum_exp(std::span<const double> values) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : values) top = std::max(top, v);
    if (!std::isfinite(top)) return top;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - top);
    return top + std::log(sum);
}

double normalize_log_weights(std::span<double> values) {
    const double lse = log_sum_exp(values);
    if (!std::isfinite(lse)) {
        throw NumericalUnderflow("every joint probability underflowed to zero");
    }
    for (double& v : values) v = std::exp(v - lse);
    return lse;
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace tigm
