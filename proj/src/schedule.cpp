#include "artifact/schedule.hpp"

#include <stdexcept>

namespace artifact {

double VarianceSchedule::snr_at(int t) const {
    double ab = alpha_bar_at(t);
    if (ab <= 0.0 || ab >= 1.0)
        throw std::domain_error("snr undefined: alpha_bar at t=" + std::to_string(t) +
                                " is " + std::to_string(ab));
    return ab / (1.0 - ab);
}

void VarianceSchedule::check_timestep(int t) const {
    if (t < 1 || t > timesteps)
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(timesteps) + "]");
}

VarianceSchedule make_schedule(int timesteps, double beta_start, double beta_end,
                               ScheduleKind kind) {
    if (kind != ScheduleKind::linear) throw std::invalid_argument("unknown schedule kind");
    if (timesteps < 1) throw std::invalid_argument("schedule: timesteps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("schedule: require 0 < beta_start <= beta_end < 1");

    VarianceSchedule s;
    s.timesteps = timesteps;
    s.beta.resize(static_cast<size_t>(timesteps));
    s.alpha.resize(static_cast<size_t>(timesteps));
    s.alpha_bar.resize(static_cast<size_t>(timesteps));
    double acc = 1.0;
    for (int i = 0; i < timesteps; ++i) {
        double frac = timesteps == 1 ? 0.0 : static_cast<double>(i) / (timesteps - 1);
        double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<size_t>(i)] = b;
        s.alpha[static_cast<size_t>(i)] = 1.0 - b;
        acc *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(i)] = acc;
    }
    return s;
}

}  // namespace artifact
