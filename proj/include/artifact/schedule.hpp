#pragma once

#include <string>
#include <vector>

namespace artifact {

// Forward-process noise schedule: beta per step, alpha = 1 - beta, and the
// cumulative signal-retention product alpha_bar. sigma2_t = beta_t is the
// reverse-step variance. Timesteps are 1-based: index t-1 holds step t.
struct VarianceSchedule {
    int timesteps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double beta_at(int t) const { return beta.at(static_cast<size_t>(t - 1)); }
    double alpha_at(int t) const { return alpha.at(static_cast<size_t>(t - 1)); }
    double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<size_t>(t - 1)); }
    double sigma2_at(int t) const { return beta_at(t); }

    // alpha_bar/(1 - alpha_bar), the per-step signal-to-noise ratio.
    double snr_at(int t) const;

    void check_timestep(int t) const;
};

enum class ScheduleKind { linear };

// Linear beta interpolation over T steps. Requires T >= 1 and
// 0 < beta_start <= beta_end < 1.
VarianceSchedule make_schedule(int timesteps, double beta_start, double beta_end,
                               ScheduleKind kind = ScheduleKind::linear);

// Full-scale and desk-scale defaults.
inline VarianceSchedule default_schedule_full() { return make_schedule(1000, 0.00085, 0.012); }
inline VarianceSchedule default_schedule_desk() { return make_schedule(50, 0.01, 0.3); }

}  // namespace artifact
