#include "artifact/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace artifact {

LatentState forward_noise(const Tensor& x0_latent, int t, const Tensor& noise,
                          const VarianceSchedule& schedule) {
    schedule.check_timestep(t);
    if (!x0_latent.same_shape(noise))
        throw std::invalid_argument("forward_noise: noise shape " + noise.shape_str() +
                                    " does not match latent " + x0_latent.shape_str());
    double ab = schedule.alpha_bar_at(t);
    double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    LatentState out;
    out.t = t;
    out.z = Tensor(x0_latent.shape());
    for (int i = 0; i < out.z.size(); ++i) out.z[i] = c0 * x0_latent[i] + c1 * noise[i];
    return out;
}

Tensor predict_x0(const LatentState& state, const Tensor& predicted_noise,
                  const VarianceSchedule& schedule) {
    schedule.check_timestep(state.t);
    if (!state.z.same_shape(predicted_noise))
        throw std::invalid_argument("predict_x0: shape mismatch");
    double ab = schedule.alpha_bar_at(state.t);
    if (ab <= 0.0)
        throw std::domain_error("predict_x0: alpha_bar is zero at t=" + std::to_string(state.t));
    double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor out(state.z.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = (state.z[i] - c1 * predicted_noise[i]) / c0;
    return out;
}

ad::Var predict_x0(const ad::Var& z_t, int t, const ad::Var& predicted_noise,
                   const VarianceSchedule& schedule) {
    schedule.check_timestep(t);
    double ab = schedule.alpha_bar_at(t);
    if (ab <= 0.0)
        throw std::domain_error("predict_x0: alpha_bar is zero at t=" + std::to_string(t));
    double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    return ad::scale(ad::sub(z_t, ad::scale(predicted_noise, c1)), 1.0 / c0);
}

ad::Var base_loss(const std::vector<BaseLossSample>& batch, Backbone& backbone,
                  const VarianceSchedule& schedule,
                  const std::vector<double>* per_sample_weights) {
    if (batch.empty()) throw std::invalid_argument("base_loss: empty batch");
    if (per_sample_weights && per_sample_weights->size() != batch.size())
        throw std::invalid_argument("base_loss: weight count mismatch");

    ad::Var total;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        if (!s.z0.all_finite()) throw std::runtime_error("base_loss: non-finite latent z0");
        if (!s.noise.all_finite()) throw std::runtime_error("base_loss: non-finite noise");
        LatentState noised = forward_noise(s.z0, s.t, s.noise, schedule);
        ad::Var z_t = ad::Var::constant(noised.z);
        ad::Var eps_hat = backbone.predict_noise(z_t, s.t, s.cond);
        if (!eps_hat.value().same_shape(s.noise))
            throw std::invalid_argument("base_loss: predictor output shape mismatch");
        if (!eps_hat.value().all_finite())
            throw std::runtime_error("base_loss: non-finite predicted noise");
        ad::Var err = ad::sum(ad::square(ad::sub(ad::Var::constant(s.noise), eps_hat)));
        if (per_sample_weights) err = ad::scale(err, (*per_sample_weights)[i]);
        total = total.defined() ? ad::add(total, err) : err;
    }
    ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
    if (!loss.value().all_finite()) throw std::runtime_error("base_loss: non-finite loss");
    return loss;
}

Tensor reverse_step(const Tensor& z_t, int t, int t_prev, const Tensor& eps_hat,
                    const VarianceSchedule& schedule, Rng& rng) {
    schedule.check_timestep(t);
    if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("reverse_step: bad t_prev");
    if (!z_t.same_shape(eps_hat)) throw std::invalid_argument("reverse_step: shape mismatch");

    double ab_t = schedule.alpha_bar_at(t);
    double ab_prev = t_prev == 0 ? 1.0 : schedule.alpha_bar_at(t_prev);
    double alpha_eff = ab_t / ab_prev;  // reduces to alpha_t for adjacent steps
    double beta_eff = 1.0 - alpha_eff;
    double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_eff);
    double noise_coef = beta_eff / std::sqrt(1.0 - ab_t);
    double sigma = t_prev == 0 ? 0.0 : std::sqrt(beta_eff);

    Tensor out(z_t.shape());
    for (int i = 0; i < out.size(); ++i) {
        double mu = inv_sqrt_alpha * (z_t[i] - noise_coef * eps_hat[i]);
        out[i] = sigma == 0.0 ? mu : mu + sigma * rng.next_normal();
    }
    if (!out.all_finite()) throw std::runtime_error("reverse_step: non-finite latent");
    return out;
}

namespace {

std::vector<int> strided_timesteps(int timesteps, int steps) {
    if (steps < 1 || steps > timesteps)
        throw std::invalid_argument("reverse_sample: steps must be in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        double frac = steps == 1 ? 0.0 : static_cast<double>(k) / (steps - 1);
        int t = static_cast<int>(std::lround(timesteps - frac * (timesteps - 1)));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;  // descending, ends at 1
}

}  // namespace

Tensor reverse_sample_latent(const TextEmbedding& cond, Backbone& backbone,
                             const VarianceSchedule& schedule, int steps, uint64_t seed) {
    auto ts = strided_timesteps(schedule.timesteps, steps);
    Rng rng(derive_seed(seed, 0x53414D504CULL));  // "SAMPL"

    Tensor z(backbone.latent_shape());
    for (int i = 0; i < z.size(); ++i) z[i] = rng.next_normal();

    for (size_t k = 0; k < ts.size(); ++k) {
        int t = ts[k];
        int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
        ad::Var eps_hat = backbone.predict_noise(ad::Var::constant(z), t, cond);
        z = reverse_step(z, t, t_prev, eps_hat.value(), schedule, rng);
    }
    return z;
}

Image reverse_sample(const TextEmbedding& cond, Backbone& backbone,
                     const VarianceSchedule& schedule, int steps, uint64_t seed) {
    return backbone.decode_image(reverse_sample_latent(cond, backbone, schedule, steps, seed));
}

}  // namespace artifact
