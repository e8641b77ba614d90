#pragma once

// Deterministic DDIM sampling and inversion.
//
// With a = alpha_bar, one generation step from t to t_prev is
//   z_prev = sqrt(a_prev) * (z_t - sqrt(1 - a_t) * eps) / sqrt(a_t) + sqrt(1 - a_prev) * eps
// and the inversion step is the same map with the roles of t and t_prev
// swapped, i.e. its exact algebraic inverse for a fixed eps. Coefficients are
// formed and applied in double precision; latents are stored as float32.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ddimedit/adapters.hpp"
#include "ddimedit/tensor.hpp"

namespace ddimedit {

class NoiseSchedule {
public:
    // Stable Diffusion schedule: betas linear in sqrt space between
    // beta_start and beta_end, `steps` timesteps selected with trailing
    // spacing so the top timestep is always T-1 for any step count.
    static NoiseSchedule scaled_linear(int steps, int num_train_timesteps = 1000, double beta_start = 0.00085,
                                       double beta_end = 0.012);
    // Arbitrary table; `selected` ascending. Validated like every schedule.
    static NoiseSchedule from_alphas(std::vector<double> alphas_cumprod, std::vector<int> selected);

    const std::vector<double>& alphas_cumprod() const noexcept { return alphas_cumprod_; }
    const std::vector<int>& selected_timesteps() const noexcept { return selected_; }
    int num_train_timesteps() const noexcept { return static_cast<int>(alphas_cumprod_.size()); }
    int steps() const noexcept { return static_cast<int>(selected_.size()); }
    int top_timestep() const noexcept { return selected_.back(); }

    // Timestep 0 (the clean end) followed by the selected timesteps.
    std::vector<int> trajectory() const;

    // Throws ScheduleDomainError outside [0, T) or when alpha_bar is 0.
    double alpha_bar(int t) const;

private:
    NoiseSchedule(std::vector<double> ac, std::vector<int> selected);
    std::vector<double> alphas_cumprod_;
    std::vector<int> selected_;
};

struct StepCoefficients {
    double latent;  // multiplies z
    double noise;   // multiplies eps
};

StepCoefficients ddim_step_coefficients(int t, int t_prev, const NoiseSchedule& sched);
StepCoefficients ddim_invert_coefficients(int t, int t_prev, const NoiseSchedule& sched);

// z_t -> z_{t_prev}; requires t > t_prev.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& sched);
// z_{t_prev} -> z_t; requires t > t_prev.
Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps, int t, int t_prev, const NoiseSchedule& sched);

// eps_uncond + g * (eps_cond - eps_uncond)
Tensor classifier_free_guidance(const Tensor& eps_uncond, const Tensor& eps_cond, double guidance_scale);

struct InvertedLatent {
    LatentImage latent;             // terminal noise at top_timestep
    std::string conditioning_text;  // before-edit caption used during inversion
    int steps = 0;
    int top_timestep = 0;
    double guidance_scale_inversion = 1.0;
    int fixed_point_iterations = 0;
    std::string trajectory_checksum;
};

struct InversionOptions {
    // 0 evaluates eps once per step, at the current (pre-step) latent and
    // the step's target timestep: the one-step-lag estimate, exact for
    // predictors that ignore the latent. k > 0 re-solves each step k more
    // times with eps taken at the updated target latent, converging to the
    // exact inverse of the generation step for contractive predictors.
    int fixed_point_iterations = 0;
};

using StepCallback = std::function<void(int step, int total)>;

// Owns no model state; the predictor and embedder are borrowed and must
// outlive the engine. Not thread-safe (adapters are single-threaded).
class DdimEngine {
public:
    DdimEngine(NoisePredictor& predictor, TextEmbedder& embedder) : predictor_(predictor), embedder_(embedder) {}

    // Guidance is fixed at 1.0 during inversion.
    InvertedLatent invert(const LatentImage& image_latent, const TextConditioning& caption_conditioning,
                          const NoiseSchedule& sched, const InversionOptions& opts = {},
                          const StepCallback& on_step = {});
    InvertedLatent invert(const LatentImage& image_latent, std::string_view caption, const NoiseSchedule& sched,
                          const InversionOptions& opts = {}, const StepCallback& on_step = {});

    // guidance_scale == 1 uses the conditional prediction alone; otherwise
    // classifier-free guidance against the unconditional embedding.
    LatentImage generate(const InvertedLatent& start, const TextConditioning& conditioning, double guidance_scale,
                         const NoiseSchedule& sched, const StepCallback& on_step = {});

    // Unconditional embedding for the guidance branch. Computed on first
    // use unless supplied (reruns supply a stored copy).
    void set_unconditional(TextConditioning uncond) { unconditional_ = std::move(uncond); }
    const TextConditioning& unconditional();

private:
    Tensor guided_eps(const Tensor& z, int t, const TextConditioning& cond, double guidance_scale);
    NoisePredictor& predictor_;
    TextEmbedder& embedder_;
    std::optional<TextConditioning> unconditional_;
};

// Binary artifact (serialization.hpp record, magic "DDIMINV1") holding the
// latent tensor and its metadata; the metadata is also written as a JSON
// sidecar at <path>.json.
void save_inverted_latent(const std::filesystem::path& path, const InvertedLatent& inv);
InvertedLatent load_inverted_latent(const std::filesystem::path& path);

}  // namespace ddimedit
