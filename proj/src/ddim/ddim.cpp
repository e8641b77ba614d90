#include "ddimedit/ddim.hpp"

#include <cmath>

#include "ddimedit/errors.hpp"
#include "ddimedit/hashing.hpp"
#include "ddimedit/image.hpp"
#include "ddimedit/kernels.hpp"
#include "ddimedit/serialization.hpp"

namespace ddimedit {

NoiseSchedule::NoiseSchedule(std::vector<double> ac, std::vector<int> selected)
    : alphas_cumprod_(std::move(ac)), selected_(std::move(selected)) {
    if (alphas_cumprod_.empty()) throw ScheduleDomainError("empty alpha_bar table");
    for (std::size_t t = 0; t < alphas_cumprod_.size(); ++t) {
        const double a = alphas_cumprod_[t];
        if (!(a > 0.0 && a <= 1.0))
            throw ScheduleDomainError("alpha_bar[" + std::to_string(t) + "] = " + std::to_string(a) + " outside (0, 1]");
        if (t > 0 && a > alphas_cumprod_[t - 1]) throw ScheduleDomainError("alpha_bar increases at t=" + std::to_string(t));
    }
    if (selected_.empty()) throw ScheduleDomainError("schedule needs at least one selected timestep");
    const int T = num_train_timesteps();
    if (selected_.front() <= 0)
        throw ScheduleDomainError("selected timesteps must start above 0 (timestep 0 is the clean end)");
    for (std::size_t i = 0; i < selected_.size(); ++i) {
        if (selected_[i] >= T) throw ScheduleDomainError("selected timestep " + std::to_string(selected_[i]) + " >= T");
        if (i > 0 && selected_[i] <= selected_[i - 1]) throw ScheduleDomainError("selected timesteps not strictly increasing");
    }
    const auto traj = trajectory();
    for (std::size_t i = 1; i < traj.size(); ++i)
        if (!(alphas_cumprod_[static_cast<std::size_t>(traj[i])] < alphas_cumprod_[static_cast<std::size_t>(traj[i - 1])]))
            throw ScheduleDomainError("alpha_bar not strictly decreasing over selected timesteps at " +
                                      std::to_string(traj[i]));
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps, int num_train_timesteps, double beta_start, double beta_end) {
    if (steps < 1) throw ContractError("step count must be >= 1");
    if (num_train_timesteps < 2) throw ContractError("need at least two training timesteps");
    const int T = num_train_timesteps;
    std::vector<double> ac(static_cast<std::size_t>(T));
    const double lo = std::sqrt(beta_start);
    const double hi = std::sqrt(beta_end);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double s = lo + (hi - lo) * static_cast<double>(t) / static_cast<double>(T - 1);
        prod *= 1.0 - s * s;
        ac[static_cast<std::size_t>(t)] = prod;
    }
    std::vector<int> selected(static_cast<std::size_t>(steps));
    const double ratio = static_cast<double>(T) / steps;
    for (int i = 0; i < steps; ++i)
        selected[static_cast<std::size_t>(steps - 1 - i)] = static_cast<int>(std::lround(T - i * ratio)) - 1;
    return NoiseSchedule(std::move(ac), std::move(selected));
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas_cumprod, std::vector<int> selected) {
    return NoiseSchedule(std::move(alphas_cumprod), std::move(selected));
}

std::vector<int> NoiseSchedule::trajectory() const {
    std::vector<int> out;
    out.reserve(selected_.size() + 1);
    out.push_back(0);
    out.insert(out.end(), selected_.begin(), selected_.end());
    return out;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= num_train_timesteps())
        throw ScheduleDomainError("timestep " + std::to_string(t) + " outside [0, " +
                                  std::to_string(num_train_timesteps()) + ")");
    const double a = alphas_cumprod_[static_cast<std::size_t>(t)];
    if (a <= 0.0) throw ScheduleDomainError("alpha_bar is zero at t=" + std::to_string(t));
    return a;
}

namespace {
void require_order(int t, int t_prev) {
    if (!(t > t_prev))
        throw ContractError("DDIM step needs t > t_prev (got t=" + std::to_string(t) + ", t_prev=" +
                            std::to_string(t_prev) + ")");
}
}  // namespace

StepCoefficients ddim_step_coefficients(int t, int t_prev, const NoiseSchedule& sched) {
    require_order(t, t_prev);
    const double a_t = sched.alpha_bar(t);
    const double a_p = sched.alpha_bar(t_prev);
    const double ratio = std::sqrt(a_p) / std::sqrt(a_t);
    return {ratio, std::sqrt(1.0 - a_p) - ratio * std::sqrt(1.0 - a_t)};
}

StepCoefficients ddim_invert_coefficients(int t, int t_prev, const NoiseSchedule& sched) {
    require_order(t, t_prev);
    const double a_t = sched.alpha_bar(t);
    const double a_p = sched.alpha_bar(t_prev);
    const double ratio = std::sqrt(a_t) / std::sqrt(a_p);
    return {ratio, std::sqrt(1.0 - a_t) - ratio * std::sqrt(1.0 - a_p)};
}

namespace {
Tensor apply(const StepCoefficients& c, const Tensor& z, const Tensor& eps) {
    require_same_shape(z, eps, "DDIM update");
    Tensor out(z.shape());
    kernels::axpby(c.latent, z.values(), c.noise, eps.values(), out.values());
    return out;
}
}  // namespace

Tensor ddim_step(const Tensor& z_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& sched) {
    return apply(ddim_step_coefficients(t, t_prev, sched), z_t, eps);
}

Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps, int t, int t_prev, const NoiseSchedule& sched) {
    return apply(ddim_invert_coefficients(t, t_prev, sched), z_prev, eps);
}

Tensor classifier_free_guidance(const Tensor& eps_uncond, const Tensor& eps_cond, double guidance_scale) {
    require_same_shape(eps_uncond, eps_cond, "classifier-free guidance");
    Tensor out(eps_cond.shape());
    kernels::axpby(1.0 - guidance_scale, eps_uncond.values(), guidance_scale, eps_cond.values(), out.values());
    return out;
}

// ---------------------------------------------------------------------------

InvertedLatent DdimEngine::invert(const LatentImage& image_latent, std::string_view caption, const NoiseSchedule& sched,
                                  const InversionOptions& opts, const StepCallback& on_step) {
    return invert(image_latent, embedder_.embed(caption), sched, opts, on_step);
}

InvertedLatent DdimEngine::invert(const LatentImage& image_latent, const TextConditioning& cond,
                                  const NoiseSchedule& sched, const InversionOptions& opts,
                                  const StepCallback& on_step) {
    if (cond.source_text.empty()) throw ContractError("invert: caption must be non-empty");
    if (opts.fixed_point_iterations < 0) throw ContractError("invert: fixed_point_iterations must be >= 0");
    if (!image_latent.data.all_finite()) throw NumericalDivergenceError(0, "invert");

    const auto traj = sched.trajectory();
    const int steps = sched.steps();
    Sha256 checksum;
    checksum.update(std::to_string(steps));

    Tensor z = image_latent.data;
    for (int i = 0; i < steps; ++i) {
        const int t_prev = traj[static_cast<std::size_t>(i)];
        const int t = traj[static_cast<std::size_t>(i) + 1];
        const auto coeff = ddim_invert_coefficients(t, t_prev, sched);
        Tensor eps = predictor_.predict(z, t, cond);
        require_same_shape(eps, z, "predict_noise");
        Tensor next(z.shape());
        kernels::axpby(coeff.latent, z.values(), coeff.noise, eps.values(),
                       next.values());
        for (int k = 0; k < opts.fixed_point_iterations; ++k) {
            eps = predictor_.predict(next, t, cond);
            kernels::axpby(coeff.latent, z.values(), coeff.noise,
                           eps.values(), next.values());
        }
        if (!next.all_finite()) throw NumericalDivergenceError(i, "invert");
        z = std::move(next);
        checksum.update_floats(z.values());
        if (on_step) on_step(i + 1, steps);
    }

    InvertedLatent out;
    out.latent = image_latent;
    out.latent.data = std::move(z);
    out.conditioning_text = cond.source_text;
    out.steps = steps;
    out.top_timestep = sched.top_timestep();
    out.guidance_scale_inversion = 1.0;
    out.fixed_point_iterations = opts.fixed_point_iterations;
    out.trajectory_checksum = checksum.hex_digest();
    return out;
}

const TextConditioning& DdimEngine::unconditional() {
    if (!unconditional_) unconditional_ = embedder_.embed_unconditional();
    return *unconditional_;
}

Tensor DdimEngine::guided_eps(const Tensor& z, int t, const TextConditioning& cond, double guidance_scale) {
    Tensor eps_cond = predictor_.predict(z, t, cond);
    require_same_shape(eps_cond, z, "predict_noise");
    if (guidance_scale == 1.0) return eps_cond;
    const Tensor eps_uncond = predictor_.predict(z, t, unconditional());
    return classifier_free_guidance(eps_uncond, eps_cond, guidance_scale);
}

LatentImage DdimEngine::generate(const InvertedLatent& start, const TextConditioning& conditioning,
                                 double guidance_scale, const NoiseSchedule& sched, const StepCallback& on_step) {
    if (start.top_timestep != sched.top_timestep())
        throw ContractError("generate: start latent is at timestep " + std::to_string(start.top_timestep) +
                            ", schedule starts at " + std::to_string(sched.top_timestep()));
    const auto traj = sched.trajectory();
    const int steps = sched.steps();
    Tensor z = start.latent.data;
    for (int i = steps - 1, done = 0; i >= 0; --i, ++done) {
        const int t = traj[static_cast<std::size_t>(i) + 1];
        const int t_prev = traj[static_cast<std::size_t>(i)];
        const Tensor eps = guided_eps(z, t, conditioning, guidance_scale);
        const auto coeff = ddim_step_coefficients(t, t_prev, sched);
        kernels::axpby(coeff.latent, z.values(), coeff.noise, eps.values(),
                       z.values());
        if (!z.all_finite()) throw NumericalDivergenceError(done, "generate");
        if (on_step) on_step(done + 1, steps);
    }
    LatentImage out = start.latent;
    out.data = std::move(z);
    return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr const char* kInvMagic = "DDIMINV1";

nlohmann::json inverted_meta(const InvertedLatent& inv) {
    return {{"conditioning_text", inv.conditioning_text},
            {"steps", inv.steps},
            {"top_timestep", inv.top_timestep},
            {"guidance_scale_inversion", inv.guidance_scale_inversion},
            {"fixed_point_iterations", inv.fixed_point_iterations},
            {"trajectory_checksum", inv.trajectory_checksum},
            {"width", inv.latent.width},
            {"height", inv.latent.height},
            {"original_width", inv.latent.original_width},
            {"original_height", inv.latent.original_height},
            {"scaling_factor", inv.latent.scaling_factor},
            {"shape", inv.latent.data.shape()}};
}
}  // namespace

void save_inverted_latent(const std::filesystem::path& path, const InvertedLatent& inv) {
    BinaryRecord rec;
    rec.meta = inverted_meta(inv);
    rec.tensors.push_back(inv.latent.data);
    write_binary_record(path, kInvMagic, rec);
    auto sidecar = path;
    sidecar += ".json";
    write_text_file(sidecar, rec.meta.dump(2) + "\n");
}

InvertedLatent load_inverted_latent(const std::filesystem::path& path) {
    auto rec = read_binary_record(path, kInvMagic);
    if (rec.tensors.size() != 1) throw InputFormatError(path.string(), "expected exactly one latent tensor");
    InvertedLatent inv;
    const auto& m = rec.meta;
    try {
        inv.conditioning_text = m.at("conditioning_text").get<std::string>();
        inv.steps = m.at("steps").get<int>();
        inv.top_timestep = m.at("top_timestep").get<int>();
        inv.guidance_scale_inversion = m.at("guidance_scale_inversion").get<double>();
        inv.fixed_point_iterations = m.value("fixed_point_iterations", 0);
        inv.trajectory_checksum = m.at("trajectory_checksum").get<std::string>();
        inv.latent.width = m.at("width").get<int>();
        inv.latent.height = m.at("height").get<int>();
        inv.latent.original_width = m.at("original_width").get<int>();
        inv.latent.original_height = m.at("original_height").get<int>();
        inv.latent.scaling_factor = m.at("scaling_factor").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw InputFormatError(path.string(), std::string("bad inversion metadata: ") + e.what());
    }
    inv.latent.data = std::move(rec.tensors.front());
    return inv;
}

}  // namespace ddimedit
