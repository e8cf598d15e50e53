#include "freeevent/pipeline.hpp"

#include <cmath>
#include <optional>
#include <random>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

Shape latent_shape_of(const UNet& net) {
  return {net.config().latent_channels, net.config().latent_size, net.config().latent_size};
}

void check_finite(const LatentTensor& z, const char* what) {
  if (!z.all_finite()) throw NumericError(std::string(what) + " produced a non-finite latent");
}

}  // namespace

std::uint64_t reference_seed(std::uint64_t seed) { return seed ^ 0x5245464552454e43ULL; }

LatentTensor initial_latent(std::uint64_t seed, const Shape& shape) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentTensor z(shape);
  for (double& v : z.storage()) v = normal(rng);
  return z;
}

Autoencoder autoencoder_for(const RunConfig& config) {
  Autoencoder ae;
  ae.stride = config.autoencoder_stride;
  return ae;
}

ReferenceContext reference_for(const Image& reference, const RunConfig& config, const UNet& net,
                               const NoiseSchedule& s) {
  if (!config.toggles.injection) return {};
  return prepare_reference(reference, reference_seed(config.seed), s, net, config.injection_schedule(),
                           {config.reference_mode, autoencoder_for(config)});
}

GenerationResult customize(const Image& reference, const std::vector<EntitySpec>& entities,
                           const PromptEmbedding& prompt, const RunConfig& config, const UNet& net,
                           const NoiseSchedule& s, const ReferenceContext* ctx, const GenerationOptions& options) {
  const Toggles& on = config.toggles;
  const Autoencoder ae = autoencoder_for(config);
  const Shape shape = latent_shape_of(net);
  const bool needs_reference = on.guidance || on.regulation || on.injection;
  if (needs_reference) {
    if (reference.data.empty()) throw ParameterError("customize: a reference image is required");
    const LatentTensor zr = encode_image(reference, ae);
    if (zr.shape() != shape)
      throw ShapeError("reference latent " + shape_string(zr.shape()) + " differs from the generated latent " +
                       shape_string(shape));
  }
  if (!entities.empty()) validate_entities(entities, prompt.n_tokens(), reference.height, reference.width);
  if (on.guidance && entities.empty() && config.guidance.guidance_steps > 0)
    throw ParameterError("guidance is on but no entity masks were bound");
  if (config.guidance.guidance_steps < 0 || config.guidance.guidance_steps > s.sampling_steps)
    throw ParameterError("guidance.steps must lie in [0, sampler.steps]");
  if (on.guidance && !(std::isfinite(config.guidance.eta) && config.guidance.eta > 0.0))
    throw ParameterError("guidance.eta must be finite and positive");

  const InjectionSchedule schedule = on.injection ? config.injection_schedule() : InjectionSchedule{};
  ReferenceContext owned;
  std::optional<StreamingReference> stream;
  if (on.injection) {
    validate_schedule(schedule, net, s.sampling_steps);
    if (!ctx) {
      const ReferenceOptions ropt{config.reference_mode, ae};
      if (config.streaming) {
        stream.emplace(reference, reference_seed(config.seed), s, net, schedule, ropt);
      } else {
        owned = prepare_reference(reference, reference_seed(config.seed), s, net, schedule, ropt);
        ctx = &owned;
      }
    }
  }

  CrossAttentionTransform regulate;
  if (on.regulation && !entities.empty()) regulate = make_regulation_transform(entities, net, config.renormalize);

  std::set<std::pair<LayerAddress, Quantity>> record;
  if (options.observer) record = options.observer->record;
  if (options.track_leakage)
    for (const LayerAddress& a : net.attention_layers()) record.emplace(a, Quantity::ca);

  const PromptEmbedding null_prompt = embed_prompt({}, net.text_encoder());
  LatentTensor z = initial_latent(config.seed, shape);
  double leakage = 0.0;

  for (int k = 0; k < s.sampling_steps; ++k) {
    const int t = s.step_indices[static_cast<std::size_t>(k)];
    try {
      if (on.guidance && k < config.guidance.guidance_steps) {
        const EnergyGradient eg = energy_and_gradient(z, t, prompt, entities, config.guidance, net);
        LatentTensor guided = guidance_update(z, eg.grad, t, config.guidance, s);
        check_finite(guided, "guidance update");
        if (options.observer && options.observer->on_guidance) options.observer->on_guidance(k, z, guided, eg.energy);
        z = std::move(guided);
      }

      InterventionSet inject;
      if (on.injection) inject = stream ? stream->interventions(k) : build_interventions(*ctx, k, schedule);
      InterventionSet cond_iv = inject;
      if (regulate && (config.guidance.regulate_all_steps || k < config.guidance.guidance_steps))
        cond_iv.transform_ca = regulate;
      cond_iv.record = record;
      const InterventionSet uncond_iv = config.inject_both_branches ? inject : InterventionSet{};

      if (options.observer && options.observer->on_denoise) options.observer->on_denoise(k, z);
      const DenoiseResult cond = denoise_forward(net, z, t, prompt, cond_iv);
      const DenoiseResult uncond = denoise_forward(net, z, t, null_prompt, uncond_iv);
      if (options.observer && options.observer->on_trace) options.observer->on_trace(k, cond.trace);
      if (options.track_leakage && !entities.empty()) leakage += attention_leakage(cond.trace, entities);

      const LatentTensor eps = cfg_combine(uncond.eps, cond.eps, config.cfg_scale);
      z = ddim_step(z, eps, t, s.previous_timestep(k), s);
      check_finite(z, "DDIM step");
    } catch (const Error& e) {
      throw Error(e.category(), "step " + std::to_string(k) + " (t=" + std::to_string(t) + "): " + e.what());
    }
  }

  GenerationResult out;
  out.leakage = s.sampling_steps > 0 ? leakage / s.sampling_steps : 0.0;
  out.image = decode_latent(z, ae);
  out.z0 = std::move(z);
  return out;
}

GenerationResult generate_baseline(const PromptEmbedding& prompt, const RunConfig& config, const UNet& net,
                                   const NoiseSchedule& s) {
  RunConfig plain = config;
  plain.toggles = Toggles{false, false, false};
  return customize(Image{}, {}, prompt, plain, net, s);
}

std::vector<GenerationResult> ablate(const Image& reference, const std::vector<EntitySpec>& entities,
                                     const PromptEmbedding& prompt, const RunConfig& config,
                                     const std::vector<Toggles>& toggle_sets, const UNet& net,
                                     const GenerationOptions& options) {
  if (toggle_sets.empty()) throw ParameterError("ablate: no toggle sets given");
  const NoiseSchedule s = config.noise_schedule();
  ReferenceContext ctx;
  bool any_injection = false;
  for (const Toggles& t : toggle_sets) any_injection = any_injection || t.injection;
  if (any_injection) {
    RunConfig with = config;
    with.toggles.injection = true;
    ctx = reference_for(reference, with, net, s);
  }
  std::vector<GenerationResult> out;
  for (const Toggles& t : toggle_sets) {
    RunConfig run = config;
    run.toggles = t;
    out.push_back(customize(reference, entities, prompt, run, net, s, t.injection ? &ctx : nullptr, options));
  }
  return out;
}

}  // namespace freeevent
