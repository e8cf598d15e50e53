#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <thread>

#include "freeevent/errors.hpp"
#include "freeevent/evalbench.hpp"
#include "freeevent/metrics.hpp"
#include "freeevent/pipeline.hpp"
#include "freeevent/toy_data.hpp"
#include "freeevent/train.hpp"
#include "freeevent/weights_io.hpp"

namespace freeevent::cli {

namespace {

namespace fs = std::filesystem;

UNet load_net(const RunConfig& c) {
  if (c.weights.empty())
    throw ConfigError("no model weights: pass --weights PATH or --set model.weights=PATH");
  return UNet::from_weights(load_weights(c.weights));
}

struct Request {
  Image reference;
  PromptEmbedding prompt;
  std::vector<int> token_ids;  // with start token
  std::vector<EntitySpec> entities;
};

Request load_request(const RunConfig& c, const UNet& net, bool with_reference) {
  Request r;
  const PromptBinding binding = parse_prompt_binding(c.prompt, toy_vocabulary());
  r.prompt = embed_prompt(binding.token_ids, net.text_encoder());
  r.token_ids = r.prompt.token_ids;
  if (!with_reference) return r;
  if (c.reference_image.empty()) throw ParameterError("no reference image: pass --ref IMG");
  r.reference = read_png(c.reference_image);

  const bool separate = !c.masks.empty();
  if (separate && binding.entities.size() != c.masks.size())
    throw ParameterError(std::to_string(c.masks.size()) + " mask(s) given but the prompt binds " +
                         std::to_string(binding.entities.size()) +
                         " entit(ies); bind each mask with 'prompt | e1=tokensA-B, ...'");
  for (std::size_t i = 0; i < binding.entities.size(); ++i) {
    const EntityBinding& b = binding.entities[i];
    std::string path = b.mask;
    if (path.empty() && separate) path = c.masks[i];
    if (path.empty())
      throw ParameterError("entity e" + std::to_string(b.entity_id) + " has no mask; pass --masks or bind e" +
                           std::to_string(b.entity_id) + "=MASK:tokensA-B");
    r.entities.push_back({b.entity_id, b.span, read_mask(path)});
  }
  if (c.toggles.guidance && c.guidance.guidance_steps > 0 && r.entities.empty())
    throw ParameterError(
        "guidance is on but no entity masks were given; pass --masks M1,M2 with prompt bindings "
        "('... | e1=tokens4-5, e2=tokens7-8') or --set toggles.guidance=off");
  validate_entities(r.entities, r.prompt.n_tokens(), r.reference.height, r.reference.width);
  return r;
}

void save_image(Context& ctx, const fs::path& path, const Image& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_png(path, image);
  ctx.artifacts.push_back(path);
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first failure by
/// index is rethrown.
template <typename Fn>
void parallel_for(int n, int jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  auto worker = [&](int start, int stride) {
    for (int i = start; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min(jobs, n));
  if (threads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<int> entity_labels(const std::vector<int>& token_ids, const std::vector<EntitySpec>& entities) {
  const ToyLabelModel model;
  std::vector<int> labels;
  for (const EntitySpec& e : entities) {
    try {
      labels.push_back(model.entity_label(token_ids, e.span));
    } catch (const ParameterError&) {
      return {};
    }
  }
  return labels;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Caption from manifest nouns, optionally with each entity's color word switched.
}  // namespace

RunConfig resolve_config(const ConfigFlags& f) {
  RunConfig c;
  if (f.use_env) {
    if (const char* env = std::getenv("FREEEVENT_CONFIG"); env && *env) c = load_run_config(env, c);
  }
  if (!f.config_file.empty()) c = load_run_config(f.config_file, c);
  if (f.weights) c.weights = *f.weights;
  if (f.ref) c.reference_image = *f.ref;
  if (f.masks) apply_setting(c, "reference.masks", *f.masks);
  if (f.prompt) c.prompt = *f.prompt;
  if (f.seed) c.seed = *f.seed;
  for (const std::string& s : f.sets) apply_assignment(c, s);
  return c;
}

void cmd_make_shapes(Context& ctx, const MakeShapesArgs& a) {
  const ToyDataset ds = make_shapes_dataset(a.count, a.seed);
  save_toy_dataset(a.out, ds);
  ctx.artifacts.push_back(a.out / "labels.tsv");
  ctx.out << "wrote " << ds.samples.size() << " samples to " << a.out.string() << '\n';
}

void cmd_train_toy(Context& ctx, const TrainArgs& a) {
  const ToyDataset ds = load_toy_dataset(a.data);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.seed = a.seed;
  opt.batch_size = a.batch;
  opt.learning_rate = a.lr;
  opt.autoencoder.stride = 2;
  opt.report_every = 1000;
  opt.on_report = [&](int step, double loss) { ctx.err << "step " << step << " loss " << fixed(loss, 5) << '\n'; };
  std::optional<Weights> init;
  if (!a.init.empty()) init = load_weights(a.init);
  const TrainResult r = train_toy(ds, opt, init ? &*init : nullptr);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_weights(a.out, r.weights);
  ctx.artifacts.push_back(a.out);

  const fs::path csv = a.loss_csv.empty() ? fs::path(a.out.string() + ".loss.csv") : a.loss_csv;
  std::ofstream os(csv);
  if (!os) throw IoError("cannot write " + csv.string());
  os << "step,loss,smoothed\n" << std::setprecision(9);
  const auto smooth = smooth_losses(r.loss_history);
  for (std::size_t i = 0; i < r.loss_history.size(); ++i)
    os << i + 1 << ',' << r.loss_history[i] << ',' << smooth[i] << '\n';
  ctx.artifacts.push_back(csv);
  ctx.out << "heldout_loss_initial=" << r.heldout_loss_initial << "\nheldout_loss_final=" << r.heldout_loss_final
          << "\nweights=" << a.out.string() << "\ndigest=" << hex64(file_digest(a.out)) << '\n';
}

void cmd_generate(Context& ctx, const RunConfig& config, const GenerateArgs& a) {
  const UNet net = load_net(config);
  const bool any = config.toggles.guidance || config.toggles.regulation || config.toggles.injection;
  const Request r = load_request(config, net, any);
  const NoiseSchedule s = config.noise_schedule();
  const GenerationResult g = any ? customize(r.reference, r.entities, r.prompt, config, net, s)
                                 : generate_baseline(r.prompt, config, net, s);
  save_image(ctx, a.out, g.image);
  ctx.out << "wrote " << a.out.string() << '\n';
}

void cmd_baseline(Context& ctx, const RunConfig& config, const GenerateArgs& a) {
  const UNet net = load_net(config);
  const Request r = load_request(config, net, false);
  const GenerationResult g = generate_baseline(r.prompt, config, net, config.noise_schedule());
  save_image(ctx, a.out, g.image);
  ctx.out << "wrote " << a.out.string() << '\n';
}

void cmd_ablate(Context& ctx, RunConfig config, const AblateArgs& a) {
  if (a.seeds < 1) throw ParameterError("--seeds must be positive");
  std::vector<Toggles> sets;
  for (const std::string& name : a.toggles) sets.push_back(parse_toggle_set(name));
  if (sets.empty()) throw ParameterError("--toggles is empty");
  const UNet net = load_net(config);

  Request r;
  if (a.scenario) {
    if (!config.reference_image.empty() || !config.prompt.empty())
      throw ParameterError("--scenario supplies its own reference and prompt; drop --ref/--prompt");
    const ToyScenario sc = toy_ablation_scenario();
    r.reference = sc.reference.image;
    r.prompt = embed_prompt(sc.target.token_ids, net.text_encoder());
    r.token_ids = r.prompt.token_ids;
    r.entities = sc.entities;
    save_image(ctx, a.out / "reference.png", r.reference);
  } else {
    r = load_request(config, net, true);
  }
  const std::vector<int> labels = entity_labels(r.token_ids, r.entities);

  const std::size_t n_sets = sets.size();
  std::vector<std::vector<GenerationResult>> runs(static_cast<std::size_t>(a.seeds));
  parallel_for(a.seeds, a.jobs, [&](int i) {
    RunConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(i);
    runs[static_cast<std::size_t>(i)] = ablate(r.reference, r.entities, r.prompt, c, sets, net, {true, nullptr});
  });

  const ToyLabelModel model;
  std::vector<std::vector<double>> fid(n_sets), corr(n_sets), leak(n_sets);
  fs::create_directories(a.out);
  std::ofstream per(a.out / "per_seed.tsv");
  per << "toggles\tseed\tlayout_fidelity\tstructure_corr\tleakage\n" << std::setprecision(10);
  for (int i = 0; i < a.seeds; ++i)
    for (std::size_t t = 0; t < n_sets; ++t) {
      const GenerationResult& g = runs[static_cast<std::size_t>(i)][t];
      const std::string name = toggle_set_name(sets[t]);
      save_image(ctx, a.out / (name + "_s" + std::to_string(config.seed + static_cast<std::uint64_t>(i)) + ".png"),
                 g.image);
      const double f = labels.empty() ? std::nan("") : layout_fidelity(g.image, r.entities, labels, model).score;
      fid[t].push_back(f);
      corr[t].push_back(structure_correlation(g.image, r.reference));
      leak[t].push_back(g.leakage);
      per << name << '\t' << config.seed + static_cast<std::uint64_t>(i) << '\t' << f << '\t' << corr[t].back()
          << '\t' << g.leakage << '\n';
    }
  ctx.artifacts.push_back(a.out / "per_seed.tsv");

  std::ofstream table(a.out / "metrics.tsv");
  table << "toggles\truns\tlayout_fidelity\tstructure_corr\tleakage\n";
  ctx.out << std::left << std::setw(16) << "toggles" << std::right << std::setw(6) << "runs" << std::setw(17)
          << "layout_fidelity" << std::setw(16) << "structure_corr" << std::setw(10) << "leakage" << '\n';
  for (std::size_t t = 0; t < n_sets; ++t) {
    const std::string name = toggle_set_name(sets[t]);
    table << name << '\t' << a.seeds << '\t' << fixed(mean(fid[t])) << '\t' << fixed(mean(corr[t])) << '\t'
          << fixed(mean(leak[t])) << '\n';
    ctx.out << std::left << std::setw(16) << name << std::right << std::setw(6) << a.seeds << std::setw(17)
            << fixed(mean(fid[t])) << std::setw(16) << fixed(mean(corr[t])) << std::setw(10) << fixed(mean(leak[t]))
            << '\n';
  }
  ctx.artifacts.push_back(a.out / "metrics.tsv");

  // Paired sign tests of the first set against the others.
  if (n_sets > 1 && a.seeds > 1) {
    const std::string base = toggle_set_name(sets[0]);
    for (std::size_t t = 1; t < n_sets; ++t) {
      const std::string other = toggle_set_name(sets[t]);
      const SignTest fs_ = labels.empty() ? SignTest{} : sign_test(fid[0], fid[t]);
      const SignTest cs = sign_test(corr[0], corr[t]);
      const SignTest ls = sign_test(leak[t], leak[0]);
      ctx.out << base << " vs " << other << ": fidelity " << fs_.wins << "/" << fs_.losses << " p=" << fs_.p_value
              << ", structure " << cs.wins << "/" << cs.losses << " p=" << cs.p_value << ", leakage reduced "
              << ls.wins << "/" << ls.losses << " p=" << ls.p_value << '\n';
    }
  }
}

void cmd_bench(Context& ctx, const RunConfig& config, const BenchArgs& a) {
  const int modes = !a.make_toy.empty() + !a.generate.empty() + !a.evaluate.empty();
  if (modes != 1) throw ParameterError("bench needs exactly one of --make-toy, --generate, --evaluate");

  if (!a.make_toy.empty()) {
    make_toy_benchmark(a.make_toy, a.classes, a.refs, a.bench_seed);
    ctx.artifacts.push_back(a.make_toy / "manifest.tsv");
    ctx.out << "wrote " << a.classes * a.refs << " samples to " << a.make_toy.string() << '\n';
    return;
  }

  if (!a.generate.empty()) {
    if (a.gen_dir.empty()) throw ParameterError("--generate needs --gen-dir");
    const BenchmarkIngest bench = ingest_benchmark(a.generate);
    for (const std::string& e : bench.errors) ctx.err << "warning: " << e << '\n';
    const UNet net = load_net(config);
    const NoiseSchedule s = config.noise_schedule();
    fs::create_directories(a.gen_dir);
    const int n = static_cast<int>(bench.samples.size());
    std::vector<Image> out(static_cast<std::size_t>(n));
    parallel_for(n, a.jobs, [&](int i) {
      const EventSample& sample = bench.samples[static_cast<std::size_t>(i)];
      const Caption cap = benchmark_caption(sample, a.switch_colors, config.seed + static_cast<std::uint64_t>(i));
      const std::vector<EntitySpec> entities = benchmark_entities(sample, cap);
      RunConfig c = config;
      c.seed = config.seed + static_cast<std::uint64_t>(i);
      const PromptEmbedding prompt = embed_prompt(cap.token_ids, net.text_encoder());
      out[static_cast<std::size_t>(i)] = customize(read_png(sample.image), entities, prompt, c, net, s).image;
    });
    for (int i = 0; i < n; ++i)
      save_image(ctx, a.gen_dir / (bench.samples[static_cast<std::size_t>(i)].sample_id + ".png"),
                 out[static_cast<std::size_t>(i)]);
    ctx.out << "generated " << n << " images into " << a.gen_dir.string() << '\n';
    return;
  }

  if (a.gen_dir.empty()) throw ParameterError("--evaluate needs --gen-dir");
  const BenchmarkIngest bench = ingest_benchmark(a.evaluate);
  for (const std::string& e : bench.errors) ctx.err << "warning: " << e << '\n';
  std::vector<RetrievalItem> refs, targets;
  for (const EventSample& s : bench.samples) {
    refs.push_back({embed_image(read_png(s.image), a.encoder), s.sample_id, s.event_class});
    const fs::path gen = a.gen_dir / (s.sample_id + ".png");
    if (!fs::exists(gen)) throw DataError("no generated image " + gen.string() + " for sample " + s.sample_id);
    targets.push_back({embed_image(read_png(gen), a.encoder), s.sample_id, s.event_class});
  }
  const RetrievalReport report = recall_at_k(targets, refs, a.ks, a.jobs);
  ctx.out << format_report_table(report) << format_report_kv(report);
  if (!a.report.empty()) {
    std::ofstream os(a.report);
    if (!os) throw IoError("cannot write " + a.report.string());
    os << format_report_kv(report);
    ctx.artifacts.push_back(a.report);
  }
}

void cmd_inspect_attn(Context& ctx, const RunConfig& config, const InspectArgs& a) {
  const UNet net = load_net(config);
  const LayerAddress site = parse_layer_address(a.site);
  if (!net.has_layer(site) || !net.layer(site).attention) {
    std::string valid;
    for (const LayerAddress& l : net.attention_layers()) valid += (valid.empty() ? "" : ", ") + to_string(l);
    throw AddressError("site " + a.site + " has no attention maps (valid: " + valid + ")");
  }
  for (int k : a.steps)
    if (k < 0 || k >= config.sampling_steps)
      throw ParameterError("step " + std::to_string(k) + " is outside 0-" + std::to_string(config.sampling_steps - 1));
  const bool any = config.toggles.guidance || config.toggles.regulation || config.toggles.injection;
  const Request r = load_request(config, net, any);

  fs::create_directories(a.out);
  std::ofstream scales(a.out / "scales.tsv");
  scales << "file\tmin\tmax\n" << std::setprecision(10);
  const std::set<int> wanted(a.steps.begin(), a.steps.end());
  const int res = net.layer(site).resolution;
  const int upscale = std::max(1, kToyImageSize / res);

  auto write_map = [&](const std::string& name, const std::vector<double>& v, int h, int w, int up) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double lo = *mn, span = *mx - *mn;
    Image img(h * up, w * up, 1);
    for (int y = 0; y < h * up; ++y)
      for (int x = 0; x < w * up; ++x) {
        const double val = v[static_cast<std::size_t>(y / up) * w + x / up];
        img.at(y, x, 0) = span > 0.0 ? (val - lo) / span : 0.0;
      }
    save_image(ctx, a.out / name, img);
    scales << name << '\t' << lo << '\t' << lo + span << '\n';
  };

  PipelineObserver obs;
  obs.record = {{site, Quantity::ca}, {site, Quantity::sa}};
  obs.on_trace = [&](int k, const AttentionTrace& trace) {
    if (!wanted.count(k)) return;
    char prefix[32];
    const Tensor& ca = trace.ca.at(site);
    const int heads = ca.dim(0), pos = ca.dim(1), tok = ca.dim(2);
    for (int j = 0; j < tok; ++j) {
      std::vector<double> m(static_cast<std::size_t>(pos), 0.0);
      for (int h = 0; h < heads; ++h)
        for (int p = 0; p < pos; ++p) m[static_cast<std::size_t>(p)] += ca[(static_cast<std::size_t>(h) * pos + p) * tok + j] / heads;
      std::snprintf(prefix, sizeof prefix, "ca_s%02d_t%02d.png", k, j);
      write_map(prefix, m, res, res, upscale);
    }
    const Tensor& sa = trace.sa.at(site);
    std::vector<double> m(static_cast<std::size_t>(pos) * pos, 0.0);
    for (int h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += sa[static_cast<std::size_t>(h) * m.size() + i] / heads;
    std::snprintf(prefix, sizeof prefix, "sa_s%02d.png", k);
    write_map(prefix, m, pos, pos, 1);
  };
  const NoiseSchedule s = config.noise_schedule();
  const GenerationResult g = customize(r.reference, r.entities, r.prompt, config, net, s, nullptr, {false, &obs});
  save_image(ctx, a.out / "generated.png", g.image);
  ctx.artifacts.push_back(a.out / "scales.tsv");
  ctx.out << "wrote attention maps for " << a.site << " to " << a.out.string() << '\n';
}

void cmd_calibrate_eta(Context& ctx, const RunConfig& config, const CalibrateArgs& a) {
  const UNet net = load_net(config);
  const NoiseSchedule s = config.noise_schedule();
  const ToyLabelModel model;
  ctx.out << std::left << std::setw(12) << "eta" << std::right << std::setw(10) << "flagged" << std::setw(12)
          << "fidelity" << '\n';
  double chosen = 0.0;
  for (double eta : a.etas) {
    std::vector<int> flagged(static_cast<std::size_t>(a.seeds), 0);
    std::vector<double> fid(static_cast<std::size_t>(a.seeds), 0.0);
    parallel_for(a.seeds, a.jobs, [&](int i) {
      const ToyScene scene = toy_event_scene(i % kToyEventClasses, static_cast<std::uint64_t>(i));
      const RenderedScene rendered = render_scene(scene);
      const std::vector<int> colors = switched_colors(scene, static_cast<std::uint64_t>(i));
      const Caption cap = caption_with_colors(scene, colors);
      const auto entities = entities_for(rendered, cap);
      RunConfig c = config;
      c.seed = config.seed + static_cast<std::uint64_t>(i);
      c.guidance.eta = eta;
      c.toggles = Toggles{};
      // a run is clipped when one guidance update moves any latent entry by more than --clip
      double shift = 0.0;
      PipelineObserver watch;
      watch.on_guidance = [&](int, const LatentTensor& before, const LatentTensor& after, double) {
        for (std::size_t j = 0; j < before.size(); ++j) shift = std::max(shift, std::abs(after[j] - before[j]));
      };
      try {
        const GenerationResult g = customize(rendered.image, entities,
                                             embed_prompt(cap.token_ids, net.text_encoder()), c, net, s, nullptr,
                                             {false, &watch});
        flagged[static_cast<std::size_t>(i)] = shift > a.clip;
        fid[static_cast<std::size_t>(i)] = layout_fidelity(g.image, entities, colors, model).score;
      } catch (const NumericError&) {
        flagged[static_cast<std::size_t>(i)] = 1;
      } catch (const Error& e) {
        if (e.category() != ErrorCategory::numeric) throw;
        flagged[static_cast<std::size_t>(i)] = 1;
      }
    });
    double rate = 0.0;
    for (int f : flagged) rate += f;
    rate /= a.seeds;
    if (rate < a.max_flagged) chosen = std::max(chosen, eta);
    ctx.out << std::left << std::setw(12) << eta << std::right << std::setw(10) << fixed(rate, 3) << std::setw(12)
            << fixed(mean(fid)) << '\n';
  }
  if (chosen == 0.0) throw NumericError("no eta in the sweep stays below the flagged-run limit");
  ctx.out << "recommended_eta=" << chosen << '\n';
}

}  // namespace freeevent::cli
