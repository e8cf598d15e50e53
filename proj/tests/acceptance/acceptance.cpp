// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 when any fails.
//
// Criteria 6 and 7 need a trained toy denoiser. It is trained once (20k steps
// on a freshly generated shapes set) and cached in FREEEVENT_ACCEPTANCE_DIR
// together with the time the training took, which counts toward criterion 6.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "freeevent/errors.hpp"
#include "freeevent/evalbench.hpp"
#include "freeevent/metrics.hpp"
#include "freeevent/pipeline.hpp"
#include "freeevent/schedule.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/toy_data.hpp"
#include "freeevent/train.hpp"
#include "freeevent/transfer.hpp"
#include "freeevent/weights_io.hpp"

using namespace freeevent;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "!") + what);
  }
};

LatentTensor normal_tensor(std::mt19937_64& rng, Shape shape = {3, 8, 8}) {
  std::normal_distribution<double> n;
  LatentTensor t(std::move(shape));
  for (double& v : t.storage()) v = n(rng);
  return t;
}

struct Toy {
  UNet net;
  ToyScenario scenario = toy_ablation_scenario();
  PromptEmbedding prompt;
  double train_seconds = 0.0;
  bool trained = false;
  std::string train_note;
};

Toy load_or_train() {
  const fs::path dir = FREEEVENT_ACCEPTANCE_DIR;
  const fs::path weights = dir / "toy_weights.bin", timing = dir / "toy_weights.seconds";
  Toy toy{UNet::from_weights(initial_weights(UNetConfig{}, 1))};
  try {
    if (fs::exists(weights) && fs::exists(timing)) {
      toy.net = UNet::from_weights(load_weights(weights));
      std::ifstream(timing) >> toy.train_seconds;
      toy.train_note = "cached weights " + weights.string();
    } else {
      std::cout << "training toy denoiser (20000 steps); cached afterwards in " << dir.string() << std::endl;
      const auto t0 = Clock::now();
      const ToyDataset data = make_shapes_dataset(4000, 1);
      TrainOptions opt;
      opt.steps = 20000;
      opt.seed = 1;
      opt.autoencoder.stride = 2;
      opt.report_every = 2000;
      opt.on_report = [](int step, double loss) { std::cout << "  step " << step << " loss " << loss << std::endl; };
      const TrainResult r = train_toy(data, opt);
      toy.train_seconds = seconds_since(t0);
      fs::create_directories(dir);
      save_weights(weights, r.weights);
      std::ofstream(timing) << toy.train_seconds << '\n';
      toy.net = UNet::from_weights(r.weights);
      toy.train_note = "trained now, held-out loss " + fmt("%.4f", r.heldout_loss_initial) + " -> " +
                       fmt("%.4f", r.heldout_loss_final);
    }
    toy.trained = true;
  } catch (const Error& e) {
    toy.train_note = std::string("training failed: ") + e.what();
  }
  toy.prompt = embed_prompt(toy.scenario.target.token_ids, toy.net.text_encoder());
  return toy;
}

// 1. Schedule suite.
Verdict schedule_suite() {
  Verdict v;
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02, 50);
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const LatentTensor z0 = normal_tensor(rng), eps = normal_tensor(rng);
    const int t = std::uniform_int_distribution<int>(1, 1000)(rng);
    const int tp = std::uniform_int_distribution<int>(0, t - 1)(rng);
    const LatentTensor zt = forward_noise(z0, t, eps, s);
    worst = std::max(worst, max_abs_diff(ddim_step(zt, eps, t, tp, s), forward_noise(z0, tp, eps, s)));
    worst = std::max(worst, max_abs_diff(ddim_step(zt, eps, t, 0, s), z0));
  }
  v.check(worst <= 1e-5, "DDIM inversion max L-inf " + fmt("%.2e", worst) + " over 100 cases");

  bool monotone = s.alpha_bar_at(0) == 1.0;
  for (int t = 1; t <= 1000; ++t) monotone = monotone && s.alpha_bar_at(t) < s.alpha_bar_at(t - 1);
  v.check(monotone, "alpha_bar strictly decreasing");

  // 50-digit oracle values (tests/oracles/alpha_bar_oracle.py).
  const double ab500 = 0.07858724288177823734328983;
  const double rel = std::abs(s.alpha_bar_at(500) / ab500 - 1.0);
  double sig = std::abs(sigma_t(500, s) - std::sqrt((1 - ab500) / ab500)) / std::sqrt((1 - ab500) / ab500);
  sig = std::max(sig, std::abs(sigma_t(1, s) - std::sqrt(1e-4 / 0.9999)) / std::sqrt(1e-4 / 0.9999));
  v.check(rel < 1e-12 && sig < 1e-10 && sigma_t(0, s) == 0.0,
          "sigma closed form rel err " + fmt("%.1e", sig) + ", alpha_bar(500) rel err " + fmt("%.1e", rel));
  return v;
}

// 2. Energy and gradient suite.
Verdict energy_suite(const Toy& toy) {
  Verdict v;
  double worst_uniform = 0.0;
  for (int covered = 0; covered <= 64; ++covered) {
    std::vector<double> ca(64, 1.0 / 64), m(64, 0.0);
    for (int i = 0; i < covered; ++i) m[static_cast<std::size_t>(i)] = 1.0;
    const double p = covered / 64.0;
    worst_uniform = std::max(worst_uniform, std::abs(attention_energy(ca, m) - (1 - p) * (1 - p)));
  }
  v.check(worst_uniform <= 1e-6, "uniform (1-p)^2 cases max err " + fmt("%.1e", worst_uniform));

  const auto& ents = toy.scenario.entities;
  const GuidanceConfig cfg{1.0, 10, true, {}};
  auto energy = [&](const LatentTensor& z, int t) {
    InterventionSet iv;
    for (const LayerAddress& a : toy.net.attention_layers()) iv.record_at(a, Quantity::ca);
    return total_energy(denoise_forward(toy.net, z, t, toy.prompt, iv).trace, ents, cfg);
  };
  std::mt19937_64 rng(2);
  double worst = 0.0;
  int probes = 0;
  for (int point = 0; point < 5; ++point) {
    const int t = 100 + 200 * point;
    const LatentTensor z = normal_tensor(rng);
    const LatentTensor g = energy_gradient(z, t, toy.prompt, ents, cfg, toy.net);
    for (int i = 0; i < 24; ++i, ++probes) {
      LatentTensor d = normal_tensor(rng);
      d *= 1.0 / l2_norm(d);
      const double h = 1e-5;
      const double fd = (energy(z + h * d, t) - energy(z - h * d, t)) / (2 * h);
      const double an = dot(g, d);
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
    }
  }
  v.check(probes >= 100 && worst <= 1e-4,
          "central differences: " + std::to_string(probes) + " probes, max rel err " + fmt("%.2e", worst));
  return v;
}

// 3. Regulation suite, on cross-attention maps of the toy network.
Verdict regulation_suite(const Toy& toy) {
  Verdict v;
  std::mt19937_64 rng(3);
  InterventionSet rec;
  for (const LayerAddress& a : toy.net.attention_layers()) rec.record_at(a, Quantity::ca);
  const AttentionTrace tr = denoise_forward(toy.net, normal_tensor(rng), 500, toy.prompt, rec).trace;
  const auto& ents = toy.scenario.entities;
  auto all_ones = ents;
  for (auto& e : all_ones) e.mask = Mask(16, 16, 1.0);

  bool zero_outside = true, kept_inside = true, idempotent = true, identity = true, others = true;
  for (const auto& [a, ca] : tr.ca) {
    const int side = static_cast<int>(std::lround(std::sqrt(ca.dim(1))));
    Tensor once = ca;
    regulate_cross_attention(once, ents, side, side);
    Tensor twice = once;
    regulate_cross_attention(twice, ents, side, side);
    idempotent = idempotent && twice == once;
    Tensor ones = ca;
    regulate_cross_attention(ones, all_ones, side, side);
    identity = identity && ones == ca;
    for (int h = 0; h < ca.dim(0); ++h)
      for (int p = 0; p < ca.dim(1); ++p)
        for (int j = 0; j < ca.dim(2); ++j) {
          const EntitySpec* owner = nullptr;
          for (const auto& e : ents)
            if (e.span.contains(j)) owner = &e;
          if (!owner) {
            others = others && once.at(h, p, j) == ca.at(h, p, j);
            continue;
          }
          const double m = resample_mask(owner->mask, side, side, ResampleMode::coverage)[static_cast<std::size_t>(p)];
          if (m == 0.0)
            zero_outside = zero_outside && once.at(h, p, j) == 0.0;
          else
            kept_inside = kept_inside && once.at(h, p, j) == ca.at(h, p, j);
        }
  }
  v.check(zero_outside, "zero outside mask (bitwise)");
  v.check(kept_inside, "unchanged inside mask (bitwise)");
  v.check(idempotent, "idempotent (bitwise)");
  v.check(identity, "identity under all-ones masks (bitwise)");
  v.check(others, "non-entity columns untouched (bitwise)");
  return v;
}

// 4. Injection suite with the default 50-step schedule.
Verdict injection_suite(const Toy& toy) {
  Verdict v;
  RunConfig cfg;
  cfg.seed = 4;
  const NoiseSchedule s = cfg.noise_schedule();
  const InjectionSchedule sched = cfg.injection_schedule();
  const Image& ref = toy.scenario.reference.image;
  const ReferenceContext ctx = reference_for(ref, cfg, toy.net, s);

  // Reference traces at every decoder site and step. Entries outside the
  // schedule are negated: if any of them were replaced, the output would move.
  InjectionSchedule everywhere;
  for (const LayerInfo& l : toy.net.layers()) {
    if (l.address.section != Section::decoder) continue;
    everywhere.features.push_back({l.address, {0, 49}});
    if (l.attention) everywhere.self_attn.push_back({l.address, {0, 49}});
  }
  ReferenceContext full =
      prepare_reference(ref, reference_seed(cfg.seed), s, toy.net, everywhere, {cfg.reference_mode, autoencoder_for(cfg)});
  for (auto& [k, trace] : full.traces) {
    for (auto& [a, t] : trace.f)
      if (!std::any_of(sched.features.begin(), sched.features.end(),
                       [&](const InjectionSite& x) { return x.address == a && x.steps.contains(k); }))
        t = -1.0 * t;
    for (auto& [a, t] : trace.sa)
      if (!std::any_of(sched.self_attn.begin(), sched.self_attn.end(),
                       [&](const InjectionSite& x) { return x.address == a && x.steps.contains(k); }))
        t = -1.0 * t;
  }

  PipelineObserver obs;
  for (const auto& site : everywhere.features) obs.record.emplace(site.address, Quantity::f);
  for (const auto& site : everywhere.self_attn) obs.record.emplace(site.address, Quantity::sa);
  std::map<int, AttentionTrace> gen;
  obs.on_trace = [&](int k, const AttentionTrace& t) { gen[k] = t; };
  const GenerationResult base = customize(ref, toy.scenario.entities, toy.prompt, cfg, toy.net, s, &ctx, {false, &obs});
  const GenerationResult poisoned = customize(ref, toy.scenario.entities, toy.prompt, cfg, toy.net, s, &full);

  int scheduled = 0, equal = 0, unscheduled = 0;
  bool keys_exact = true;
  for (int k = 0; k < 50; ++k) {
    const InterventionSet iv = build_interventions(ctx, k, sched);
    std::set<LayerAddress> want_f, want_sa, got_f, got_sa;
    for (const auto& site : sched.features)
      if (site.steps.contains(k)) want_f.insert(site.address);
    for (const auto& site : sched.self_attn)
      if (site.steps.contains(k)) want_sa.insert(site.address);
    for (const auto& [a, _] : iv.replace_f) got_f.insert(a);
    for (const auto& [a, _] : iv.replace_sa) got_sa.insert(a);
    keys_exact = keys_exact && want_f == got_f && want_sa == got_sa;

    for (const auto& [a, t] : gen.at(k).f) {
      const bool on = want_f.count(a) != 0;
      (on ? scheduled : unscheduled)++;
      if (on) equal += t == ctx.traces.at(k).f.at(a);
    }
    for (const auto& [a, t] : gen.at(k).sa) {
      const bool on = want_sa.count(a) != 0;
      (on ? scheduled : unscheduled)++;
      if (on) equal += t == ctx.traces.at(k).sa.at(a);
    }
  }
  v.check(scheduled == 50 + 25 * 8 && equal == scheduled,
          std::to_string(equal) + "/" + std::to_string(scheduled) + " scheduled (site, step) pairs bit-identical");
  v.check(keys_exact, "replacement sets match the schedule at every step");
  v.check(unscheduled > 0 && poisoned.z0 == base.z0 && poisoned.image == base.image,
          "output unchanged with all " + std::to_string(unscheduled) + " unscheduled reference entries negated");
  return v;
}

std::string png_bytes(const Image& img, const fs::path& scratch) {
  write_png(scratch, img);
  std::ifstream in(scratch, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 5. Pipeline determinism.
Verdict determinism_suite(const Toy& toy) {
  Verdict v;
  const fs::path scratch = fs::temp_directory_path() / "freeevent_acceptance_5.png";
  RunConfig cfg;
  cfg.seed = 5;
  const NoiseSchedule s = cfg.noise_schedule();
  const Image& ref = toy.scenario.reference.image;
  const auto a = customize(ref, toy.scenario.entities, toy.prompt, cfg, toy.net, s);
  const auto b = customize(ref, toy.scenario.entities, toy.prompt, cfg, toy.net, s);
  v.check(png_bytes(a.image, scratch) == png_bytes(b.image, scratch) && a.z0 == b.z0,
          "repeat run byte-identical");
  RunConfig off = cfg;
  off.toggles = Toggles{false, false, false};
  const auto c = customize(ref, toy.scenario.entities, toy.prompt, off, toy.net, s);
  const auto d = generate_baseline(toy.prompt, cfg, toy.net, s);
  v.check(png_bytes(c.image, scratch) == png_bytes(d.image, scratch) && c.z0 == d.z0,
          "all-toggles-off equals baseline byte-exactly");
  fs::remove(scratch);
  return v;
}

// 8. Hook transparency and the structure of the guidance step.
Verdict transparency_suite(const Toy& toy) {
  Verdict v;
  RunConfig cfg;
  cfg.seed = 8;
  const NoiseSchedule s = cfg.noise_schedule();
  const Image& ref = toy.scenario.reference.image;
  const auto plain = customize(ref, toy.scenario.entities, toy.prompt, cfg, toy.net, s);
  PipelineObserver obs;
  for (const LayerInfo& l : toy.net.layers()) {
    obs.record.emplace(l.address, Quantity::f);
    if (l.attention) {
      obs.record.emplace(l.address, Quantity::sa);
      obs.record.emplace(l.address, Quantity::ca);
    }
  }
  const auto traced = customize(ref, toy.scenario.entities, toy.prompt, cfg, toy.net, s, nullptr, {true, &obs});
  v.check(traced.image == plain.image && traced.z0 == plain.z0, "record-only run byte-identical to untraced run");

  // displacement of the first guidance step for eta, 2 eta, 3 eta
  std::vector<LatentTensor> step0;
  for (double mult : {1.0, 2.0, 3.0}) {
    RunConfig c = cfg;
    c.guidance.eta = cfg.guidance.eta * mult;
    c.sampling_steps = 1;
    c.guidance.guidance_steps = 1;
    PipelineObserver o;
    o.on_guidance = [&](int, const LatentTensor& before, const LatentTensor& after, double) {
      step0.push_back(after - before);
    };
    customize(ref, toy.scenario.entities, toy.prompt, c, toy.net, c.noise_schedule(), nullptr, {false, &o});
  }
  const double scale = l2_norm(step0.at(0));
  const double lin = std::max(max_abs_diff(2.0 * step0[0], step0[1]), max_abs_diff(3.0 * step0[0], step0[2])) / scale;
  v.check(scale > 0.0 && lin <= 1e-9, "pipeline guidance step linear in eta (rel dev " + fmt("%.1e", lin) + ")");

  std::mt19937_64 rng(8);
  const LatentTensor z = normal_tensor(rng);
  const LatentTensor g = energy_gradient(z, 400, toy.prompt, toy.scenario.entities, cfg.guidance, toy.net);
  // Displacement for a fixed gradient is independent of z; measuring it from a
  // zero latent avoids the cancellation in (z + d) - z when sigma_t is small.
  const LatentTensor zero(z.shape());
  double worst = 0.0;
  for (int t : {1, 200, 400, 1000}) {
    const LatentTensor d1 = guidance_update(zero, g, t, cfg.guidance, s);
    GuidanceConfig g2 = cfg.guidance;
    g2.eta *= 2.0;
    const LatentTensor d2 = guidance_update(zero, g, t, g2, s);
    worst = std::max(worst, max_abs_diff(2.0 * d1, d2) / l2_norm(d2));
  }
  v.check(worst <= 1e-12, "update linear in eta at four timesteps (rel dev " + fmt("%.1e", worst) + ")");
  v.check(guidance_update(z, g, 0, cfg.guidance, s) == z, "no displacement at sigma_t = 0");
  return v;
}

// 6. Ablation behaviour over paired seeds on the toy scenario.
Verdict ablation_suite(const Toy& toy, double& seconds) {
  Verdict v;
  if (!toy.trained) {
    v.check(false, toy.train_note);
    return v;
  }
  const auto t0 = Clock::now();
  const int n_seeds = 50;
  const std::vector<Toggles> sets{parse_toggle_set("all-on"), parse_toggle_set("no-guidance"),
                                  parse_toggle_set("no-injection"), parse_toggle_set("no-regulation")};
  const ToyLabelModel labels;
  std::vector<double> fid_on, fid_off, corr_on, corr_off, leak_on, leak_off;
  for (int seed = 0; seed < n_seeds; ++seed) {
    RunConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto r = ablate(toy.scenario.reference.image, toy.scenario.entities, toy.prompt, cfg, sets, toy.net,
                          {true, nullptr});
    auto fid = [&](const Image& im) {
      return layout_fidelity(im, toy.scenario.entities, toy.scenario.target_colors, labels).score;
    };
    fid_on.push_back(fid(r[0].image));
    fid_off.push_back(fid(r[1].image));
    corr_on.push_back(structure_correlation(r[0].image, toy.scenario.reference.image));
    corr_off.push_back(structure_correlation(r[2].image, toy.scenario.reference.image));
    leak_on.push_back(r[0].leakage);
    leak_off.push_back(r[3].leakage);
  }
  seconds = seconds_since(t0);
  const SignTest a = sign_test(fid_on, fid_off), b = sign_test(corr_on, corr_off), c = sign_test(leak_off, leak_on);
  auto line = [](const char* what, double on, double off, const SignTest& t) {
    return std::string(what) + " " + fmt("%.4f", on) + " vs " + fmt("%.4f", off) + " (wins " + std::to_string(t.wins) +
           ", losses " + std::to_string(t.losses) + ", ties " + std::to_string(t.ties) + ", p=" + fmt("%.2e", t.p_value) + ")";
  };
  v.check(mean(fid_on) > mean(fid_off) && a.p_value < 0.01, line("(a) layout fidelity guidance on/off", mean(fid_on), mean(fid_off), a));
  v.check(mean(corr_on) > mean(corr_off) && b.p_value < 0.01, line("(b) structure corr injection on/off", mean(corr_on), mean(corr_off), b));
  v.check(mean(leak_on) < mean(leak_off), line("(c) leakage regulation on/off", mean(leak_on), mean(leak_off), c));
  const double total = seconds + toy.train_seconds;
  v.check(total < 1800.0, "training " + fmt("%.0f", toy.train_seconds) + " s + ablation " + fmt("%.0f", seconds) +
                              " s within 30 min");
  return v;
}

// 7. Toy retrieval: full method against injection-off on 10 x 20 references.
Verdict retrieval_suite(const Toy& toy) {
  Verdict v;
  if (!toy.trained) {
    v.check(false, toy.train_note);
    return v;
  }
  const fs::path root = fs::path(FREEEVENT_ACCEPTANCE_DIR) / "toy_bench";
  make_toy_benchmark(root, 10, 20, 7);
  const BenchmarkIngest bench = ingest_benchmark(root);
  v.check(bench.samples.size() == 200 && bench.errors.empty(), std::to_string(bench.samples.size()) + " samples ingested");

  std::vector<RetrievalItem> refs, full, no_inj;
  RunConfig cfg;
  const NoiseSchedule s = cfg.noise_schedule();
  const std::vector<Toggles> sets{parse_toggle_set("all-on"), parse_toggle_set("no-injection")};
  for (std::size_t i = 0; i < bench.samples.size(); ++i) {
    const EventSample& sample = bench.samples[i];
    const Image image = read_png(sample.image);
    refs.push_back({embed_image(image), sample.sample_id, sample.event_class});
    RunConfig c = cfg;
    c.seed = i;
    const Caption cap = benchmark_caption(sample, true, c.seed);
    const PromptEmbedding prompt = embed_prompt(cap.token_ids, toy.net.text_encoder());
    const auto r = ablate(image, benchmark_entities(sample, cap), prompt, c, sets, toy.net);
    full.push_back({embed_image(r[0].image), sample.sample_id, sample.event_class});
    no_inj.push_back({embed_image(r[1].image), sample.sample_id, sample.event_class});
  }
  const RetrievalReport rf = recall_at_k(full, refs, {1, 5, 10}), rn = recall_at_k(no_inj, refs, {1, 5, 10});
  auto triple = [](const RetrievalReport& r) {
    return fmt("%.3f", r.recall_at.at(1)) + "/" + fmt("%.3f", r.recall_at.at(5)) + "/" + fmt("%.3f", r.recall_at.at(10));
  };
  v.check(rf.recall_at.at(1) > rn.recall_at.at(1),
          "Recall@1/5/10 full " + triple(rf) + " vs injection-off " + triple(rn));
  const bool monotone = rf.recall_at.at(1) <= rf.recall_at.at(5) && rf.recall_at.at(5) <= rf.recall_at.at(10) &&
                        rn.recall_at.at(1) <= rn.recall_at.at(5) && rn.recall_at.at(5) <= rn.recall_at.at(10);
  v.check(monotone, "Recall@k monotone in k");
  return v;
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  const Toy toy = load_or_train();
  std::cout << "toy denoiser: " << toy.train_note << '\n';

  struct Row {
    int id;
    const char* name;
    double limit;  // seconds, 0 for none
    std::function<Verdict(double&)> run;
  };
  double ablation_seconds = 0.0;
  const std::vector<Row> rows{
      {1, "schedule suite", 5, [](double&) { return schedule_suite(); }},
      {2, "energy/gradient suite", 120, [&](double&) { return energy_suite(toy); }},
      {3, "regulation suite", 10, [&](double&) { return regulation_suite(toy); }},
      {4, "injection suite", 60, [&](double&) { return injection_suite(toy); }},
      {5, "pipeline determinism", 60, [&](double&) { return determinism_suite(toy); }},
      {6, "ablation behavior", 0, [&](double& s) { return ablation_suite(toy, s); }},
      {7, "toy retrieval", 0, [&](double&) { return retrieval_suite(toy); }},
      {8, "hook transparency and guidance structure", 60, [&](double&) { return transparency_suite(toy); }},
  };

  int failed = 0;
  for (const Row& row : rows) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = row.run(ablation_seconds);
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (row.limit > 0) v.check(secs < row.limit, "runtime " + fmt("%.1f", secs) + " s < " + fmt("%.0f", row.limit) + " s");
    std::string detail;
    for (const std::string& n : v.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << row.id << "] " << row.name << " (" << fmt("%.1f", secs)
              << " s): " << detail << '\n';
    failed += !v.pass;
  }
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed")) << '\n';
  return failed ? 1 : 0;
}
