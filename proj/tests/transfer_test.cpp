#include <gtest/gtest.h>

#include <set>

#include "freeevent/errors.hpp"
#include "freeevent/pipeline.hpp"
#include "freeevent/toy_data.hpp"
#include "freeevent/transfer.hpp"
#include "freeevent/weights_io.hpp"
#include "support.hpp"

using namespace freeevent;

namespace {

LayerAddress dec(int b, int l) { return LayerAddress{Section::decoder, b, l}; }

struct Bench {
  UNet net = fe_test::toy_net(7);
  ToyScenario sc = toy_ablation_scenario();
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02, 12);
  InjectionSchedule schedule = default_schedule(12);
  ReferenceOptions opt{ReferenceMode::shared_noise, Autoencoder{2, 3, 16, 16}};
};

}  // namespace

TEST(InjectionSchedule, DefaultSites) {
  const InjectionSchedule s = default_schedule(50);
  ASSERT_EQ(s.features.size(), 1u);
  EXPECT_EQ(s.features[0], (InjectionSite{dec(1, 1), {0, 49}}));
  std::set<LayerAddress> sa;
  for (const auto& site : s.self_attn) {
    EXPECT_EQ(site.steps, (StepRange{0, 24}));
    sa.insert(site.address);
  }
  EXPECT_EQ(sa, (std::set<LayerAddress>{dec(1, 1), dec(1, 2), dec(2, 0), dec(2, 1), dec(2, 2), dec(3, 0), dec(3, 1),
                                        dec(3, 2)}));
  EXPECT_EQ(s.active_steps().size(), 50u);
  EXPECT_TRUE(default_schedule(1).self_attn.empty());
}

TEST(InjectionSchedule, SiteGrammarRoundTrip) {
  const auto sites = parse_sites("dec1:[1,2]@0-24, dec3:0@5-5");
  ASSERT_EQ(sites.size(), 3u);
  EXPECT_EQ(sites[0], (InjectionSite{dec(1, 1), {0, 24}}));
  EXPECT_EQ(sites[2], (InjectionSite{dec(3, 0), {5, 5}}));
  EXPECT_EQ(parse_sites(format_sites(sites)), sites);
  EXPECT_TRUE(parse_sites("none").empty());
  EXPECT_TRUE(parse_sites("").empty());
  const InjectionSchedule d = default_schedule(50);
  EXPECT_EQ(parse_sites(format_sites(d.self_attn)), d.self_attn);
  EXPECT_EQ(parse_sites("dec1:1@4").front().steps, (StepRange{4, 4}));
  EXPECT_ANY_THROW(parse_sites("dec1:1"));
  EXPECT_ANY_THROW(parse_sites("dec1:1@9-3"));
  EXPECT_ANY_THROW(parse_sites("bogus@0-1"));
}

TEST(InjectionSchedule, Validation) {
  const UNet net = fe_test::toy_net();
  EXPECT_NO_THROW(validate_schedule(default_schedule(50), net, 50));
  EXPECT_THROW(validate_schedule(default_schedule(50), net, 40), ParameterError);
  InjectionSchedule s;
  s.self_attn.push_back({dec(0, 0), {0, 1}});
  EXPECT_THROW(validate_schedule(s, net, 50), AddressError);
  s.self_attn = {{dec(9, 0), {0, 1}}};
  EXPECT_THROW(validate_schedule(s, net, 50), AddressError);
  EXPECT_NE(schedule_hash(default_schedule(50)), schedule_hash(default_schedule(40)));
}

TEST(Reference, InterventionsCoverExactlyTheSchedule) {
  Bench u;
  const ReferenceContext ctx = prepare_reference(u.sc.reference.image, 9, u.s, u.net, u.schedule, u.opt);
  for (int k = 0; k < u.s.sampling_steps; ++k) {
    const InterventionSet iv = build_interventions(ctx, k, u.schedule);
    std::set<LayerAddress> want_f, want_sa, got_f, got_sa;
    for (const auto& site : u.schedule.features)
      if (site.steps.contains(k)) want_f.insert(site.address);
    for (const auto& site : u.schedule.self_attn)
      if (site.steps.contains(k)) want_sa.insert(site.address);
    for (const auto& [a, _] : iv.replace_f) got_f.insert(a);
    for (const auto& [a, _] : iv.replace_sa) got_sa.insert(a);
    EXPECT_EQ(got_f, want_f) << k;
    EXPECT_EQ(got_sa, want_sa) << k;
    EXPECT_FALSE(iv.transform_ca);
    for (const auto& [a, t] : iv.replace_f) EXPECT_EQ(t, ctx.traces.at(k).f.at(a));
    for (const auto& [a, t] : iv.replace_sa) EXPECT_EQ(t, ctx.traces.at(k).sa.at(a));
  }
  ReferenceContext broken = ctx;
  broken.traces.at(0).sa.clear();
  EXPECT_THROW(build_interventions(broken, 0, u.schedule), ConsistencyError);
}

TEST(Reference, StreamingMatchesPrecomputed) {
  Bench u;
  for (ReferenceMode mode : {ReferenceMode::shared_noise, ReferenceMode::ddim_inversion}) {
    u.opt.mode = mode;
    const ReferenceContext ctx = prepare_reference(u.sc.reference.image, 4, u.s, u.net, u.schedule, u.opt);
    const StreamingReference stream(u.sc.reference.image, 4, u.s, u.net, u.schedule, u.opt);
    for (int k = 0; k < u.s.sampling_steps; ++k) {
      const InterventionSet a = build_interventions(ctx, k, u.schedule);
      const InterventionSet b = stream.interventions(k);
      EXPECT_TRUE(a.replace_f == b.replace_f) << to_string(mode) << " step " << k;
      EXPECT_TRUE(a.replace_sa == b.replace_sa) << to_string(mode) << " step " << k;
    }
  }
}

TEST(Reference, ModesDifferAndAreDeterministic) {
  Bench u;
  const ReferenceContext a = prepare_reference(u.sc.reference.image, 4, u.s, u.net, u.schedule, u.opt);
  EXPECT_EQ(a, prepare_reference(u.sc.reference.image, 4, u.s, u.net, u.schedule, u.opt));
  EXPECT_NE(a.traces, prepare_reference(u.sc.reference.image, 5, u.s, u.net, u.schedule, u.opt).traces);
  u.opt.mode = ReferenceMode::ddim_inversion;
  const ReferenceContext inv = prepare_reference(u.sc.reference.image, 4, u.s, u.net, u.schedule, u.opt);
  EXPECT_EQ(inv.z0, a.z0);
  EXPECT_NE(inv.traces, a.traces);
  for (const auto& [k, tr] : inv.traces)
    for (const auto& [_, t] : tr.f) EXPECT_TRUE(t.all_finite());
}

TEST(Reference, CacheRoundTripAndKeyCheck) {
  Bench u;
  fe_test::TempDir dir;
  const ReferenceContext ctx = prepare_reference(u.sc.reference.image, 4, u.s, u.net, u.schedule, u.opt);
  const std::uint64_t key = reference_cache_key(u.sc.reference.image, 4, u.schedule, u.opt.mode, u.net.weights());
  save_reference(dir / "ref.bin", ctx, key);
  EXPECT_EQ(load_reference(dir / "ref.bin", key), ctx);
  EXPECT_THROW(load_reference(dir / "ref.bin", key + 1), ConsistencyError);
  EXPECT_THROW(load_reference(dir / "missing.bin", key), IoError);
  EXPECT_NE(key, reference_cache_key(u.sc.reference.image, 5, u.schedule, u.opt.mode, u.net.weights()));
  EXPECT_NE(key, reference_cache_key(u.sc.reference.image, 4, default_schedule(13), u.opt.mode, u.net.weights()));
  EXPECT_NE(key, reference_cache_key(u.sc.reference.image, 4, u.schedule, u.opt.mode, fe_test::toy_net(8).weights()));
}

// Generation trace equals the reference trace at every scheduled (site, step)
// and is left alone elsewhere.
TEST(Injection, GenerationTraceEqualsReferenceOnSchedule) {
  Bench u;
  RunConfig cfg;
  cfg.sampling_steps = 12;
  cfg.guidance.guidance_steps = 3;
  cfg.seed = 17;
  const PromptEmbedding prompt = embed_prompt(u.sc.target.token_ids, u.net.text_encoder());
  const ReferenceContext ctx = reference_for(u.sc.reference.image, cfg, u.net, u.s);

  PipelineObserver obs;
  for (const LayerInfo& l : u.net.layers()) {
    obs.record.emplace(l.address, Quantity::f);
    if (l.attention) obs.record.emplace(l.address, Quantity::sa);
  }
  std::map<int, AttentionTrace> gen;
  obs.on_trace = [&](int k, const AttentionTrace& tr) { gen[k] = tr; };
  customize(u.sc.reference.image, u.sc.entities, prompt, cfg, u.net, u.s, &ctx, {false, &obs});
  ASSERT_EQ(gen.size(), 12u);

  int equal = 0;
  for (int k = 0; k < 12; ++k) {
    const InterventionSet iv = build_interventions(ctx, k, u.schedule);
    for (const auto& [a, t] : gen[k].f) {
      if (iv.replace_f.count(a)) {
        EXPECT_EQ(t, ctx.traces.at(k).f.at(a)) << to_string(a) << " step " << k;
        ++equal;
      }
    }
    for (const auto& [a, t] : gen[k].sa) {
      if (iv.replace_sa.count(a)) {
        EXPECT_EQ(t, ctx.traces.at(k).sa.at(a)) << to_string(a) << " step " << k;
        ++equal;
      }
    }
  }
  EXPECT_EQ(equal, 12 + 6 * 8);
}
