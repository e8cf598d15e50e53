#include <gtest/gtest.h>

#include <limits>

#include "freeevent/errors.hpp"
#include "freeevent/pipeline.hpp"
#include "freeevent/toy_data.hpp"
#include "support.hpp"

using namespace freeevent;

namespace {

struct Scene {
  UNet net = fe_test::toy_net(12);
  ToyScenario sc = toy_ablation_scenario();
  PromptEmbedding prompt = embed_prompt(sc.target.token_ids, net.text_encoder());
  RunConfig cfg = [] {
    RunConfig c;
    c.sampling_steps = 10;
    c.guidance.guidance_steps = 4;
    c.guidance.eta = 1e-3;
    c.seed = 99;
    return c;
  }();

  GenerationResult go(const RunConfig& c, const GenerationOptions& o = {}) const {
    return customize(sc.reference.image, sc.entities, prompt, c, net, c.noise_schedule(), nullptr, o);
  }
};

}  // namespace

TEST(Pipeline, FixedSeedIsByteIdentical) {
  Scene r;
  const GenerationResult a = r.go(r.cfg), b = r.go(r.cfg);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.z0, b.z0);
  RunConfig other = r.cfg;
  other.seed = 100;
  EXPECT_NE(r.go(other).z0, a.z0);
}

TEST(Pipeline, AllTogglesOffEqualsBaseline) {
  Scene r;
  RunConfig off = r.cfg;
  off.toggles = parse_toggle_set("all-off");
  const GenerationResult a = r.go(off);
  const GenerationResult b = generate_baseline(r.prompt, r.cfg, r.net, r.cfg.noise_schedule());
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.z0, b.z0);
}

TEST(Pipeline, EachToggleChangesTheResult) {
  Scene r;
  const GenerationResult full = r.go(r.cfg);
  for (const char* name : {"no-guidance", "no-regulation", "no-injection"}) {
    RunConfig c = r.cfg;
    c.toggles = parse_toggle_set(name);
    EXPECT_NE(r.go(c).z0, full.z0) << name;
  }
}

TEST(Pipeline, RecordingDoesNotChangeOutput) {
  Scene r;
  const GenerationResult plain = r.go(r.cfg);
  PipelineObserver obs;
  for (const LayerInfo& l : r.net.layers()) {
    obs.record.emplace(l.address, Quantity::f);
    if (l.attention) {
      obs.record.emplace(l.address, Quantity::sa);
      obs.record.emplace(l.address, Quantity::ca);
    }
  }
  int traces = 0;
  obs.on_trace = [&](int, const AttentionTrace& tr) { traces += !tr.empty(); };
  const GenerationResult traced = r.go(r.cfg, {true, &obs});
  EXPECT_EQ(traces, r.cfg.sampling_steps);
  EXPECT_EQ(traced.image, plain.image);
  EXPECT_EQ(traced.z0, plain.z0);
}

TEST(Pipeline, StreamingAndCachedContextMatch) {
  Scene r;
  const GenerationResult a = r.go(r.cfg);
  RunConfig st = r.cfg;
  st.streaming = true;
  EXPECT_EQ(r.go(st).z0, a.z0);
  const NoiseSchedule s = r.cfg.noise_schedule();
  const ReferenceContext ctx = reference_for(r.sc.reference.image, r.cfg, r.net, s);
  EXPECT_EQ(customize(r.sc.reference.image, r.sc.entities, r.prompt, r.cfg, r.net, s, &ctx).z0, a.z0);
}

TEST(Pipeline, AblateMatchesIndividualRuns) {
  Scene r;
  const std::vector<Toggles> sets{parse_toggle_set("all-on"), parse_toggle_set("no-injection")};
  const auto out = ablate(r.sc.reference.image, r.sc.entities, r.prompt, r.cfg, sets, r.net);
  ASSERT_EQ(out.size(), 2u);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    RunConfig c = r.cfg;
    c.toggles = sets[i];
    EXPECT_EQ(out[i].z0, r.go(c).z0);
  }
}

TEST(Pipeline, GuidanceObserverSeesSigmaScaledStep) {
  Scene r;
  PipelineObserver obs;
  int calls = 0;
  obs.on_guidance = [&](int k, const LatentTensor& before, const LatentTensor& after, double energy) {
    EXPECT_LT(k, r.cfg.guidance.guidance_steps);
    EXPECT_GE(energy, 0.0);
    EXPECT_TRUE(after.all_finite());
    EXPECT_NE(before, after);
    ++calls;
  };
  r.go(r.cfg, {false, &obs});
  EXPECT_EQ(calls, r.cfg.guidance.guidance_steps);
}

TEST(Pipeline, InitialLatentIsStandardNormalStream) {
  const LatentTensor a = initial_latent(5, {3, 8, 8});
  EXPECT_EQ(a, initial_latent(5, {3, 8, 8}));
  EXPECT_NE(a, initial_latent(6, {3, 8, 8}));
  EXPECT_NE(reference_seed(5), 5u);
}

TEST(Pipeline, UsageErrors) {
  Scene r;
  EXPECT_THROW(customize(r.sc.reference.image, {}, r.prompt, r.cfg, r.net, r.cfg.noise_schedule()), ParameterError);
  RunConfig bad = r.cfg;
  bad.guidance.guidance_steps = 11;
  EXPECT_THROW(r.go(bad), ParameterError);
  bad = r.cfg;
  bad.guidance.eta = -1;
  EXPECT_THROW(r.go(bad), ParameterError);
  bad = r.cfg;
  bad.self_attn_sites = parse_sites("dec0:0@0-1");
  EXPECT_THROW(r.go(bad), AddressError);
}

TEST(Pipeline, StepErrorsNameTheStep) {
  Scene r;
  RunConfig huge = r.cfg;
  huge.guidance.eta = std::numeric_limits<double>::max();
  try {
    r.go(huge);
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::numeric);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}
