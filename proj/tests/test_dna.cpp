#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace rfedit;
using testsupport::cond;

namespace {

struct Fixture {
  GaussianMixture mix;
  MixtureField field;
  Schedule sched;
  Vec x;
  DnaTrace trace;
};

Fixture make_fixture(std::uint64_t seed, Eigen::Index d, std::size_t K, std::size_t T) {
  RngStream rng(seed);
  GaussianMixture mix = testsupport::random_mixture(rng, d, K);
  MixtureField field = testsupport::single_field(mix);
  Schedule sched = make_schedule(T);
  Vec x = sample_mixture(mix, rng);
  DnaTrace trace = dna_invert(x, field, cond(), sched, rng);
  return Fixture{std::move(mix), std::move(field), std::move(sched), std::move(x), std::move(trace)};
}

}  // namespace

TEST(DnaStep, HandEvaluatedSingleStep) {
  const MixtureField field = testsupport::single_field(GaussianMixture::isotropic(Vec::Zero(1), 1.0));
  const DnaStep s = dna_step(Vec::Constant(1, 0.5), Vec::Constant(1, 0.2), 0.0, 1.0, field, cond());
  EXPECT_NEAR(s.z_star[0], 0.2, 1e-15);
  EXPECT_NEAR(s.v_src[0], -0.2, 1e-15);
  EXPECT_NEAR(s.delta_v[0], 0.5, 1e-15);
  EXPECT_NEAR(s.s_t[0], 0.7, 1e-15);
  EXPECT_NEAR(s.z_t[0], 0.7, 1e-15);
  EXPECT_NEAR(s.offset[0], -0.5, 1e-15);
  EXPECT_EQ(field.nfe(), 1u);
}

TEST(DnaStep, StraightLineFieldIsAFixedPoint) {
  const Vec x0 = (Vec(3) << 1.0, -0.5, 2.0).finished();
  const Vec s = (Vec(3) << 0.3, 0.1, -0.7).finished();
  const auto field = fixed_test_field(testing_fields::LinearTo{x0});
  const double hi = 0.6, lo = 0.45;
  const Vec z_next = hi * x0 + (1 - hi) * s;
  const DnaStep step = dna_step(z_next, s, lo, hi, *field, cond());
  EXPECT_LE(step.delta_v.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((step.s_t - s).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((step.z_t - step.z_star).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE(step.offset.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DnaStep, StepIdentities) {
  RngStream rng(5);
  const GaussianMixture mix = testsupport::random_mixture(rng, 4, 3);
  const MixtureField field = testsupport::single_field(mix);
  for (int i = 0; i < 20; ++i) {
    const Vec z_next = sample_standard_normal(rng, 4), s_next = sample_standard_normal(rng, 4);
    const double hi = 0.05 + 0.95 * rng.uniform();
    const double lo = hi * rng.uniform();
    const DnaStep s = dna_step(z_next, s_next, lo, hi, field, cond());
    const double h = hi - lo;
    EXPECT_LE(((z_next - s.z_t) / h - s.v_src).cwiseAbs().maxCoeff(), 1e-12 * (1 + s.v_src.cwiseAbs().maxCoeff() / h));
    EXPECT_LE((s.z_t - s.z_star - s.delta_v * h).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(((z_next - s.s_t) / hi - s.v_src).cwiseAbs().maxCoeff(), 1e-12 / hi * (1 + z_next.norm() + s.s_t.norm()));
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double denom = s.z_t[j] - s.z_star[j];
      if (std::abs(denom) < 1e-8) continue;
      EXPECT_NEAR((s.s_t[j] - s_next[j]) / denom / (hi / h), 1.0, 1e-9);
    }
  }
}

TEST(DnaStep, RejectsDegenerateSteps) {
  const auto field = fixed_test_field(testing_fields::Zero{});
  EXPECT_THROW(dna_step(Vec::Zero(2), Vec::Zero(2), 0.5, 0.5, *field, cond()), DegenerateStep);
  EXPECT_THROW(dna_step(Vec::Zero(2), Vec::Zero(2), 0.6, 0.5, *field, cond()), DegenerateStep);
  EXPECT_THROW(dna_step(Vec::Zero(2), Vec::Zero(2), -0.1, 0.5, *field, cond()), DegenerateStep);
}

TEST(DnaInvert, Deterministic) {
  const Fixture a = make_fixture(9, 4, 3, 12);
  const Fixture b = make_fixture(9, 4, 3, 12);
  EXPECT_EQ(a.trace.s_series, b.trace.s_series);
  EXPECT_EQ(a.trace.latents, b.trace.latents);
  EXPECT_EQ(a.trace.offsets, b.trace.offsets);
}

TEST(DnaInvert, StraightLineFieldLeavesNoiseAlone) {
  const Vec x = (Vec(2) << 1.0, -1.0).finished();
  const auto field = fixed_test_field(testing_fields::LinearTo{x});
  RngStream rng(3);
  const DnaTrace trace = dna_invert(x, *field, cond(), make_schedule(10), rng);
  for (const Vec& s : trace.s_series) EXPECT_LE((s - trace.s_series.back()).cwiseAbs().maxCoeff(), 1e-13);
  for (const Vec& o : trace.offsets) EXPECT_LE(o.cwiseAbs().maxCoeff(), 1e-13);
}

TEST(DnaInvert, TraceInvariants) {
  const Fixture f = make_fixture(17, 8, 3, 28);
  const DnaTrace& tr = f.trace;
  ASSERT_EQ(tr.steps(), 28u);
  EXPECT_EQ(tr.nfe, 28u);
  EXPECT_EQ(tr.latents.back(), f.x);
  for (std::size_t t = 0; t < 28; ++t) {
    const double lo = f.sched[t], hi = f.sched[t + 1];
    const Vec z_star = interpolate_latent(tr.latents[t + 1], tr.s_series[t + 1], lo, hi);
    EXPECT_LE((tr.offsets[t] - (z_star - tr.latents[t])).cwiseAbs().maxCoeff(), 1e-12);
    const Vec v = (tr.latents[t + 1] - tr.latents[t]) / (hi - lo);
    EXPECT_LE((v - tr.src_velocities[t]).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((tr.s_series[t] - tr.s_series[t + 1] - tr.delta_v[t] * hi).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(DnaInvert, PlainReconstructionBeatsVanillaRoundTrip) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  const GaussianMixture& mix = cfg.mixtures.at(cfg.src_cond.mixture);
  std::vector<double> dna, vanilla;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    const Vec x = sample_mixture(mix, rng);
    const DnaTrace trace = dna_invert(x, field, cfg.src(), sched, rng);
    dna.push_back(mse(reconstruct(trace, field, cfg.src(), sched, false), x));
    const Trajectory inv = vanilla_invert(x, field, cfg.src(), sched);
    vanilla.push_back(mse(euler_forward(inv.initial(), 0, field, cfg.src(), sched).terminal(), x));
  }
  EXPECT_LT(testsupport::mean_of(dna), testsupport::mean_of(vanilla));
}

TEST(Reconstruct, OffsetsMakeItExact) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (std::size_t T : {8u, 28u, 100u}) {
      const Fixture f = make_fixture(seed, seed % 2 ? 16 : 3, seed % 3 ? 3 : 1, T);
      f.field.reset_nfe();
      const Vec out = reconstruct(f.trace, f.field, cond(), f.sched, true);
      EXPECT_LE(testsupport::rel_err(out, f.x), 1e-6) << "seed=" << seed << " T=" << T;
      EXPECT_EQ(f.field.nfe(), T);
    }
  }
}

TEST(Reconstruct, StraightLineFieldIsExactEitherWay) {
  const Vec x = (Vec(3) << 0.5, 2.0, -1.0).finished();
  const auto field = fixed_test_field(testing_fields::LinearTo{x});
  const Schedule sched = make_schedule(16);
  RngStream rng(4);
  const DnaTrace trace = dna_invert(x, *field, cond(), sched, rng);
  EXPECT_LE(testsupport::rel_err(reconstruct(trace, *field, cond(), sched, true), x), 1e-12);
  EXPECT_LE(testsupport::rel_err(reconstruct(trace, *field, cond(), sched, false), x), 1e-12);
}

TEST(Reconstruct, WithoutOffsetsIsWorse) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  std::vector<double> plain, exact;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    const Vec x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), rng);
    const DnaTrace trace = dna_invert(x, field, cfg.src(), sched, rng);
    plain.push_back(mse(reconstruct(trace, field, cfg.src(), sched, false), x));
    exact.push_back(mse(reconstruct(trace, field, cfg.src(), sched, true), x));
  }
  EXPECT_GT(testsupport::mean_of(plain), testsupport::mean_of(exact));
}

TEST(Reconstruct, ScheduleMismatchThrows) {
  const Fixture f = make_fixture(1, 2, 1, 8);
  EXPECT_THROW(reconstruct(f.trace, f.field, cond(), make_schedule(9), true), ScheduleMismatch);
  EXPECT_THROW(reconstruct(f.trace, f.field, cond(), make_schedule(8, Spacing::shifted, 2.0), true), ScheduleMismatch);
}

TEST(Reconstruct, SignFlipBreaksExactness) {
  RngStream rng(8);
  const GaussianMixture mix = testsupport::random_mixture(rng, 4, 3);
  const MixtureField field = testsupport::single_field(mix);
  const Schedule sched = make_schedule(28);
  const Vec x = sample_mixture(mix, rng);
  DnaOptions flip;
  flip.flip_linear_sign = true;
  const DnaTrace trace = dna_invert(x, field, cond(), sched, rng, flip);
  EXPECT_GT(testsupport::rel_err(reconstruct(trace, field, cond(), sched, true), x), 1e-3);
}

TEST(NoiseDeltaFrames, EmptyWhenStrideCoversSchedule) {
  const Fixture f = make_fixture(2, 3, 2, 8);
  EXPECT_TRUE(noise_delta_frames(f.trace, 8).empty());
  EXPECT_TRUE(noise_delta_frames(f.trace, 20).empty());
  EXPECT_EQ(noise_delta_frames(f.trace, 3).size(), 6u);
  EXPECT_THROW(noise_delta_frames(f.trace, 0), InvalidConfig);
}

TEST(NoiseDeltaFrames, StraightLineFieldGivesZeroFrames) {
  const Vec x = Vec::Constant(3, 0.7);
  const auto field = fixed_test_field(testing_fields::LinearTo{x});
  RngStream rng(1);
  const DnaTrace trace = dna_invert(x, *field, cond(), make_schedule(12), rng);
  for (const Vec& v : noise_delta_frames(trace, 3)) EXPECT_LE(v.cwiseAbs().maxCoeff(), 1e-13);
}

TEST(NoiseDeltaFrames, AlignedStridesTelescope) {
  const Fixture f = make_fixture(4, 6, 3, 28);
  const Vec total = f.trace.s_series.front() - f.trace.s_series.back();
  for (std::size_t stride : {1u, 4u, 7u, 14u}) {
    const auto frames = noise_delta_frames(f.trace, stride);
    Vec sum = Vec::Zero(6);
    for (std::size_t t = 0; t < frames.size(); t += stride) sum += frames[t];
    EXPECT_LE((sum - total).cwiseAbs().maxCoeff(), 1e-12) << "stride=" << stride;
  }
}

TEST(AlignmentCoefficients, ReachOneAtTheNoiseEnd) {
  const auto c = alignment_coefficients(make_schedule(4));
  ASSERT_EQ(c.size(), 4u);
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_DOUBLE_EQ(c[3], 0.25);
}
