#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace rfedit;
using testsupport::cond;

namespace {

double dispersion(const std::vector<Vec>& outputs) {
  Vec mean = Vec::Zero(outputs.front().size());
  for (const Vec& v : outputs) mean += v;
  mean /= static_cast<double>(outputs.size());
  double ss = 0.0;
  for (const Vec& v : outputs) ss += (v - mean).squaredNorm();
  return std::sqrt(ss / static_cast<double>(outputs.size() - 1));
}

}  // namespace

TEST(BaselineKind, Names) {
  EXPECT_EQ(to_string(BaselineKind::fixed_noise), "fixed_noise");
  EXPECT_EQ(to_string(BaselineKind::flowedit_iid), "flowedit_iid");
  EXPECT_EQ(to_string(BaselineKind::flowedit_aligned), "flowedit_aligned");
  EXPECT_EQ(to_string(BaselineKind::midpoint_inversion), "midpoint_inversion");
  EXPECT_EQ(to_string(BaselineKind::vanilla), "vanilla");
}

TEST(FixedNoise, StraightLineFieldMatchesAlignment) {
  const Vec x = (Vec(3) << 1.0, 0.0, -2.0).finished();
  const auto field = fixed_test_field(testing_fields::LinearTo{x});
  const Schedule sched = make_schedule(10);
  RngStream a(6), b(6);
  const DnaTrace fixed = fixed_noise_invert(x, *field, cond(), sched, a);
  const DnaTrace dna = dna_invert(x, *field, cond(), sched, b);
  for (std::size_t t = 0; t <= 10; ++t) EXPECT_LE((fixed.latents[t] - dna.latents[t]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FixedNoise, DeterministicAndCounted) {
  RngStream r(1);
  const GaussianMixture mix = testsupport::random_mixture(r, 4, 2);
  const MixtureField field = testsupport::single_field(mix);
  const Schedule sched = make_schedule(12);
  const Vec x = sample_mixture(mix, r);
  RngStream a(5), b(5);
  const DnaTrace ta = fixed_noise_invert(x, field, cond(), sched, a);
  const DnaTrace tb = fixed_noise_invert(x, field, cond(), sched, b);
  EXPECT_EQ(ta.latents, tb.latents);
  EXPECT_EQ(ta.nfe, 12u);
  EXPECT_EQ(as_trajectory(ta).states, ta.latents);
}

TEST(FixedNoise, ReconstructsWorseThanAlignment) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  std::vector<double> fixed, dna_plain;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    const Vec x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), rng);
    RngStream a = rng, b = rng;
    const DnaTrace f = fixed_noise_invert(x, field, cfg.src(), sched, a);
    fixed.push_back(mse(euler_forward(f.latents.front(), 0, field, cfg.src(), sched).terminal(), x));
    const DnaTrace d = dna_invert(x, field, cfg.src(), sched, b);
    dna_plain.push_back(mse(reconstruct(d, field, cfg.src(), sched, false), x));
  }
  EXPECT_GE(testsupport::mean_of(fixed), testsupport::mean_of(dna_plain));
}

TEST(FlowEdit, AlignedIdentityEditReturnsSource) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  RngStream rng(2);
  const Vec x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), rng);
  const DnaTrace trace = dna_invert(x, field, cfg.src(), sched, rng);
  const FlowEditResult r = flowedit(x, field, cfg.src(), cfg.src(), sched, rng, &trace);
  EXPECT_LE(testsupport::rel_err(r.edited, x), 1e-6);
}

TEST(FlowEdit, AlignedModeEqualsEtaOneEdit) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed);
    const Vec x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), rng);
    const DnaTrace trace = dna_invert(x, field, cfg.src(), sched, rng);
    EditConfig e = cfg.edit_config();
    e.eta = 1.0;
    e.t_start = 0;
    e.use_res_offset = true;
    const EditResult m = mvg_edit(trace, x, field, e, sched);
    field.reset_nfe();
    const FlowEditResult f = flowedit(x, field, cfg.src(), cfg.tgt(), sched, rng, &trace);
    EXPECT_EQ(f.nfe, 28u) << "aligned mode reuses the source velocities";
    EXPECT_LE(testsupport::rel_err(f.edited, m.edited), 1e-6) << "seed=" << seed;
    for (std::size_t t = 0; t < 28; ++t) {
      EXPECT_LE(((f.tgt_points[t] - f.src_points[t]) - (f.fe_series[t] - x)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(FlowEdit, FreshNoiseDisperses) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  RngStream src_rng(1234);
  const Vec x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), src_rng);
  std::vector<Vec> iid, aligned;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream a(seed), b(seed);
    field.reset_nfe();
    iid.push_back(flowedit(x, field, cfg.src(), cfg.tgt(), sched, a).edited);
    EXPECT_EQ(field.nfe(), 56u);
    const DnaTrace trace = dna_invert(x, field, cfg.src(), sched, b);
    aligned.push_back(flowedit(x, field, cfg.src(), cfg.tgt(), sched, b, &trace).edited);
  }
  const double d_iid = dispersion(iid), d_aligned = dispersion(aligned);
  RecordProperty("dispersion_iid", std::to_string(d_iid));
  RecordProperty("dispersion_aligned", std::to_string(d_aligned));
  EXPECT_GT(d_iid, d_aligned);
}

TEST(FlowEdit, ScheduleMismatchThrows) {
  const auto field = fixed_test_field(testing_fields::Zero{});
  RngStream rng(0);
  const DnaTrace trace = dna_invert(Vec::Zero(2), *field, cond(), make_schedule(8), rng);
  EXPECT_THROW(flowedit(Vec::Zero(2), *field, cond(), cond(), make_schedule(9), rng, &trace), ScheduleMismatch);
}

TEST(Midpoint, ConstantFieldIsExact) {
  const Vec c = (Vec(2) << -0.5, 2.0).finished();
  const auto field = fixed_test_field(testing_fields::Constant{c});
  const Schedule sched = make_schedule(14);
  const Vec x = (Vec(2) << 1.0, 1.0).finished();
  const Trajectory inv = midpoint_invert(x, *field, cond(), sched);
  const Trajectory van = vanilla_invert(x, *field, cond(), sched);
  EXPECT_LE((inv.initial() - van.initial()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((midpoint_forward(inv.initial(), *field, cond(), sched).terminal() - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Midpoint, TwoEvaluationsPerStep) {
  const auto field = fixed_test_field(testing_fields::Zero{});
  for (std::size_t T : {1u, 7u, 28u}) {
    EXPECT_EQ(midpoint_invert(Vec::Zero(3), *field, cond(), make_schedule(T)).nfe, 2 * T);
    EXPECT_EQ(midpoint_forward(Vec::Zero(3), *field, cond(), make_schedule(T)).nfe, 2 * T);
  }
}

TEST(Midpoint, SitsBetweenVanillaAndAlignment) {
  const ScenarioConfig cfg = standard_preset();
  const MixtureField field = cfg.make_field();
  const Schedule sched = cfg.schedule.build();
  std::vector<double> mid, van, dna;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    const Vec x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), rng);
    const Trajectory m = midpoint_invert(x, field, cfg.src(), sched);
    mid.push_back(mse(midpoint_forward(m.initial(), field, cfg.src(), sched).terminal(), x));
    const Trajectory v = vanilla_invert(x, field, cfg.src(), sched);
    van.push_back(mse(euler_forward(v.initial(), 0, field, cfg.src(), sched).terminal(), x));
    const DnaTrace d = dna_invert(x, field, cfg.src(), sched, rng);
    dna.push_back(mse(reconstruct(d, field, cfg.src(), sched, true), x));
  }
  EXPECT_LT(testsupport::mean_of(mid), testsupport::mean_of(van));
  EXPECT_GT(testsupport::mean_of(mid), testsupport::mean_of(dna));
}
