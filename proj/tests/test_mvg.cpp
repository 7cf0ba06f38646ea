#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "support.hpp"

using namespace rfedit;

namespace {

struct EditRig {
  ScenarioConfig cfg = standard_preset();
  MixtureField field = cfg.make_field();
  Schedule sched = cfg.schedule.build();
  Vec x;
  DnaTrace trace;

  explicit EditRig(std::uint64_t seed) {
    RngStream rng(seed);
    x = sample_mixture(cfg.mixtures.at(cfg.src_cond.mixture), rng);
    trace = dna_invert(x, field, cfg.src(), sched, rng);
    field.reset_nfe();
  }

  EditConfig edit(double eta, std::size_t t_start, bool offsets = true, bool mvg = true) const {
    EditConfig e = cfg.edit_config();
    e.eta = eta;
    e.t_start = t_start;
    e.use_res_offset = offsets;
    e.use_mvg = mvg;
    return e;
  }
};

}  // namespace

TEST(MvgEdit, IdentityEditReturnsSource) {
  EditRig s(3);
  for (std::size_t ts : {0u, 5u, 27u}) {
    EditConfig e = s.edit(1.0, ts);
    e.tgt_cond = e.src_cond;
    const EditResult r = mvg_edit(s.trace, s.x, s.field, e, s.sched);
    EXPECT_LE(testsupport::rel_err(r.edited, s.x), 1e-6) << "t_s=" << ts;
    EXPECT_EQ(r.edit_traj.size(), 28 - ts + 1);
    EXPECT_EQ(r.mvg_traj.size(), 28 - ts + 1);
  }
}

TEST(MvgEdit, ParallelogramAccumulation) {
  EditRig s(4);
  const EditResult r = mvg_edit(s.trace, s.x, s.field, s.edit(1.0, 0), s.sched);
  Vec acc = Vec::Zero(s.x.size());
  for (std::size_t t = 0; t <= 28; ++t) {
    EXPECT_LE((r.edit_traj[t] - s.trace.latents[t] - acc).cwiseAbs().maxCoeff(), 1e-6) << "t=" << t;
    if (t < 28) acc += r.delta_v_series[t] * s.sched.step(t);
  }
}

TEST(MvgEdit, OffsetsHelpWithoutGuidance) {
  std::vector<double> plain, offset;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EditRig s(seed);
    const EditScenario sc = s.cfg.edit_scenario(s.x);
    const std::size_t ts = s.cfg.edit.t_start;
    plain.push_back(background_mse(mvg_edit(s.trace, s.x, s.field, s.edit(1.0, ts, false, false), s.sched).edited, sc));
    offset.push_back(background_mse(mvg_edit(s.trace, s.x, s.field, s.edit(1.0, ts, true, false), s.sched).edited, sc));
  }
  EXPECT_GT(testsupport::mean_of(plain), testsupport::mean_of(offset));
}

TEST(MvgEdit, CountsOnlyTargetEvaluations) {
  EditRig s(5);
  for (std::size_t ts : {0u, 4u, 20u}) {
    s.field.reset_nfe();
    const EditResult r = mvg_edit(s.trace, s.x, s.field, s.edit(0.8, ts), s.sched);
    EXPECT_EQ(r.nfe, 28 - ts);
    EXPECT_EQ(s.field.nfe(), 28 - ts);
  }
}

TEST(MvgEdit, EtaOneIgnoresTheReference) {
  EditRig s(6);
  EditConfig e = s.edit(1.0, 4);
  const Vec a = mvg_edit(s.trace, s.x, s.field, e, s.sched).edited;
  e.mvg_init = Vec::Constant(s.x.size(), 123.0);
  EXPECT_EQ(mvg_edit(s.trace, s.x, s.field, e, s.sched).edited, a);
}

TEST(MvgEdit, IdentityTargetReproducesSourceVelocity) {
  // At η = 1 the edit stays on the inversion latents, so every step queries the
  // same point as the inversion did. Below 1 the guidance pulls Z_edit off
  // those latents after the first step; only that step is still pinned.
  EditRig s(7);
  EditConfig e = s.edit(1.0, 0);
  e.tgt_cond = e.src_cond;
  const EditResult r = mvg_edit(s.trace, s.x, s.field, e, s.sched);
  for (std::size_t t = 0; t < 28; ++t) {
    EXPECT_LE((r.v_tgt_series[t] - s.trace.src_velocities[t]).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
    EXPECT_LE(r.delta_v_series[t].cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((r.mvg_traj[t + 1] - s.x).cwiseAbs().maxCoeff(), 1e-10);
  }
  e.eta = 0.5;
  const EditResult half = mvg_edit(s.trace, s.x, s.field, e, s.sched);
  EXPECT_LE((half.v_tgt_series[0] - s.trace.src_velocities[0]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MvgEdit, BlendIsAffineInEta) {
  EditRig s(8);
  std::vector<Vec> v;
  for (double eta : {0.2, 0.5, 0.9}) v.push_back(mvg_edit(s.trace, s.x, s.field, s.edit(eta, 4), s.sched).v_edit_series[0]);
  // Equal spacing is not needed: v(η) on a line means v(0.5) = v(0.2) + (0.3/0.7)(v(0.9) − v(0.2)).
  EXPECT_LE((v[1] - v[0] - (0.3 / 0.7) * (v[2] - v[0])).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MvgEdit, LowEtaFollowsTheReference) {
  // The guidance velocity points toward the mobile reference, so weakening the
  // target term must bring the output closer to where the reference ends up.
  double gap_full = 0.0, gap_guided = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EditRig s(seed);
    const EditResult a = mvg_edit(s.trace, s.x, s.field, s.edit(1.0, 4), s.sched);
    const EditResult b = mvg_edit(s.trace, s.x, s.field, s.edit(0.0, 4), s.sched);
    gap_full += (a.edited - a.mvg_traj.back()).norm();
    gap_guided += (b.edited - b.mvg_traj.back()).norm();
  }
  EXPECT_LT(gap_guided, gap_full);
}

TEST(MvgEdit, RejectsBadConfigs) {
  EditRig s(9);
  EXPECT_THROW(mvg_edit(s.trace, s.x, s.field, s.edit(1.2, 0), s.sched), InvalidConfig);
  EXPECT_THROW(mvg_edit(s.trace, s.x, s.field, s.edit(-0.1, 0), s.sched), InvalidConfig);
  EXPECT_THROW(mvg_edit(s.trace, s.x, s.field, s.edit(0.8, 28), s.sched), InvalidConfig);
  EXPECT_THROW(mvg_edit(s.trace, s.x, s.field, s.edit(0.8, 0), make_schedule(27)), ScheduleMismatch);
}

TEST(EtaSweep, SingleEtaMatchesSingleEdit) {
  EditRig s(10);
  const auto sweep = eta_sweep(s.trace, s.x, s.field, s.edit(0.3, 4), s.sched, {1.0});
  ASSERT_EQ(sweep.size(), 1u);
  EXPECT_EQ(sweep[0].edited, mvg_edit(s.trace, s.x, s.field, s.edit(1.0, 4), s.sched).edited);
}

TEST(EtaSweep, RepeatedEtaRepeatsResult) {
  EditRig s(11);
  const auto sweep = eta_sweep(s.trace, s.x, s.field, s.edit(0.8, 4), s.sched, {0.7, 0.7});
  EXPECT_EQ(sweep[0].edited, sweep[1].edited);
  EXPECT_EQ(sweep[0].edit_traj, sweep[1].edit_traj);
}

TEST(EtaSweep, BackgroundErrorFallsWithEta) {
  const std::vector<double> etas{1.0, 0.9, 0.8, 0.7};
  std::vector<double> mean(etas.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EditRig s(seed);
    const EditScenario sc = s.cfg.edit_scenario(s.x);
    const auto sweep = eta_sweep(s.trace, s.x, s.field, s.cfg.edit_config(), s.sched, etas);
    for (std::size_t i = 0; i < etas.size(); ++i) mean[i] += background_mse(sweep[i].edited, sc) / 20.0;
  }
  for (std::size_t i = 0; i + 1 < etas.size(); ++i) EXPECT_LE(mean[i + 1], mean[i]) << "eta=" << etas[i + 1];
}

TEST(EtaSweep, RejectsBadEtas) {
  EditRig s(12);
  EXPECT_THROW(eta_sweep(s.trace, s.x, s.field, s.edit(0.8, 0), s.sched, {}), InvalidConfig);
  EXPECT_THROW(eta_sweep(s.trace, s.x, s.field, s.edit(0.8, 0), s.sched, {0.5, 1.5}), InvalidConfig);
}
