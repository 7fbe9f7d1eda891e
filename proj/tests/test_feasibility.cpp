#include "cranbf/feasibility.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "support/test_util.hpp"

using namespace cranbf;
using cranbf::test::random_feasible_beamformers;

namespace {

Scenario tiny_scenario() {
  Scenario s = Scenario::desk_instance();
  s.n_rrh = 2;
  s.n_iu = 2;
  s.n_eu = 1;
  s.n_group = 2;
  s.ant_center = 2;
  s.ant_rrh = 2;
  s.ant_iu = 2;
  s.ant_eu = 2;
  s.streams_access = 1;
  s.streams_fronthaul = 1;
  s.finish_defaults(30.0, 1e-8);
  s.noise_access_w = 0.5;
  s.noise_fronthaul_w = 0.25;
  s.power_center_w = 8.0;
  s.power_rrh_w = {2.0, 2.0};
  s.rho1 = 2.0;
  s.rho2 = 1.0;
  s.eh = EhParams{5.0, 1.0, 0.1, 10.0};
  s.energy_min_w = {0.5};
  s.require_valid();
  return s;
}

ChannelSet unit_channels(const Scenario& s, unsigned seed) {
  std::mt19937_64 rng(seed);
  ChannelSet ch;
  for (int k = 0; k < s.n_iu; ++k)
    ch.h.push_back(cranbf::test::random_complex(s.ant_iu, s.mn(), rng, 1.0));
  for (int q = 0; q < s.n_eu; ++q)
    ch.f.push_back(cranbf::test::random_complex(s.ant_eu, s.mn(), rng, 1.0));
  for (int n = 0; n < s.n_rrh; ++n)
    ch.g.push_back(cranbf::test::random_complex(s.ant_rrh, s.ant_center, rng, 1.0));
  return ch;
}

SurrogateBundle bundle_at(const BeamformerSet& anchor, const ChannelSet& ch,
                          const Scenario& scn) {
  return build_surrogates(anchor, ch, scn, service_rates(anchor, ch, scn));
}

}  // namespace

TEST_CASE("zero beams cost nothing when nothing is required") {
  Scenario scn = tiny_scenario();
  scn.energy_min_w = {0.0};
  const ChannelSet ch = unit_channels(scn, 1);
  const auto [cost, comp] = infeasibility_cost(BeamformerSet::zero(scn), ch, scn);
  REQUIRE(cost == 0.0);
  for (double c : comp) REQUIRE(c == 0.0);
}

TEST_CASE("zero beams owe exactly the required RF power") {
  const Scenario scn = tiny_scenario();
  const ChannelSet ch = unit_channels(scn, 2);
  const auto [cost, comp] = infeasibility_cost(BeamformerSet::zero(scn), ch, scn);
  const double req = eh_inverse(scn.energy_min_w[0], scn.eh);
  REQUIRE(cost == Catch::Approx(req).epsilon(1e-14));
  REQUIRE(comp[static_cast<size_t>(scn.n_rrh)] == Catch::Approx(req).epsilon(1e-14));
  for (int n = 0; n < scn.n_rrh; ++n) REQUIRE(comp[static_cast<size_t>(n)] == 0.0);
}

TEST_CASE("cost components recompute from raw physics") {
  const Scenario scn = tiny_scenario();
  const ChannelSet ch = unit_channels(scn, 3);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const BeamformerSet bs = random_feasible_beamformers(scn, rng, 1.0);
    const auto [cost, comp] = infeasibility_cost(bs, ch, scn);

    const auto svc = service_rates(bs, ch, scn);
    const auto load = aggregate_fronthaul_load(bs, svc, scn);
    const auto rf = fronthaul_rates(bs, ch, scn);
    const auto prx = rx_rf_power(bs, ch, scn);
    double want = 0.0;
    for (int n = 0; n < scn.n_rrh; ++n) {
      const double h = std::max(0.0, load[static_cast<size_t>(n)] -
                                         rf[static_cast<size_t>(n)]);
      REQUIRE(comp[static_cast<size_t>(n)] == Catch::Approx(h).margin(1e-14));
      want += h;
    }
    for (int q = 0; q < scn.n_eu; ++q) {
      const double h = std::max(0.0, eh_inverse(scn.energy_min_w[static_cast<size_t>(q)],
                                                scn.eh) -
                                         prx[static_cast<size_t>(q)]);
      REQUIRE(comp[static_cast<size_t>(scn.n_rrh + q)] ==
              Catch::Approx(h).margin(1e-14));
      want += h;
    }
    REQUIRE(cost == Catch::Approx(want).margin(1e-12));
    for (double c : comp) REQUIRE(c >= 0.0);
  }
}

TEST_CASE("surrogate cost meets the exact cost at the anchor") {
  const Scenario scn = tiny_scenario();
  const ChannelSet ch = unit_channels(scn, 4);
  std::mt19937_64 rng(11);
  const BeamformerSet anchor = random_feasible_beamformers(scn, rng, 0.9);
  const SurrogateBundle b = bundle_at(anchor, ch, scn);

  const auto [ce, comp_e] = infeasibility_cost(anchor, ch, scn);
  const auto [cs, comp_s] = surrogate_cost(anchor, b, scn);
  for (size_t i = 0; i < comp_e.size(); ++i) {
    // The energy components agree exactly; the fronthaul ones differ by the
    // epsilon-smoothed indicator, which undershoots by at most eps per block.
    REQUIRE(comp_s[i] == Catch::Approx(comp_e[i]).margin(1e-6));
    REQUIRE(comp_s[i] <= comp_e[i] + 1e-12);
  }
  REQUIRE(cs == Catch::Approx(ce).margin(1e-6));
}

TEST_CASE("zero energy requirement zeroes the surrogate energy hinges") {
  Scenario scn = tiny_scenario();
  scn.energy_min_w = {0.0};
  const ChannelSet ch = unit_channels(scn, 5);
  std::mt19937_64 rng(13);
  const BeamformerSet anchor = random_feasible_beamformers(scn, rng, 0.8);
  const auto [cost, comp] = surrogate_cost(anchor, bundle_at(anchor, ch, scn), scn);
  for (int q = 0; q < scn.n_eu; ++q)
    REQUIRE(comp[static_cast<size_t>(scn.n_rrh + q)] == 0.0);
}

TEST_CASE("surrogate energy hinge dominates the exact one everywhere") {
  const Scenario scn = tiny_scenario();
  const ChannelSet ch = unit_channels(scn, 6);
  std::mt19937_64 rng(17);
  const BeamformerSet anchor = random_feasible_beamformers(scn, rng, 0.7);
  const SurrogateBundle b = bundle_at(anchor, ch, scn);
  for (int trial = 0; trial < 20; ++trial) {
    const BeamformerSet bs = random_feasible_beamformers(scn, rng, 1.0);
    const auto [cs, comp_s] = surrogate_cost(bs, b, scn);
    const auto [ce, comp_e] = infeasibility_cost(bs, ch, scn);
    for (int q = 0; q < scn.n_eu; ++q)
      REQUIRE(comp_s[static_cast<size_t>(scn.n_rrh + q)] >=
              comp_e[static_cast<size_t>(scn.n_rrh + q)] - 1e-10);
  }
}

TEST_CASE("inactive hinges have zero subgradients") {
  Scenario scn = tiny_scenario();
  scn.energy_min_w = {0.0};
  scn.power_center_w = 200.0;
  scn.noise_fronthaul_w = 1e-4;
  const ChannelSet ch = unit_channels(scn, 7);
  std::mt19937_64 rng(19);
  const BeamformerSet anchor = random_feasible_beamformers(scn, rng, 0.9);
  const SurrogateBundle b = bundle_at(anchor, ch, scn);

  const auto [cost, comp] = surrogate_cost(anchor, b, scn);
  REQUIRE(cost == 0.0);
  for (int m = 0; m < scn.n_rrh + scn.n_eu; ++m) {
    const auto [gv, gu] = component_subgradient(m, anchor, b, scn);
    for (const auto& g : gv) REQUIRE(g.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& g : gu) REQUIRE(g.cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE_THROWS_AS(component_subgradient(-1, anchor, b, scn), IndexOutOfRange);
  REQUIRE_THROWS_AS(component_subgradient(scn.n_rrh + scn.n_eu, anchor, b, scn),
                    IndexOutOfRange);
}

TEST_CASE("active energy subgradient with identity channel is minus twice the anchor") {
  Scenario scn = tiny_scenario();
  scn.ant_eu = scn.mn();
  scn.energy_min_w = {8.0};  // demands ~0.59 W of RF, above the anchor's total
  scn.require_valid();
  ChannelSet ch = unit_channels(scn, 8);
  ch.f[0] = cmat::Identity(scn.mn(), scn.mn());
  std::mt19937_64 rng(23);
  const BeamformerSet anchor = random_feasible_beamformers(scn, rng, 0.1);
  const SurrogateBundle b = bundle_at(anchor, ch, scn);

  const int m = scn.n_rrh;  // first energy component
  REQUIRE(eval_eh_surrogate(b, m - scn.n_rrh, anchor) <
          eh_inverse(scn.energy_min_w[0], scn.eh));
  const auto [gv, gu] = component_subgradient(m, anchor, b, scn);
  for (size_t j = 0; j < gv.size(); ++j)
    REQUIRE((gv[j] + 2.0 * anchor.v[j]).cwiseAbs().maxCoeff() <= 1e-12);
  for (const auto& g : gu) REQUIRE(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("active fronthaul subgradient matches finite differences") {
  Scenario scn = tiny_scenario();
  scn.noise_fronthaul_w = 50.0;  // throttle the fronthaul so the hinge engages
  const ChannelSet ch = unit_channels(scn, 9);
  std::mt19937_64 rng(29);
  const BeamformerSet anchor = random_feasible_beamformers(scn, rng, 1.0);
  const SurrogateBundle b = bundle_at(anchor, ch, scn);

  for (int l = 0; l < scn.n_rrh; ++l) {
    const double hinge = eval_fronthaul_load_surrogate(b, l, anchor, scn) -
                         eval_rate_surrogate(b, RateKind::fronthaul, l, anchor);
    REQUIRE(hinge > 1e-3);  // away from the kink
    const auto [gv, gu] = component_subgradient(l, anchor, b, scn);

    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 3; ++trial) {
      BeamformerSet dir = BeamformerSet::zero(scn);
      for (auto& w : dir.v)
        w = cranbf::test::random_complex(w.rows(), w.cols(), rng, 1.0);
      for (auto& w : dir.u)
        w = cranbf::test::random_complex(w.rows(), w.cols(), rng, 1.0);

      auto value_at = [&](double t) {
        BeamformerSet p = anchor;
        for (size_t j = 0; j < p.v.size(); ++j) p.v[j] += t * dir.v[j];
        for (size_t n = 0; n < p.u.size(); ++n) p.u[n] += t * dir.u[n];
        return surrogate_cost(p, b, scn).second[static_cast<size_t>(l)];
      };
      const double h = 1e-6;
      const double fd = (value_at(h) - value_at(-h)) / (2.0 * h);
      double want = 0.0;
      for (size_t j = 0; j < gv.size(); ++j)
        want += (gv[j].adjoint() * dir.v[j]).trace().real();
      for (size_t n = 0; n < gu.size(); ++n)
        want += (gu[n].adjoint() * dir.u[n]).trace().real();
      REQUIRE(fd == Catch::Approx(want).epsilon(1e-4));
    }
  }
}

TEST_CASE("power projection scales an oversized block by the exact ratio") {
  const Scenario scn = tiny_scenario();
  std::vector<cmat> zv(static_cast<size_t>(scn.n_service()),
                       cmat::Zero(scn.mn(), scn.streams_access));
  std::vector<cmat> zu(static_cast<size_t>(scn.n_rrh),
                       cmat::Zero(scn.ant_center, scn.streams_fronthaul));
  // RRH 0 spends 8 W against a 2 W cap; RRH 1 spends 1 W and stays.
  rrh_block(zv[0], scn, 0)(0, 0) = 2.0 * std::sqrt(2.0);
  rrh_block(zv[1], scn, 1)(0, 0) = 1.0;
  const BeamformerSet out = power_projection(zv, zu, scn);
  REQUIRE(std::abs(rrh_block(out.v[0], scn, 0)(0, 0)) ==
          Catch::Approx(std::sqrt(2.0)).epsilon(1e-14));
  REQUIRE(rrh_block(out.v[1], scn, 1)(0, 0) == cplx(1.0, 0.0));
}

TEST_CASE("feasible inputs pass through the power projection unchanged") {
  const Scenario scn = tiny_scenario();
  std::mt19937_64 rng(31);
  const BeamformerSet bs = random_feasible_beamformers(scn, rng, 0.95);
  const BeamformerSet out = power_projection(bs.v, bs.u, scn);
  for (size_t j = 0; j < bs.v.size(); ++j)
    REQUIRE((out.v[j] - bs.v[j]).cwiseAbs().maxCoeff() == 0.0);
  for (size_t n = 0; n < bs.u.size(); ++n)
    REQUIRE((out.u[n] - bs.u[n]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("power projection equals the per-ball projection oracle") {
  const Scenario scn = tiny_scenario();
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const double blow = (trial % 2) ? 5.0 : 0.9;
    std::vector<cmat> zv, zu;
    for (int j = 0; j < scn.n_service(); ++j)
      zv.push_back(cranbf::test::random_complex(scn.mn(), scn.streams_access,
                                                rng, blow));
    for (int n = 0; n < scn.n_rrh; ++n)
      zu.push_back(cranbf::test::random_complex(scn.ant_center,
                                                scn.streams_fronthaul, rng, blow));
    const BeamformerSet out = power_projection(zv, zu, scn);

    for (int n = 0; n < scn.n_rrh; ++n) {
      // Oracle: stack the RRH-n sub-rows of all beams into one vector and
      // project it onto the ball of radius sqrt(p_n).
      double norm2 = 0.0;
      for (const auto& z : zv) norm2 += rrh_block(z, scn, n).squaredNorm();
      const double r = std::sqrt(scn.power_rrh_w[static_cast<size_t>(n)]);
      const double f = std::min(1.0, r / std::sqrt(norm2));
      for (size_t j = 0; j < zv.size(); ++j) {
        const cmat want = f * rrh_block(zv[j], scn, n);
        REQUIRE((rrh_block(out.v[j], scn, n) - want).cwiseAbs().maxCoeff() <=
                1e-8);
      }
      double got = 0.0;
      for (const auto& v : out.v) got += rrh_block(v, scn, n).squaredNorm();
      REQUIRE(got <= scn.power_rrh_w[static_cast<size_t>(n)] * (1.0 + 1e-12));
    }
    double cn2 = 0.0;
    for (const auto& z : zu) cn2 += z.squaredNorm();
    const double fc = std::min(1.0, std::sqrt(scn.power_center_w / cn2));
    for (size_t n = 0; n < zu.size(); ++n)
      REQUIRE((out.u[n] - fc * zu[n]).cwiseAbs().maxCoeff() <= 1e-8);
    double got_c = 0.0;
    for (const auto& u : out.u) got_c += u.squaredNorm();
    REQUIRE(got_c <= scn.power_center_w * (1.0 + 1e-12));
  }
}

TEST_CASE("generous instance is feasible at the random start") {
  Scenario scn = tiny_scenario();
  scn.energy_min_w = {0.0};
  scn.power_center_w = 200.0;
  scn.noise_fronthaul_w = 1e-4;
  const ChannelSet ch = unit_channels(scn, 10);
  const FeasibilityReport rep = find_feasible(scn, ch, 42);
  REQUIRE(rep.feasible);
  REQUIRE(rep.sca_iterations == 0);
  REQUIRE(rep.cost <= 1e-9);
  REQUIRE(rep.trace.size() == 1);
}

TEST_CASE("saturating energy demand raises an error") {
  Scenario scn = tiny_scenario();
  scn.energy_min_w = {scn.eh.pmax_w};
  const ChannelSet ch = unit_channels(scn, 11);
  REQUIRE_THROWS_AS(find_feasible(scn, ch, 1), InfiniteRequirement);
}

TEST_CASE("tiny instance reaches feasibility and respects the power caps") {
  const Scenario scn = tiny_scenario();
  const ChannelSet ch = unit_channels(scn, 12);
  const FeasibilityReport rep = find_feasible(scn, ch, 7);
  REQUIRE(rep.feasible);
  REQUIRE(rep.cost <= 1e-9);
  REQUIRE(rep.per_component.size() == static_cast<size_t>(scn.n_rrh + scn.n_eu));
  const auto pt = tx_power_rrh(rep.point, scn);
  for (int n = 0; n < scn.n_rrh; ++n)
    REQUIRE(pt[static_cast<size_t>(n)] <=
            scn.power_rrh_w[static_cast<size_t>(n)] * (1.0 + 1e-12));
  REQUIRE(tx_power_center(rep.point) <= scn.power_center_w * (1.0 + 1e-12));
}

TEST_CASE("desk-scale instance reaches feasibility within the iteration budget") {
  const Scenario scn = Scenario::desk_instance();
  const ChannelSet ch = generate(scn, 42);
  const FeasibilityReport rep = find_feasible(scn, ch, 42);
  REQUIRE(rep.feasible);
  REQUIRE(rep.cost <= 1e-9);
  REQUIRE(rep.sca_iterations <= 50);
}

TEST_CASE("feasibility search is deterministic for a fixed seed") {
  const Scenario scn = tiny_scenario();
  const ChannelSet ch = unit_channels(scn, 13);
  const FeasibilityReport a = find_feasible(scn, ch, 99);
  const FeasibilityReport b = find_feasible(scn, ch, 99);
  REQUIRE(a.cost == b.cost);
  REQUIRE(a.feasible == b.feasible);
  REQUIRE(a.sca_iterations == b.sca_iterations);
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t j = 0; j < a.point.v.size(); ++j)
    REQUIRE((a.point.v[j] - b.point.v[j]).cwiseAbs().maxCoeff() == 0.0);
  for (size_t n = 0; n < a.point.u.size(); ++n)
    REQUIRE((a.point.u[n] - b.point.u[n]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("starved instance reports blame on the energy components") {
  Scenario scn = tiny_scenario();
  scn.power_rrh_w = {1e-6, 1e-6};
  FeasibilityOptions opts;
  opts.max_outer = 5;
  const ChannelSet ch = unit_channels(scn, 14);
  const FeasibilityReport rep = find_feasible(scn, ch, 3, opts);
  REQUIRE_FALSE(rep.feasible);
  REQUIRE(rep.cost > 0.1);
  const double req = eh_inverse(scn.energy_min_w[0], scn.eh);
  REQUIRE(rep.per_component[static_cast<size_t>(scn.n_rrh)] ==
          Catch::Approx(req).margin(0.01));
  for (int n = 0; n < scn.n_rrh; ++n)
    REQUIRE(rep.per_component[static_cast<size_t>(n)] <= 1e-9);
}
