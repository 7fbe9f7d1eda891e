#pragma once

#include "cranbf/physics.hpp"

#include <numbers>

namespace cranbf {

enum class RateKind { broadcast, multicast, fronthaul };

/// Coefficients of one concave-quadratic rate lower bound
///   rbar(W) = theta - sum_i tr(W_i^H xi W_i) - Re tr(upsilon W_lin),
/// where the quadratic sum runs over the beams interfering at this receiver
/// and the linear term is attached to beam lin_beam. All coefficients are in
/// bits: the natural-log Taylor model is assembled first and divided by ln 2
/// so that the bound is tight, gradient-matching, and global in log2 units.
struct SurrogateEntry {
  cmat xi;       // Hermitian PSD quadratic coefficient
  cmat upsilon;  // d x cols linear coefficient
  double theta = 0.0;
  int lin_beam = 0;
};

/// All first-order models anchored at one beamformer set.
struct SurrogateBundle {
  std::vector<SurrogateEntry> broadcast;  // per IU, over access beams
  std::vector<SurrogateEntry> multicast;  // per IU, over group beams only
  std::vector<SurrogateEntry> fronthaul;  // per RRH, over fronthaul beams
  std::vector<double> phi_e;              // per EU: -(RF power at anchor)
  std::vector<std::vector<cmat>> eh_lin;  // [q][j]: F_q^H F_q V_j(anchor)
  std::vector<std::vector<double>> l1_weight;  // [n][j]: reweighting factors
  // [n][j]: anchor block is exactly zero. The reweighting floor would charge
  // such a block at 1/epsilon; the subproblem instead keeps it pinned at
  // zero, the limit of that charge, so microscopic regrowth cannot slip
  // under the indicator load between iterations.
  std::vector<std::vector<char>> retired;
  std::vector<double> cached_rates;  // per service, bits
  BeamformerSet anchor;
};

namespace detail {

constexpr double kInvLn2 = std::numbers::log2e;

/// One receiver's lower-bound coefficients. cov_beams spans the beams whose
/// covariance the receiver sees, des indexes the desired one within it.
inline SurrogateEntry make_entry(const cmat& chan,
                                 const std::vector<const cmat*>& cov_beams,
                                 size_t des, double noise, int lin_beam) {
  const int t = static_cast<int>(chan.rows());
  const int d = static_cast<int>(cov_beams[des]->cols());

  cmat x = noise * cmat::Identity(t, t);
  for (const cmat* w : cov_beams) x += (chan * (*w)) * (chan * (*w)).adjoint();

  const cmat b = chan * (*cov_beams[des]);       // t x d
  const cmat theta_f = hermitian_solve(x, b);    // MMSE receive filter
  cmat q = cmat::Identity(d, d) - theta_f.adjoint() * b;
  q = 0.5 * (q + q.adjoint()).eval();

  const cmat ct = chan.adjoint() * theta_f;               // cols x d
  const cmat qi_ct = hermitian_solve(q, ct.adjoint());    // d x cols

  SurrogateEntry e;
  e.xi = kInvLn2 * (ct * qi_ct);
  e.xi = 0.5 * (e.xi + e.xi.adjoint()).eval();
  e.upsilon = -2.0 * kInvLn2 * qi_ct;
  const cmat qi_rest =
      hermitian_solve(q, (cmat::Identity(d, d) + noise * theta_f.adjoint() * theta_f).eval());
  e.theta = kInvLn2 * (static_cast<double>(d) - qi_rest.trace().real()) -
            logdet2_pd(q);
  e.lin_beam = lin_beam;
  return e;
}

inline double quad_term(const cmat& xi, const cmat& w) {
  return (xi * w).cwiseProduct(w.conjugate()).sum().real();
}

inline double lin_term(const cmat& upsilon, const cmat& w) {
  return (upsilon * w).trace().real();
}

}  // namespace detail

/// Builds every surrogate at the given anchor. cached_rates supplies the
/// per-service weights of the smoothed fronthaul load.
inline SurrogateBundle build_surrogates(const BeamformerSet& anchor,
                                        const ChannelSet& ch,
                                        const Scenario& scn,
                                        const std::vector<double>& cached_rates) {
  if (cached_rates.size() != static_cast<size_t>(scn.n_service()))
    throw DimensionMismatch("build_surrogates: cached_rates size mismatch");
  SurrogateBundle b;
  b.anchor = anchor;
  b.cached_rates = cached_rates;

  std::vector<const cmat*> all_v;
  for (const auto& v : anchor.v) all_v.push_back(&v);
  std::vector<const cmat*> group_v(all_v.begin() + 1, all_v.end());
  std::vector<const cmat*> all_u;
  for (const auto& u : anchor.u) all_u.push_back(&u);

  for (int k = 0; k < scn.n_iu; ++k) {
    const cmat& h = ch.h[static_cast<size_t>(k)];
    b.broadcast.push_back(
        detail::make_entry(h, all_v, 0, scn.noise_access_w, 0));
    const int gk = scn.group_of[static_cast<size_t>(k)];
    b.multicast.push_back(detail::make_entry(
        h, group_v, static_cast<size_t>(gk), scn.noise_access_w, gk + 1));
  }
  for (int n = 0; n < scn.n_rrh; ++n)
    b.fronthaul.push_back(detail::make_entry(ch.g[static_cast<size_t>(n)],
                                             all_u, static_cast<size_t>(n),
                                             scn.noise_fronthaul_w, n));

  b.phi_e.resize(static_cast<size_t>(scn.n_eu));
  b.eh_lin.resize(static_cast<size_t>(scn.n_eu));
  for (int q = 0; q < scn.n_eu; ++q) {
    const cmat& f = ch.f[static_cast<size_t>(q)];
    const cmat ff = f.adjoint() * f;
    double pr = 0.0;
    auto& lin = b.eh_lin[static_cast<size_t>(q)];
    for (const auto& v : anchor.v) {
      lin.push_back(ff * v);
      pr += (f * v).squaredNorm();
    }
    b.phi_e[static_cast<size_t>(q)] = -pr;
  }

  b.l1_weight.resize(static_cast<size_t>(scn.n_rrh));
  b.retired.resize(static_cast<size_t>(scn.n_rrh));
  for (int n = 0; n < scn.n_rrh; ++n) {
    auto& wn = b.l1_weight[static_cast<size_t>(n)];
    auto& rn = b.retired[static_cast<size_t>(n)];
    for (const auto& v : anchor.v) {
      const double bn2 = rrh_block(v, scn, n).squaredNorm();
      wn.push_back(1.0 / (bn2 + scn.epsilon_smooth));
      rn.push_back(bn2 == 0.0 ? 1 : 0);
    }
  }
  return b;
}

/// Evaluates one rate lower bound at an arbitrary beamformer set.
inline double eval_rate_surrogate(const SurrogateBundle& b, RateKind kind,
                                  int idx, const BeamformerSet& bs) {
  switch (kind) {
    case RateKind::broadcast: {
      const auto& e = b.broadcast[static_cast<size_t>(idx)];
      double acc = e.theta;
      for (const auto& v : bs.v) acc -= detail::quad_term(e.xi, v);
      return acc - detail::lin_term(e.upsilon, bs.v[0]);
    }
    case RateKind::multicast: {
      const auto& e = b.multicast[static_cast<size_t>(idx)];
      double acc = e.theta;
      for (size_t g = 1; g < bs.v.size(); ++g)
        acc -= detail::quad_term(e.xi, bs.v[g]);
      return acc -
             detail::lin_term(e.upsilon, bs.v[static_cast<size_t>(e.lin_beam)]);
    }
    case RateKind::fronthaul: {
      const auto& e = b.fronthaul[static_cast<size_t>(idx)];
      double acc = e.theta;
      for (const auto& u : bs.u) acc -= detail::quad_term(e.xi, u);
      return acc -
             detail::lin_term(e.upsilon, bs.u[static_cast<size_t>(e.lin_beam)]);
    }
  }
  return 0.0;
}

/// Affine lower bound on the RF power received by energy user q.
inline double eval_eh_surrogate(const SurrogateBundle& b, int q,
                                const BeamformerSet& bs) {
  const auto& lin = b.eh_lin[static_cast<size_t>(q)];
  double acc = b.phi_e[static_cast<size_t>(q)];
  for (size_t j = 0; j < bs.v.size(); ++j)
    acc += 2.0 * lin[j].cwiseProduct(bs.v[j].conjugate()).sum().real();
  return acc;
}

/// Smoothed fronthaul load of RRH n: reweighted squared block norms times the
/// cached service rates.
inline double eval_fronthaul_load_surrogate(const SurrogateBundle& b, int n,
                                            const BeamformerSet& bs,
                                            const Scenario& scn) {
  const auto& wn = b.l1_weight[static_cast<size_t>(n)];
  double acc = 0.0;
  for (size_t j = 0; j < bs.v.size(); ++j)
    acc += wn[j] * b.cached_rates[j] *
           rrh_block(bs.v[j], scn, n).squaredNorm();
  return acc;
}

/// Service-rate lower bounds implied by the bundle at the given point:
/// entry 0 is the worst broadcast bound, entry g the worst bound in group g.
inline std::vector<double> surrogate_service_rates(const SurrogateBundle& b,
                                                   const BeamformerSet& bs,
                                                   const Scenario& scn) {
  std::vector<double> out(static_cast<size_t>(scn.n_service()),
                          std::numeric_limits<double>::infinity());
  for (int k = 0; k < scn.n_iu; ++k) {
    out[0] = std::min(out[0],
                      eval_rate_surrogate(b, RateKind::broadcast, k, bs));
    auto& slot =
        out[static_cast<size_t>(scn.group_of[static_cast<size_t>(k)] + 1)];
    slot = std::min(slot, eval_rate_surrogate(b, RateKind::multicast, k, bs));
  }
  return out;
}

}  // namespace cranbf
