#pragma once

#include "cranbf/surrogates.hpp"

#include <algorithm>
#include <optional>

namespace cranbf {

/// Multipliers of the convex subproblem, one per constraint family.
struct DualVariables {
  rvec lam_m;  // per-IU multicast rate
  rvec lam_b;  // per-IU broadcast rate
  rvec lam_e;  // per-EU harvested energy
  rvec lam_f;  // per-RRH fronthaul capacity
  rvec lam_r;  // per-RRH transmit power
  double lam_c = 0.0;  // center transmit power

  static DualVariables zero(const Scenario& scn) {
    DualVariables d;
    d.lam_m = rvec::Zero(scn.n_iu);
    d.lam_b = rvec::Zero(scn.n_iu);
    d.lam_e = rvec::Zero(scn.n_eu);
    d.lam_f = rvec::Zero(scn.n_rrh);
    d.lam_r = rvec::Zero(scn.n_rrh);
    return d;
  }
};

inline DualVariables operator+(const DualVariables& a, const DualVariables& b) {
  DualVariables r = a;
  r.lam_m += b.lam_m;
  r.lam_b += b.lam_b;
  r.lam_e += b.lam_e;
  r.lam_f += b.lam_f;
  r.lam_r += b.lam_r;
  r.lam_c += b.lam_c;
  return r;
}

inline DualVariables operator-(const DualVariables& a, const DualVariables& b) {
  DualVariables r = a;
  r.lam_m -= b.lam_m;
  r.lam_b -= b.lam_b;
  r.lam_e -= b.lam_e;
  r.lam_f -= b.lam_f;
  r.lam_r -= b.lam_r;
  r.lam_c -= b.lam_c;
  return r;
}

inline DualVariables operator*(double t, const DualVariables& a) {
  DualVariables r = a;
  r.lam_m *= t;
  r.lam_b *= t;
  r.lam_e *= t;
  r.lam_f *= t;
  r.lam_r *= t;
  r.lam_c *= t;
  return r;
}

inline double dot(const DualVariables& a, const DualVariables& b) {
  return a.lam_m.dot(b.lam_m) + a.lam_b.dot(b.lam_b) + a.lam_e.dot(b.lam_e) +
         a.lam_f.dot(b.lam_f) + a.lam_r.dot(b.lam_r) + a.lam_c * b.lam_c;
}

inline double dual_norm(const DualVariables& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const DualVariables& a) {
  return a.lam_m.allFinite() && a.lam_b.allFinite() && a.lam_e.allFinite() &&
         a.lam_f.allFinite() && a.lam_r.allFinite() && std::isfinite(a.lam_c);
}

/// Memory of the double-momentum scheme: the previous projected iterate, the
/// previous pre-projection intermediate, and the step-size schedule pair
/// (pi_prev, pi_cur) = (pi at s-1, pi at s).
struct MomentumState {
  DualVariables prev_duals;
  DualVariables prev_intermediate;
  double pi_prev = 1.0;
  double pi_cur = 0.5 * (1.0 + std::sqrt(5.0));

  static MomentumState start(const Scenario& scn) {
    MomentumState m;
    m.prev_duals = DualVariables::zero(scn);
    m.prev_intermediate = DualVariables::zero(scn);
    return m;
  }
};

/// Per-constraint preconditioning of the dual ascent. Each multiplier is
/// optimized as lam_scaled = c * lam with c^2 the measured curvature of the
/// dual function along that coordinate, which equalizes families whose
/// constraint gradients differ by many orders of magnitude (watt-scale power
/// vs bit-scale rate constraints) and makes a unit step size the natural
/// Newton-like choice. The simplex-constrained rate families share one scale
/// per simplex so their projection stays Euclidean; the simplex budgets are
/// rescaled alongside. Unit scaling reproduces the plain textbook iteration.
struct ConstraintScaling {
  rvec ce, cf, cr;  // per coordinate: energy, fronthaul, RRH power
  double cc = 1.0;  // center power
  double cb = 1.0;  // broadcast simplex, one scale for the whole family
  rvec cm;          // one scale per multicast group simplex
  double nu_scale = 1.0;
};

inline ConstraintScaling unit_scaling(const Scenario& scn) {
  ConstraintScaling s;
  s.ce = rvec::Ones(scn.n_eu);
  s.cf = rvec::Ones(scn.n_rrh);
  s.cr = rvec::Ones(scn.n_rrh);
  s.cm = rvec::Ones(std::max<int>(1, static_cast<int>(scn.alpha.size()) - 1));
  return s;
}

/// Closed-form minimizer of the Lagrangian over the beamformers: one
/// Hermitian solve per access beam and a single factorization shared by all
/// fronthaul beams.
inline BeamformerSet primal_minimizers(const DualVariables& l,
                                       const SurrogateBundle& b,
                                       const Scenario& scn) {
  const int mn = scn.mn();
  BeamformerSet out = BeamformerSet::zero(scn);

  cmat sum_b = cmat::Zero(mn, mn);
  cmat sum_m = cmat::Zero(mn, mn);
  for (int k = 0; k < scn.n_iu; ++k) {
    sum_b += l.lam_b[k] * b.broadcast[static_cast<size_t>(k)].xi;
    sum_m += l.lam_m[k] * b.multicast[static_cast<size_t>(k)].xi;
  }

  for (size_t j = 0; j < out.v.size(); ++j) {
    cmat a = sum_b;
    if (j > 0) a += sum_m;
    a += scn.rho1 * cmat::Identity(mn, mn);
    for (int n = 0; n < scn.n_rrh; ++n) {
      const double w = l.lam_f[n] * b.l1_weight[static_cast<size_t>(n)][j] *
                           b.cached_rates[j] +
                       l.lam_r[n];
      for (int i = 0; i < scn.ant_rrh; ++i)
        a(n * scn.ant_rrh + i, n * scn.ant_rrh + i) += w;
    }

    cmat rhs = scn.rho1 * b.anchor.v[j];
    for (int q = 0; q < scn.n_eu; ++q)
      rhs += l.lam_e[q] * b.eh_lin[static_cast<size_t>(q)][j];
    if (j == 0) {
      for (int k = 0; k < scn.n_iu; ++k)
        rhs -= 0.5 * l.lam_b[k] *
               b.broadcast[static_cast<size_t>(k)].upsilon.adjoint();
    } else {
      for (int k = 0; k < scn.n_iu; ++k)
        if (scn.group_of[static_cast<size_t>(k)] == static_cast<int>(j) - 1)
          rhs -= 0.5 * l.lam_m[k] *
                 b.multicast[static_cast<size_t>(k)].upsilon.adjoint();
    }
    // Retired blocks stay exactly zero: decouple their rows and columns so
    // the remaining system is the reduced problem on the live blocks.
    for (int n = 0; n < scn.n_rrh; ++n) {
      if (!b.retired[static_cast<size_t>(n)][j]) continue;
      const int at = n * scn.ant_rrh;
      a.middleRows(at, scn.ant_rrh).setZero();
      a.middleCols(at, scn.ant_rrh).setZero();
      for (int i = 0; i < scn.ant_rrh; ++i) a(at + i, at + i) = 1.0;
      rhs.middleRows(at, scn.ant_rrh).setZero();
    }
    out.v[j] = hermitian_solve(a, rhs);
  }

  const int ll = scn.ant_center;
  const int df = scn.streams_fronthaul;
  cmat bb = (l.lam_c + scn.rho2) * cmat::Identity(ll, ll);
  for (int n = 0; n < scn.n_rrh; ++n)
    bb += l.lam_f[n] * b.fronthaul[static_cast<size_t>(n)].xi;
  cmat rhs(ll, scn.n_rrh * df);
  for (int n = 0; n < scn.n_rrh; ++n)
    rhs.middleCols(n * df, df) =
        scn.rho2 * b.anchor.u[static_cast<size_t>(n)] -
        0.5 * l.lam_f[n] *
            b.fronthaul[static_cast<size_t>(n)].upsilon.adjoint();
  const cmat sol = hermitian_solve(bb, rhs);
  for (int n = 0; n < scn.n_rrh; ++n)
    out.u[static_cast<size_t>(n)] = sol.middleCols(n * df, df);
  return out;
}

/// Supergradient of the dual function: each component is the value of the
/// corresponding constraint at the given primal point.
inline DualVariables dual_gradient(const DualVariables& /*l*/,
                                   const BeamformerSet& v,
                                   const SurrogateBundle& b,
                                   const Scenario& scn) {
  DualVariables g = DualVariables::zero(scn);
  for (int k = 0; k < scn.n_iu; ++k) {
    g.lam_b[k] = -eval_rate_surrogate(b, RateKind::broadcast, k, v);
    g.lam_m[k] = -eval_rate_surrogate(b, RateKind::multicast, k, v);
  }
  for (int q = 0; q < scn.n_eu; ++q) {
    const double req =
        eh_inverse(scn.energy_min_w[static_cast<size_t>(q)], scn.eh);
    if (!std::isfinite(req))
      throw InfiniteRequirement("dual_gradient: energy requirement " +
                                std::to_string(q) +
                                " exceeds the harvester saturation level");
    g.lam_e[q] = req - eval_eh_surrogate(b, q, v);
  }
  for (int n = 0; n < scn.n_rrh; ++n)
    g.lam_f[n] = eval_fronthaul_load_surrogate(b, n, v, scn) -
                 eval_rate_surrogate(b, RateKind::fronthaul, n, v);
  const auto pt = tx_power_rrh(v, scn);
  for (int n = 0; n < scn.n_rrh; ++n)
    g.lam_r[n] = pt[static_cast<size_t>(n)] -
                 scn.power_rrh_w[static_cast<size_t>(n)];
  g.lam_c = tx_power_center(v) - scn.power_center_w;
  return g;
}

/// Lagrangian of the proximal subproblem at an arbitrary primal point, with
/// the epigraph variables eliminated (their terms cancel on the dual domain).
inline double lagrangian_value(const DualVariables& l, const BeamformerSet& bs,
                               const SurrogateBundle& b, const Scenario& scn) {
  double prox = 0.0;
  for (size_t j = 0; j < bs.v.size(); ++j)
    prox += scn.rho1 * (bs.v[j] - b.anchor.v[j]).squaredNorm();
  for (size_t n = 0; n < bs.u.size(); ++n)
    prox += scn.rho2 * (bs.u[n] - b.anchor.u[n]).squaredNorm();
  return prox + dot(l, dual_gradient(l, bs, b, scn));
}

/// Dual function: the Lagrangian evaluated at its closed-form minimizer.
inline double dual_value(const DualVariables& l, const SurrogateBundle& b,
                         const Scenario& scn) {
  return lagrangian_value(l, primal_minimizers(l, b, scn), b, scn);
}

inline DualVariables step_plain(const DualVariables& l, const DualVariables& g,
                                double nu) {
  return l + nu * g;
}

/// One double-momentum ascent step: gradient plus heavy-ball momentum into the
/// intermediate, then a Nesterov extrapolation of consecutive intermediates.
/// The state is rotated for the next call.
inline DualVariables step_accelerated(const DualVariables& l,
                                      const DualVariables& g, double nu,
                                      MomentumState& m) {
  const double beta = (m.pi_prev - 1.0) / m.pi_cur;
  const DualVariables tilde = l + nu * g + beta * (l - m.prev_duals);
  const DualVariables mu = tilde + beta * (tilde - m.prev_intermediate);
  m.prev_duals = l;
  m.prev_intermediate = tilde;
  m.pi_prev = m.pi_cur;
  m.pi_cur = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * m.pi_cur * m.pi_cur));
  return mu;
}

namespace detail {

/// Euclidean projection of the subset idx of mu onto the scaled simplex
/// {x >= 0, sum x = alpha}: x_i = (mu_i - w/2)+ with w found by bisection,
/// then the active entries are corrected so the sum is exact.
inline void project_simplex_subset(rvec& out, const rvec& mu,
                                   const std::vector<int>& idx, double alpha) {
  if (idx.empty()) return;
  if (!(alpha > 0.0)) {
    for (int i : idx) out[i] = 0.0;
    return;
  }
  if (idx.size() == 1) {
    out[idx[0]] = alpha;
    return;
  }
  double lo = mu[idx[0]], hi = mu[idx[0]];
  for (int i : idx) {
    lo = std::min(lo, mu[i]);
    hi = std::max(hi, mu[i]);
  }
  const double w = bisect_monotone(
      [&](double x) {
        double s = 0.0;
        for (int i : idx) s += std::max(0.0, mu[i] - 0.5 * x);
        return s - alpha;
      },
      2.0 * (lo - alpha), 2.0 * hi, 1e-12);

  std::vector<int> active;
  double s = 0.0;
  for (int i : idx) {
    const double t = mu[i] - 0.5 * w;
    if (t > 0.0) {
      out[i] = t;
      s += t;
      active.push_back(i);
    } else {
      out[i] = 0.0;
    }
  }
  if (active.empty()) {
    int imax = idx[0];
    for (int i : idx)
      if (mu[i] > mu[imax]) imax = i;
    out[imax] = alpha;
    return;
  }
  const double corr = (alpha - s) / static_cast<double>(active.size());
  double s2 = 0.0;
  for (int i : active) {
    out[i] = std::max(0.0, out[i] + corr);
    s2 += out[i];
  }
  if (s2 > 0.0)
    for (int i : active) out[i] *= alpha / s2;
}

}  // namespace detail

/// Nearest point of the dual domain: clamp the inequality multipliers, project
/// the broadcast family onto the alpha_0 simplex and each multicast group onto
/// its alpha_g simplex.
inline DualVariables project_duals(const DualVariables& mu,
                                   const std::vector<double>& alpha,
                                   const std::vector<int>& group_of) {
  DualVariables out = mu;
  out.lam_e = mu.lam_e.cwiseMax(0.0);
  out.lam_f = mu.lam_f.cwiseMax(0.0);
  out.lam_r = mu.lam_r.cwiseMax(0.0);
  out.lam_c = std::max(0.0, mu.lam_c);

  std::vector<int> all(static_cast<size_t>(mu.lam_b.size()));
  for (size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  detail::project_simplex_subset(out.lam_b, mu.lam_b, all, alpha[0]);

  const int n_group = static_cast<int>(alpha.size()) - 1;
  for (int g = 0; g < n_group; ++g) {
    std::vector<int> members;
    for (size_t k = 0; k < group_of.size(); ++k)
      if (group_of[k] == g) members.push_back(static_cast<int>(k));
    detail::project_simplex_subset(out.lam_m, mu.lam_m, members,
                                   alpha[static_cast<size_t>(g) + 1]);
  }
  return out;
}

/// Measures the diagonal curvature of the dual function at the projected zero
/// seed, one forward difference per multiplier: bump the coordinate, re-solve
/// the closed-form primal and record how much the coordinate's own constraint
/// value fell. Concavity makes the drop nonnegative; coordinates the primal
/// cannot feel are floored so their scale stays finite.
inline ConstraintScaling make_constraint_scaling(const SurrogateBundle& b,
                                                 const Scenario& scn) {
  ConstraintScaling s = unit_scaling(scn);
  const DualVariables l0 =
      project_duals(DualVariables::zero(scn), scn.alpha, scn.group_of);
  const BeamformerSet v0 = primal_minimizers(l0, b, scn);
  const DualVariables g0 = dual_gradient(l0, v0, b, scn);
  if (!all_finite(g0)) return s;

  const double delta = 1.0;
  auto curv = [&](auto&& bump, auto&& read) {
    DualVariables lp = l0;
    bump(lp);
    const BeamformerSet vp = primal_minimizers(lp, b, scn);
    const DualVariables gp = dual_gradient(lp, vp, b, scn);
    const double h = (read(g0) - read(gp)) / delta;
    return std::isfinite(h) ? std::max(h, 0.0) : 0.0;
  };

  rvec hb(scn.n_iu), hm(scn.n_iu), he(scn.n_eu), hf(scn.n_rrh), hr(scn.n_rrh);
  for (int k = 0; k < scn.n_iu; ++k) {
    hb[k] = curv([&](DualVariables& l) { l.lam_b[k] += delta; },
                 [&](const DualVariables& g) { return g.lam_b[k]; });
    hm[k] = curv([&](DualVariables& l) { l.lam_m[k] += delta; },
                 [&](const DualVariables& g) { return g.lam_m[k]; });
  }
  for (int q = 0; q < scn.n_eu; ++q)
    he[q] = curv([&](DualVariables& l) { l.lam_e[q] += delta; },
                 [&](const DualVariables& g) { return g.lam_e[q]; });
  for (int n = 0; n < scn.n_rrh; ++n) {
    hf[n] = curv([&](DualVariables& l) { l.lam_f[n] += delta; },
                 [&](const DualVariables& g) { return g.lam_f[n]; });
    hr[n] = curv([&](DualVariables& l) { l.lam_r[n] += delta; },
                 [&](const DualVariables& g) { return g.lam_r[n]; });
  }
  const double hc = curv([&](DualVariables& l) { l.lam_c += delta; },
                         [&](const DualVariables& g) { return g.lam_c; });

  double hmax = hc;
  for (const rvec* v : {&hb, &hm, &he, &hf, &hr})
    if (v->size() > 0) hmax = std::max(hmax, v->maxCoeff());
  if (!(hmax > 0.0)) return s;

  // Curvatures legitimately span many orders: a harvesting tangent through a
  // microwatt channel responds ~1e-18 per unit multiplier while rate rows
  // respond ~1e-1. The floor only guards true zeros, so it sits far below
  // any measurable response.
  const double hfloor = 1e-20 * hmax;
  auto scale_of = [&](double h) { return std::sqrt(std::max(h, hfloor)); };
  for (int q = 0; q < scn.n_eu; ++q) s.ce[q] = scale_of(he[q]);
  for (int n = 0; n < scn.n_rrh; ++n) {
    s.cf[n] = scale_of(hf[n]);
    s.cr[n] = scale_of(hr[n]);
  }
  s.cc = scale_of(hc);
  s.cb = scale_of(hb.maxCoeff());
  for (int g = 0; g < s.cm.size(); ++g) {
    double h = 0.0;
    for (int k = 0; k < scn.n_iu; ++k)
      if (scn.group_of[static_cast<size_t>(k)] == g) h = std::max(h, hm[k]);
    s.cm[g] = scale_of(h);
  }
  return s;
}

struct InnerRow {
  int s = 0;
  double d_value = 0.0;
  double grad_norm = 0.0;
  double norm_m = 0.0, norm_b = 0.0, norm_e = 0.0, norm_f = 0.0, norm_r = 0.0;
  double lam_c = 0.0;
};

struct InnerTrace {
  std::vector<InnerRow> rows;
};

struct SolveOptions {
  bool accelerated = false;
  double nu = 1.0;
  bool backtrack = true;    // plain method: halve nu when the dual value drops
  double tol_inner = -1.0;  // <= 0: take the scenario default
  int max_inner = -1;       // <= 0: take the scenario default
  // Convergence additionally requires the worst relative constraint residual
  // of the current primal to fall below this, so a flat dual value alone
  // cannot certify an iterate that still violates the relaxed constraints.
  double feas_tol = 1e-8;
  std::optional<ConstraintScaling> scaling;  // nullopt: unit scaling
};

struct SubproblemResult {
  BeamformerSet v;
  std::vector<double> service_rates;  // epigraph recovery: worst bound per service
  DualVariables duals;
  double d_value = 0.0;
  bool converged = false;
  int iterations = 0;    // accepted dual steps
  int total_solves = 0;  // primal solves including rejected trials
  InnerTrace trace;
};

/// Projected dual ascent on the subproblem anchored at v_t (which must be the
/// bundle's anchor). Duals start at zero, each iteration solves the primal in
/// closed form, steps along the constraint values and projects back onto the
/// dual domain. Stops when the dual value stalls in relative terms or the
/// iteration budget runs out (then the best iterate is returned, flagged).
inline SubproblemResult solve_subproblem(const BeamformerSet& v_t,
                                         const SurrogateBundle& bundle,
                                         const Scenario& scn,
                                         const SolveOptions& opts = {}) {
  (void)v_t;
  const double tol = opts.tol_inner > 0.0 ? opts.tol_inner : scn.tol_inner;
  const int max_inner = opts.max_inner > 0 ? opts.max_inner : scn.max_inner;
  const ConstraintScaling sc =
      opts.scaling ? *opts.scaling : unit_scaling(scn);
  const double nu0 = opts.nu * sc.nu_scale;

  // Simplex budgets move with the family scales so the scaled-variable
  // projection is the image of the true-variable one.
  std::vector<double> alpha_scaled = scn.alpha;
  alpha_scaled[0] *= sc.cb;
  for (size_t g = 1; g < alpha_scaled.size(); ++g)
    alpha_scaled[g] *= sc.cm[static_cast<int>(g) - 1];

  auto unscale = [&](const DualVariables& lt) {
    DualVariables eff = lt;
    eff.lam_b = lt.lam_b / sc.cb;
    for (int k = 0; k < scn.n_iu; ++k)
      eff.lam_m[k] = lt.lam_m[k] / sc.cm[scn.group_of[static_cast<size_t>(k)]];
    eff.lam_e = lt.lam_e.cwiseQuotient(sc.ce);
    eff.lam_f = lt.lam_f.cwiseQuotient(sc.cf);
    eff.lam_r = lt.lam_r.cwiseQuotient(sc.cr);
    eff.lam_c = lt.lam_c / sc.cc;
    return eff;
  };
  auto scale_grad = [&](const DualVariables& g) {
    DualVariables gs = g;
    gs.lam_b = g.lam_b / sc.cb;
    for (int k = 0; k < scn.n_iu; ++k)
      gs.lam_m[k] = g.lam_m[k] / sc.cm[scn.group_of[static_cast<size_t>(k)]];
    gs.lam_e = g.lam_e.cwiseQuotient(sc.ce);
    gs.lam_f = g.lam_f.cwiseQuotient(sc.cf);
    gs.lam_r = g.lam_r.cwiseQuotient(sc.cr);
    gs.lam_c = g.lam_c / sc.cc;
    return gs;
  };
  auto prox_value = [&](const BeamformerSet& bs) {
    double p = 0.0;
    for (size_t j = 0; j < bs.v.size(); ++j)
      p += scn.rho1 * (bs.v[j] - bundle.anchor.v[j]).squaredNorm();
    for (size_t n = 0; n < bs.u.size(); ++n)
      p += scn.rho2 * (bs.u[n] - bundle.anchor.u[n]).squaredNorm();
    return p;
  };

  // Worst constraint violation of the candidate primal, each family measured
  // on its own scale (mirrors ConstraintResiduals::max_relative_violation).
  // The dual gradient already holds the residuals.
  auto rel_violation = [&](const DualVariables& gr, const BeamformerSet& bs) {
    double m = gr.lam_c / scn.power_center_w;
    for (int n = 0; n < scn.n_rrh; ++n) {
      const double rf =
          eval_rate_surrogate(bundle, RateKind::fronthaul, n, bs);
      m = std::max(m, gr.lam_f[n] / std::max(1.0, std::abs(rf)));
      m = std::max(m, gr.lam_r[n] / scn.power_rrh_w[static_cast<size_t>(n)]);
    }
    for (int q = 0; q < scn.n_eu; ++q)
      m = std::max(m, gr.lam_e[q] /
                          std::max(scn.energy_min_w[static_cast<size_t>(q)],
                                   scn.eh.p0_w > 0 ? scn.eh.p0_w : 1e-12));
    return m;
  };

  SubproblemResult res;
  auto push_row = [&](int s, double d, double gnorm, const DualVariables& eff) {
    InnerRow row;
    row.s = s;
    row.d_value = d;
    row.grad_norm = gnorm;
    row.norm_m = eff.lam_m.norm();
    row.norm_b = eff.lam_b.norm();
    row.norm_e = eff.lam_e.norm();
    row.norm_f = eff.lam_f.norm();
    row.norm_r = eff.lam_r.norm();
    row.lam_c = eff.lam_c;
    res.trace.rows.push_back(row);
  };

  DualVariables lt = DualVariables::zero(scn);
  MomentumState mstate = MomentumState::start(scn);
  double nu = nu0;
  int solves = 0;

  struct Trial {
    DualVariables lt, eff, g;
    BeamformerSet v;
    double d = 0.0;
    bool finite = false;
  };
  auto evaluate = [&](DualVariables lt_next) {
    Trial t;
    t.lt = std::move(lt_next);
    if (!all_finite(t.lt)) return t;
    t.eff = unscale(t.lt);
    t.v = primal_minimizers(t.eff, bundle, scn);
    t.g = dual_gradient(t.eff, t.v, bundle, scn);
    t.d = prox_value(t.v) + dot(t.eff, t.g);
    ++solves;
    t.finite = std::isfinite(t.d);
    return t;
  };

  DualVariables eff = unscale(lt);
  BeamformerSet vcur = primal_minimizers(eff, bundle, scn);
  DualVariables g = dual_gradient(eff, vcur, bundle, scn);
  double d_cur = prox_value(vcur) + dot(eff, g);
  ++solves;
  push_row(0, d_cur, dual_norm(scale_grad(g)), eff);

  // The zero seed lies outside the dual domain (the simplex sums are not yet
  // pinned), so its value D=0 can exceed the in-domain optimum. Descent
  // safeguards and best-iterate tracking only engage once the iterate has
  // been projected into the domain.
  double d_best = d_cur;
  DualVariables eff_best = eff;
  BeamformerSet v_best = vcur;
  double viol_cur = rel_violation(g, vcur);
  bool converged = false;
  int accepted = 0;
  int accept_streak = 0;

  while (accepted < max_inner) {
    const DualVariables gs = scale_grad(g);
    DualVariables mu = opts.accelerated ? step_accelerated(lt, gs, nu, mstate)
                                        : step_plain(lt, gs, nu);
    Trial t = evaluate(project_duals(mu, alpha_scaled, scn.group_of));
    const double slack = 1e-12 * std::max(1.0, std::abs(d_cur));

    if (opts.accelerated && accepted >= 1 && (!t.finite || t.d < d_cur - slack)) {
      // Momentum overshoot. The double extrapolation is unstable along flat
      // dual directions (slack constraints), so discard the trial, restart
      // the schedule at the current iterate and retake the step, which is a
      // plain step at beta = 0.
      mstate = MomentumState::start(scn);
      mu = step_accelerated(lt, gs, nu, mstate);
      t = evaluate(project_duals(mu, alpha_scaled, scn.group_of));
      if (!t.finite || t.d < d_cur - slack) {
        // Even the restarted step drops D: the step size itself is too
        // large, so shrink it and retry rather than accept a descent.
        mstate = MomentumState::start(scn);
        accept_streak = 0;
        nu *= 0.5;
        if (nu < nu0 * 1e-15) {
          converged = viol_cur <= opts.feas_tol;
          break;
        }
        continue;
      }
    } else if (!opts.accelerated && accepted >= 1 && opts.backtrack &&
               (!t.finite || t.d < d_cur - slack)) {
      accept_streak = 0;
      nu *= 0.5;
      if (nu < nu0 * 1e-15) {
        // Step size exhausted: no ascent direction left. Certify only if
        // the current primal already satisfies the relaxed constraints.
        converged = viol_cur <= opts.feas_tol;
        break;
      }
      continue;
    }
    if (!t.finite) break;

    const double d_prev = d_cur;
    lt = t.lt;
    eff = t.eff;
    vcur = t.v;
    g = t.g;
    d_cur = t.d;
    viol_cur = rel_violation(g, vcur);
    ++accepted;
    // Let the step size recover after backtracking so progress does not stay
    // pinned at the most cautious scale ever visited. Growth waits for a
    // streak of clean accepts; growing on every accept sustains a limit
    // cycle of overshoot and halving around the optimum.
    if (++accept_streak >= 3) nu = std::min(nu * 1.3, nu0);
    push_row(accepted, d_cur, dual_norm(scale_grad(g)), eff);
    if (accepted == 1 || d_cur > d_best) {
      d_best = d_cur;
      eff_best = eff;
      v_best = vcur;
    }
    if (accepted >= 2 &&
        std::abs(d_cur - d_prev) <= tol * std::max(1.0, std::abs(d_cur)) &&
        viol_cur <= opts.feas_tol) {
      converged = true;
      break;
    }
  }

  res.converged = converged;
  res.iterations = accepted;
  res.total_solves = solves;
  if (converged) {
    res.v = vcur;
    res.duals = eff;
    res.d_value = d_cur;
  } else {
    res.v = v_best;
    res.duals = eff_best;
    res.d_value = d_best;
  }
  res.service_rates = surrogate_service_rates(bundle, res.v, scn);
  return res;
}

}  // namespace cranbf
