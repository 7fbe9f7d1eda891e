#pragma once

#include "cranbf/numerics.hpp"
#include "cranbf/scenario.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace cranbf {

struct InfiniteRequirement : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Access beamformers v[j] (j = 0 broadcast, 1..G groups, each MN x d_a)
/// and fronthaul beamformers u[n] (each L x d_f).
struct BeamformerSet {
  std::vector<cmat> v;
  std::vector<cmat> u;

  static BeamformerSet zero(const Scenario& scn) {
    BeamformerSet bs;
    bs.v.assign(static_cast<size_t>(scn.n_service()),
                cmat::Zero(scn.mn(), scn.streams_access));
    bs.u.assign(static_cast<size_t>(scn.n_rrh),
                cmat::Zero(scn.ant_center, scn.streams_fronthaul));
    return bs;
  }
};

/// Rows of the stacked access beamformer owned by RRH n.
inline auto rrh_block(const cmat& v, const Scenario& scn, int n) {
  return v.middleRows(n * scn.ant_rrh, scn.ant_rrh);
}

inline auto rrh_block(cmat& v, const Scenario& scn, int n) {
  return v.middleRows(n * scn.ant_rrh, scn.ant_rrh);
}

namespace detail {

/// Snaps access blocks whose power has fallen into the reweighting floor's
/// saturation zone to exact zero. Near the floor the weight 1/(x + eps)
/// stops growing, so the smoothed load keeps charging a dying block most of
/// its rate while the indicator load counts the full rate for any block
/// above zero_tol; first-order steps cannot resolve that gap. The threshold
/// stays a sliver of the power cap, so the physics are unaffected.
inline void clip_small_blocks(BeamformerSet& bs, const Scenario& scn,
                              double zero_tol_rel) {
  for (int n = 0; n < scn.n_rrh; ++n) {
    const double cap = scn.power_rrh_w[static_cast<size_t>(n)];
    const double thr =
        std::min(std::max(100.0 * scn.epsilon_smooth, zero_tol_rel * cap),
                 1.0e-6 * cap);
    for (auto& v : bs.v) {
      auto blk = rrh_block(v, scn, n);
      if (blk.squaredNorm() < thr) blk.setZero();
    }
  }
}

// log2 det(noise I + sum_j B_j B_j^H) for B_j = channel * beamformer.
inline double logdet_cov(const std::vector<const cmat*>& factors, double noise,
                         int dim) {
  cmat x = noise * cmat::Identity(dim, dim);
  for (const cmat* b : factors) x += (*b) * b->adjoint();
  return logdet2_pd(x);
}

}  // namespace detail

/// Broadcast-stage rate of each information user: the broadcast stream is
/// decoded first, every group stream acts as interference.
inline std::vector<double> broadcast_rates(const BeamformerSet& bs,
                                           const ChannelSet& ch,
                                           const Scenario& scn) {
  std::vector<double> out(static_cast<size_t>(scn.n_iu));
  for (int k = 0; k < scn.n_iu; ++k) {
    const cmat& h = ch.h[static_cast<size_t>(k)];
    std::vector<cmat> prod;
    prod.reserve(bs.v.size());
    for (const auto& v : bs.v) prod.push_back(h * v);
    std::vector<const cmat*> interf;
    for (size_t j = 1; j < prod.size(); ++j) interf.push_back(&prod[j]);
    std::vector<const cmat*> total = interf;
    total.push_back(&prod[0]);
    out[static_cast<size_t>(k)] =
        detail::logdet_cov(total, scn.noise_access_w, scn.ant_iu) -
        detail::logdet_cov(interf, scn.noise_access_w, scn.ant_iu);
  }
  return out;
}

/// Multicast-stage rate of each information user after the broadcast stream
/// has been cancelled; other groups interfere.
inline std::vector<double> multicast_rates(const BeamformerSet& bs,
                                           const ChannelSet& ch,
                                           const Scenario& scn) {
  std::vector<double> out(static_cast<size_t>(scn.n_iu));
  for (int k = 0; k < scn.n_iu; ++k) {
    const cmat& h = ch.h[static_cast<size_t>(k)];
    const int gk = scn.group_of[static_cast<size_t>(k)];
    std::vector<cmat> prod;
    for (int g = 1; g <= scn.n_group; ++g)
      prod.push_back(h * bs.v[static_cast<size_t>(g)]);
    std::vector<const cmat*> interf;
    std::vector<const cmat*> total;
    for (int g = 0; g < scn.n_group; ++g) {
      total.push_back(&prod[static_cast<size_t>(g)]);
      if (g != gk) interf.push_back(&prod[static_cast<size_t>(g)]);
    }
    out[static_cast<size_t>(k)] =
        detail::logdet_cov(total, scn.noise_access_w, scn.ant_iu) -
        detail::logdet_cov(interf, scn.noise_access_w, scn.ant_iu);
  }
  return out;
}

/// Network service rates: entry 0 is the broadcast rate (worst user overall),
/// entry g is the rate of group g (worst member).
inline std::vector<double> service_rates(const BeamformerSet& bs,
                                         const ChannelSet& ch,
                                         const Scenario& scn) {
  const auto rb = broadcast_rates(bs, ch, scn);
  const auto rm = multicast_rates(bs, ch, scn);
  std::vector<double> out(static_cast<size_t>(scn.n_service()),
                          std::numeric_limits<double>::infinity());
  for (int k = 0; k < scn.n_iu; ++k) {
    out[0] = std::min(out[0], rb[static_cast<size_t>(k)]);
    auto& slot = out[static_cast<size_t>(scn.group_of[static_cast<size_t>(k)] + 1)];
    slot = std::min(slot, rm[static_cast<size_t>(k)]);
  }
  return out;
}

/// Fronthaul rate toward each RRH; the other RRHs' streams interfere.
inline std::vector<double> fronthaul_rates(const BeamformerSet& bs,
                                           const ChannelSet& ch,
                                           const Scenario& scn) {
  std::vector<double> out(static_cast<size_t>(scn.n_rrh));
  for (int n = 0; n < scn.n_rrh; ++n) {
    const cmat& g = ch.g[static_cast<size_t>(n)];
    std::vector<cmat> prod;
    for (const auto& u : bs.u) prod.push_back(g * u);
    std::vector<const cmat*> interf;
    std::vector<const cmat*> total;
    for (int l = 0; l < scn.n_rrh; ++l) {
      total.push_back(&prod[static_cast<size_t>(l)]);
      if (l != n) interf.push_back(&prod[static_cast<size_t>(l)]);
    }
    out[static_cast<size_t>(n)] =
        detail::logdet_cov(total, scn.noise_fronthaul_w, scn.ant_rrh) -
        detail::logdet_cov(interf, scn.noise_fronthaul_w, scn.ant_rrh);
  }
  return out;
}

/// RF power collected by each energy user across all access streams.
inline std::vector<double> rx_rf_power(const BeamformerSet& bs,
                                       const ChannelSet& ch,
                                       const Scenario& scn) {
  std::vector<double> out(static_cast<size_t>(scn.n_eu), 0.0);
  for (int q = 0; q < scn.n_eu; ++q) {
    const cmat& f = ch.f[static_cast<size_t>(q)];
    double acc = 0.0;
    for (const auto& v : bs.v) acc += (f * v).squaredNorm();
    out[static_cast<size_t>(q)] = acc;
  }
  return out;
}

/// Harvested power as a function of received RF power: logistic transfer,
/// zero below the sensitivity threshold, saturating at pmax_w.
inline double eh_forward(double rf_w, const EhParams& eh) {
  const double d1 = std::exp(-eh.iota1 * eh.p0_w + eh.iota2);
  const double raw =
      eh.pmax_w / d1 *
      ((1.0 + d1) / (1.0 + std::exp(-eh.iota1 * rf_w + eh.iota2)) - 1.0);
  return std::max(0.0, raw);
}

/// Pseudo-inverse of eh_forward: minimum RF power needed to harvest e_w.
/// Returns +infinity when the request meets or exceeds the saturation level.
inline double eh_inverse(double e_w, const EhParams& eh) {
  if (e_w <= 0.0) return 0.0;
  if (e_w >= eh.pmax_w) return std::numeric_limits<double>::infinity();
  const double d1 = std::exp(-eh.iota1 * eh.p0_w + eh.iota2);
  const double d2 = d1 / eh.pmax_w;
  return (eh.iota2 - std::log((1.0 + d1) / (1.0 + d2 * e_w) - 1.0)) / eh.iota1;
}

/// Transmit power spent by each RRH across all access streams.
inline std::vector<double> tx_power_rrh(const BeamformerSet& bs,
                                        const Scenario& scn) {
  std::vector<double> out(static_cast<size_t>(scn.n_rrh), 0.0);
  for (int n = 0; n < scn.n_rrh; ++n)
    for (const auto& v : bs.v)
      out[static_cast<size_t>(n)] += rrh_block(v, scn, n).squaredNorm();
  return out;
}

inline double tx_power_center(const BeamformerSet& bs) {
  double acc = 0.0;
  for (const auto& u : bs.u) acc += u.squaredNorm();
  return acc;
}

/// Fronthaul bits each RRH must carry: the sum of service rates whose
/// beamformer block at that RRH is active. A block counts as active when its
/// squared norm exceeds zero_tol_rel times the RRH power cap.
inline std::vector<double> aggregate_fronthaul_load(
    const BeamformerSet& bs, const std::vector<double>& svc_rates,
    const Scenario& scn, double zero_tol_rel = 1e-12) {
  std::vector<double> out(static_cast<size_t>(scn.n_rrh), 0.0);
  for (int n = 0; n < scn.n_rrh; ++n) {
    const double tol = zero_tol_rel * scn.power_rrh_w[static_cast<size_t>(n)];
    for (size_t j = 0; j < bs.v.size(); ++j)
      if (rrh_block(bs.v[j], scn, n).squaredNorm() > tol)
        out[static_cast<size_t>(n)] += svc_rates[j];
  }
  return out;
}

/// Signed slacks of the coupling constraints; a positive value means the
/// constraint is violated by that amount.
struct ConstraintResiduals {
  std::vector<double> fronthaul;  // load - fronthaul rate, per RRH
  std::vector<double> energy;     // e_q - harvested, per energy user
  std::vector<double> power_rrh;  // tx power - cap, per RRH
  double power_center = 0.0;      // center power - cap

  double max_violation() const {
    double m = power_center;
    for (double x : fronthaul) m = std::max(m, x);
    for (double x : energy) m = std::max(m, x);
    for (double x : power_rrh) m = std::max(m, x);
    return m;
  }

  /// Worst violation with each family measured relative to its own scale.
  double max_relative_violation(const Scenario& scn,
                                const std::vector<double>& rate_f) const {
    double m = power_center / scn.power_center_w;
    for (size_t n = 0; n < fronthaul.size(); ++n)
      m = std::max(m, fronthaul[n] / std::max(1.0, rate_f[n]));
    for (size_t q = 0; q < energy.size(); ++q)
      m = std::max(m, energy[q] / std::max(scn.energy_min_w[q],
                                           scn.eh.p0_w > 0 ? scn.eh.p0_w
                                                           : 1e-12));
    for (size_t n = 0; n < power_rrh.size(); ++n)
      m = std::max(m, power_rrh[n] / scn.power_rrh_w[n]);
    return m;
  }
};

/// Everything the exact model says about one beamformer set.
struct RateReport {
  std::vector<double> rate_broadcast;   // per IU, bits/s/Hz
  std::vector<double> rate_multicast;   // per IU
  std::vector<double> service;          // broadcast + per group
  std::vector<double> rate_fronthaul;   // per RRH
  std::vector<double> load_fronthaul;   // per RRH
  std::vector<double> power_rx_w;       // per EU
  std::vector<double> energy_harvested_w;  // per EU
  std::vector<double> power_tx_rrh_w;   // per RRH
  double power_center_w = 0.0;
  double wsr = 0.0;
  ConstraintResiduals residuals;
};

inline double weighted_sum_rate(const std::vector<double>& svc,
                                const Scenario& scn) {
  double acc = 0.0;
  for (size_t j = 0; j < svc.size(); ++j) acc += scn.alpha[j] * svc[j];
  return acc;
}

inline RateReport compute_report(const BeamformerSet& bs, const ChannelSet& ch,
                                 const Scenario& scn,
                                 double zero_tol_rel = 1e-12) {
  RateReport r;
  r.rate_broadcast = broadcast_rates(bs, ch, scn);
  r.rate_multicast = multicast_rates(bs, ch, scn);
  r.service.assign(static_cast<size_t>(scn.n_service()),
                   std::numeric_limits<double>::infinity());
  for (int k = 0; k < scn.n_iu; ++k) {
    r.service[0] = std::min(r.service[0], r.rate_broadcast[static_cast<size_t>(k)]);
    auto& slot =
        r.service[static_cast<size_t>(scn.group_of[static_cast<size_t>(k)] + 1)];
    slot = std::min(slot, r.rate_multicast[static_cast<size_t>(k)]);
  }
  r.rate_fronthaul = fronthaul_rates(bs, ch, scn);
  r.load_fronthaul = aggregate_fronthaul_load(bs, r.service, scn, zero_tol_rel);
  r.power_rx_w = rx_rf_power(bs, ch, scn);
  r.energy_harvested_w.resize(r.power_rx_w.size());
  for (size_t q = 0; q < r.power_rx_w.size(); ++q)
    r.energy_harvested_w[q] = eh_forward(r.power_rx_w[q], scn.eh);
  r.power_tx_rrh_w = tx_power_rrh(bs, scn);
  r.power_center_w = tx_power_center(bs);
  r.wsr = weighted_sum_rate(r.service, scn);

  r.residuals.fronthaul.resize(static_cast<size_t>(scn.n_rrh));
  for (int n = 0; n < scn.n_rrh; ++n)
    r.residuals.fronthaul[static_cast<size_t>(n)] =
        r.load_fronthaul[static_cast<size_t>(n)] -
        r.rate_fronthaul[static_cast<size_t>(n)];
  r.residuals.energy.resize(static_cast<size_t>(scn.n_eu));
  for (int q = 0; q < scn.n_eu; ++q)
    r.residuals.energy[static_cast<size_t>(q)] =
        scn.energy_min_w[static_cast<size_t>(q)] -
        r.energy_harvested_w[static_cast<size_t>(q)];
  r.residuals.power_rrh.resize(static_cast<size_t>(scn.n_rrh));
  for (int n = 0; n < scn.n_rrh; ++n)
    r.residuals.power_rrh[static_cast<size_t>(n)] =
        r.power_tx_rrh_w[static_cast<size_t>(n)] -
        scn.power_rrh_w[static_cast<size_t>(n)];
  r.residuals.power_center = r.power_center_w - scn.power_center_w;
  return r;
}

}  // namespace cranbf
