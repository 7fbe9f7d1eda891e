#pragma once

#include "cranbf/numerics.hpp"

#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cranbf {

struct InvalidConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double dbm_to_watts(double dbm) {
  return std::pow(10.0, (dbm - 30.0) / 10.0);
}

inline double watts_to_dbm(double w) {
  return 10.0 * std::log10(w) + 30.0;
}

/// Nonlinear harvester parameters: logistic transfer with sensitivity
/// threshold p0_w and saturation level pmax_w.
struct EhParams {
  double iota1 = 116.0;    // logistic steepness, 1/W
  double iota2 = 2.3;      // logistic offset
  double p0_w = 8.0e-5;    // sensitivity threshold (zero harvest below)
  double pmax_w = 0.0375;  // saturation power
};

/// Full problem description: dimensions, powers, harvester model, channel
/// model, and solver defaults. All power/energy values are SI watts.
struct Scenario {
  // Topology.
  int n_rrh = 25;
  int n_iu = 9;
  int n_eu = 4;
  int n_group = 3;
  int ant_center = 16;   // L
  int ant_rrh = 4;       // M
  int ant_iu = 2;        // T_I
  int ant_eu = 2;        // T_E
  int streams_access = 2;     // d_a
  int streams_fronthaul = 2;  // d_f

  // Group membership of each information user (0-based group index).
  std::vector<int> group_of;

  // Service priorities, index 0 = broadcast service, 1..G = groups.
  std::vector<double> alpha;

  // Power budgets and noise levels.
  std::vector<double> power_rrh_w;  // per-RRH transmit cap p_n
  double power_center_w = dbm_to_watts(40.0);
  double noise_access_w = dbm_to_watts(-94.0);     // delta_a^2
  double noise_fronthaul_w = dbm_to_watts(-102.0);  // sigma_f^2

  // Energy users.
  std::vector<double> energy_min_w;  // e_q requirements
  EhParams eh;

  // Channel model: log-distance path loss with Rayleigh fading.
  double area_side_m = 300.0;
  double pl0_db = 30.0;      // reference loss at d0 = 1 m
  double pl_exp_access = 3.0;
  double pl_exp_fronthaul = 2.5;
  double gain_center_dbi = 9.0;
  double gain_rrh_dbi = 0.0;
  double min_dist_m = 1.0;

  // Solver defaults.
  double rho1 = 1.0e5;        // proximal weight on access beamformers
  double rho2 = 1.0e4;        // proximal weight on fronthaul beamformers
  double nu = 1.0;            // dual ascent step
  double epsilon_smooth = 1.0e-10;  // reweighting floor for the l1 load
  double tol_inner = 1.0e-4;
  double tol_outer = 1.0e-4;
  int max_inner = 500;
  int max_outer = 100;
  double feas_tol = 1.0e-9;

  std::uint64_t seed = 0;

  int mn() const { return n_rrh * ant_rrh; }
  int n_service() const { return n_group + 1; }

  /// Users belonging to group g (0-based).
  std::vector<int> group_members(int g) const {
    std::vector<int> out;
    for (int k = 0; k < n_iu; ++k)
      if (group_of[static_cast<size_t>(k)] == g) out.push_back(k);
    return out;
  }

  std::vector<std::string> validate() const;
  void require_valid() const;

  /// Fills group_of (contiguous blocks), alpha (uniform), per-RRH powers and
  /// energy requirements from scalar values. Call after editing counts.
  void finish_defaults(double power_rrh_dbm_value = 30.0,
                       double energy_min_value_w = 2.0e-3) {
    group_of.resize(static_cast<size_t>(n_iu));
    for (int k = 0; k < n_iu; ++k)
      group_of[static_cast<size_t>(k)] = (k * n_group) / n_iu;
    alpha.assign(static_cast<size_t>(n_service()), 1.0);
    power_rrh_w.assign(static_cast<size_t>(n_rrh),
                       dbm_to_watts(power_rrh_dbm_value));
    energy_min_w.assign(static_cast<size_t>(n_eu), energy_min_value_w);
  }

  /// Urban-macro default instance (25 RRHs over a 300 m square).
  static Scenario defaults() {
    Scenario s;
    s.finish_defaults();
    return s;
  }

  /// Small instance used throughout the test suite: 4 RRHs on a 60 m square
  /// with a harvester model rescaled to the microwatt powers reachable at
  /// that range.
  static Scenario desk_instance() {
    Scenario s;
    s.n_rrh = 4;
    s.n_iu = 4;
    s.n_eu = 2;
    s.n_group = 2;
    s.ant_center = 4;
    s.ant_rrh = 2;
    s.ant_iu = 1;
    s.ant_eu = 1;
    s.streams_access = 1;
    s.streams_fronthaul = 1;
    s.area_side_m = 60.0;
    s.power_center_w = dbm_to_watts(48.0);
    s.eh.iota1 = 3.0e7;
    s.eh.iota2 = 2.3;
    s.eh.p0_w = 1.0e-8;
    s.eh.pmax_w = 1.0e-6;
    s.finish_defaults(30.0, 1.0e-8);
    return s;
  }
};

inline std::vector<std::string> Scenario::validate() const {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  check(n_rrh >= 1, "n_rrh must be >= 1");
  check(n_iu >= 1, "n_iu must be >= 1");
  check(n_eu >= 0, "n_eu must be >= 0");
  check(n_group >= 1, "n_group must be >= 1");
  check(n_group <= n_iu, "n_group must not exceed n_iu");
  check(ant_center >= 1, "ant_center must be >= 1");
  check(ant_rrh >= 1, "ant_rrh must be >= 1");
  check(ant_iu >= 1, "ant_iu must be >= 1");
  check(ant_eu >= 1 || n_eu == 0, "ant_eu must be >= 1");
  check(streams_access >= 1 && streams_access <= ant_iu,
        "streams_access must be in [1, ant_iu]");
  check(streams_access <= mn(), "streams_access must not exceed n_rrh*ant_rrh");
  check(streams_fronthaul >= 1 && streams_fronthaul <= ant_rrh,
        "streams_fronthaul must be in [1, ant_rrh]");
  check(streams_fronthaul <= ant_center,
        "streams_fronthaul must not exceed ant_center");
  if (group_of.size() != static_cast<size_t>(n_iu)) {
    bad.push_back("group_of must list one group per information user");
  } else {
    std::vector<int> count(static_cast<size_t>(n_group), 0);
    for (int k = 0; k < n_iu; ++k) {
      const int g = group_of[static_cast<size_t>(k)];
      if (g < 0 || g >= n_group)
        bad.push_back("group_of[" + std::to_string(k) + "] out of range");
      else
        ++count[static_cast<size_t>(g)];
    }
    for (int g = 0; g < n_group; ++g)
      if (count[static_cast<size_t>(g)] == 0)
        bad.push_back("group " + std::to_string(g + 1) + " has no members");
  }
  if (alpha.size() != static_cast<size_t>(n_service()))
    bad.push_back("alpha must have n_group+1 entries");
  else
    for (size_t j = 0; j < alpha.size(); ++j)
      check(alpha[j] >= 0.0 && std::isfinite(alpha[j]),
            "alpha[" + std::to_string(j) + "] must be finite and >= 0");
  if (power_rrh_w.size() != static_cast<size_t>(n_rrh))
    bad.push_back("power_rrh_w must have one entry per RRH");
  else
    for (size_t n = 0; n < power_rrh_w.size(); ++n)
      check(power_rrh_w[n] > 0.0 && std::isfinite(power_rrh_w[n]),
            "power_rrh_w[" + std::to_string(n) + "] must be positive");
  check(power_center_w > 0.0 && std::isfinite(power_center_w),
        "power_center_w must be positive");
  check(noise_access_w > 0.0, "noise_access_w must be positive");
  check(noise_fronthaul_w > 0.0, "noise_fronthaul_w must be positive");
  if (energy_min_w.size() != static_cast<size_t>(n_eu))
    bad.push_back("energy_min_w must have one entry per energy user");
  else
    for (size_t q = 0; q < energy_min_w.size(); ++q)
      check(energy_min_w[q] >= 0.0 && std::isfinite(energy_min_w[q]),
            "energy_min_w[" + std::to_string(q) + "] must be >= 0");
  check(eh.iota1 > 0.0, "eh.iota1 must be positive");
  check(eh.p0_w >= 0.0, "eh.p0_w must be >= 0");
  check(eh.pmax_w > 0.0, "eh.pmax_w must be positive");
  check(area_side_m > 0.0, "area_side_m must be positive");
  check(min_dist_m > 0.0, "min_dist_m must be positive");
  check(min_dist_m < area_side_m, "min_dist_m must be below area_side_m");
  check(pl_exp_access >= 0.0, "pl_exp_access must be >= 0");
  check(pl_exp_fronthaul >= 0.0, "pl_exp_fronthaul must be >= 0");
  check(rho1 > 0.0, "rho1 must be positive");
  check(rho2 > 0.0, "rho2 must be positive");
  check(nu > 0.0, "nu must be positive");
  check(epsilon_smooth > 0.0, "epsilon_smooth must be positive");
  check(tol_inner > 0.0, "tol_inner must be positive");
  check(tol_outer > 0.0, "tol_outer must be positive");
  check(max_inner >= 1, "max_inner must be >= 1");
  check(max_outer >= 1, "max_outer must be >= 1");
  check(feas_tol > 0.0, "feas_tol must be positive");
  return bad;
}

inline void Scenario::require_valid() const {
  const auto bad = validate();
  if (bad.empty()) return;
  std::ostringstream msg;
  msg << "invalid scenario (" << bad.size() << " problems):";
  for (const auto& b : bad) msg << "\n  - " << b;
  throw InvalidConfig(msg.str());
}

/// Channel realizations. Storage is Eigen column-major throughout.
///  h[k] : ant_iu  x (n_rrh*ant_rrh)   access link to information user k
///  f[q] : ant_eu  x (n_rrh*ant_rrh)   energy link to energy user q
///  g[n] : ant_rrh x ant_center        fronthaul link to RRH n
struct ChannelSet {
  std::vector<cmat> h;
  std::vector<cmat> f;
  std::vector<cmat> g;
};

namespace detail {

/// Deterministic draws on top of mt19937_64. Distribution code is written
/// out so that archives are reproducible across standard libraries.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  double uniform01() {  // [0,1)
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Box-Muller pair of independent standard normals.
  std::pair<double, double> normal_pair() {
    double u1 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(t), r * std::sin(t)};
  }

  // Circularly symmetric unit-variance complex Gaussian.
  cplx cn01() {
    const auto [a, b] = normal_pair();
    return cplx(a, b) * std::numbers::sqrt2 * 0.5;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace detail

/// Linear path gain of the log-distance model, antenna gains included.
inline double path_gain(double dist_m, double pl0_db, double pl_exp,
                        double tx_gain_dbi, double rx_gain_dbi,
                        double min_dist_m = 1.0) {
  const double d = std::max(dist_m, min_dist_m);
  const double loss_db = pl0_db + 10.0 * pl_exp * std::log10(d);
  return std::pow(10.0, (tx_gain_dbi + rx_gain_dbi - loss_db) / 10.0);
}

/// Draws node positions and Rayleigh-faded channels for the given template.
/// The same template and seed always produce a bit-identical ChannelSet.
inline ChannelSet generate(const Scenario& scn, std::uint64_t seed,
                           Scenario* resolved = nullptr) {
  scn.require_valid();
  detail::Draw draw(seed);

  struct P {
    double x, y;
  };
  const double side = scn.area_side_m;
  const P center{0.5 * side, 0.5 * side};
  auto dist = [](P a, P b) {
    return std::hypot(a.x - b.x, a.y - b.y);
  };

  auto place = [&](auto&& ok) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      P p{draw.uniform(0.0, side), draw.uniform(0.0, side)};
      if (ok(p)) return p;
    }
    throw InvalidConfig("generate: cannot satisfy min_dist_m placement");
  };

  std::vector<P> rrh(static_cast<size_t>(scn.n_rrh));
  for (auto& p : rrh)
    p = place([&](P c) { return dist(c, center) >= scn.min_dist_m; });
  auto clear_of_rrh = [&](P c) {
    for (const auto& r : rrh)
      if (dist(c, r) < scn.min_dist_m) return false;
    return true;
  };
  std::vector<P> iu(static_cast<size_t>(scn.n_iu));
  for (auto& p : iu) p = place(clear_of_rrh);
  std::vector<P> eu(static_cast<size_t>(scn.n_eu));
  for (auto& p : eu) p = place(clear_of_rrh);

  auto faded_block = [&](int rows, int cols, double gain) {
    cmat blk(rows, cols);
    const double amp = std::sqrt(gain);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) blk(i, j) = amp * draw.cn01();
    return blk;
  };

  ChannelSet ch;
  ch.h.reserve(static_cast<size_t>(scn.n_iu));
  for (int k = 0; k < scn.n_iu; ++k) {
    cmat hk(scn.ant_iu, scn.mn());
    for (int n = 0; n < scn.n_rrh; ++n) {
      const double g =
          path_gain(dist(iu[static_cast<size_t>(k)], rrh[static_cast<size_t>(n)]),
                    scn.pl0_db, scn.pl_exp_access, scn.gain_rrh_dbi, 0.0,
                    scn.min_dist_m);
      hk.middleCols(n * scn.ant_rrh, scn.ant_rrh) =
          faded_block(scn.ant_iu, scn.ant_rrh, g);
    }
    ch.h.push_back(std::move(hk));
  }
  ch.f.reserve(static_cast<size_t>(scn.n_eu));
  for (int q = 0; q < scn.n_eu; ++q) {
    cmat fq(scn.ant_eu, scn.mn());
    for (int n = 0; n < scn.n_rrh; ++n) {
      const double g =
          path_gain(dist(eu[static_cast<size_t>(q)], rrh[static_cast<size_t>(n)]),
                    scn.pl0_db, scn.pl_exp_access, scn.gain_rrh_dbi, 0.0,
                    scn.min_dist_m);
      fq.middleCols(n * scn.ant_rrh, scn.ant_rrh) =
          faded_block(scn.ant_eu, scn.ant_rrh, g);
    }
    ch.f.push_back(std::move(fq));
  }
  ch.g.reserve(static_cast<size_t>(scn.n_rrh));
  for (int n = 0; n < scn.n_rrh; ++n) {
    const double g =
        path_gain(dist(rrh[static_cast<size_t>(n)], center), scn.pl0_db,
                  scn.pl_exp_fronthaul, scn.gain_center_dbi, scn.gain_rrh_dbi,
                  scn.min_dist_m);
    ch.g.push_back(faded_block(scn.ant_rrh, scn.ant_center, g));
  }

  if (resolved) {
    *resolved = scn;
    resolved->seed = seed;
  }
  return ch;
}

}  // namespace cranbf
