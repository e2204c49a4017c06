#pragma once

// Charge-controlled memcapacitor: behavioral model of the two-OTA + buffer
// emulator, its internal node quantities, and sinusoidal hysteresis sweeps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "memcap/error.hpp"

namespace memcap {

/// Lumped circuit constants of one emulator. Transistor geometry and
/// mobility are folded into `k`.
struct MemcapParams {
  double c1 = 1e-9;     // F
  double c2 = 100e-9;   // F
  double r = 10e3;      // ohm
  double k = 2e-4;      // A/V^2
  double gm1 = 1e-4;    // S
  double v_ss = 0.0;    // V, single positive supply
  double v_th = 0.45;   // V
  double v_dd = 1.8;    // V
  int sign = +1;        // branch of M_C = beta -/+ alpha*sigma; +1 selects beta - alpha*sigma
  std::optional<double> mc_floor;  // F^-1; unset means beta / 100

  /// sigma-independent elastance, (1 + V_SS + V_th) / C1. The dimensionless
  /// 1 is added to volts exactly as the device law is written.
  [[nodiscard]] double beta() const noexcept { return (1.0 + v_ss + v_th) / c1; }

  /// Elastance slope with respect to sigma, R K gm1 / (C1^2 C2).
  [[nodiscard]] double alpha() const noexcept { return (r * k * gm1) / (c1 * c1 * c2); }

  [[nodiscard]] double resolved_floor() const noexcept {
    return mc_floor.value_or(beta() / 100.0);
  }

  /// Throws InvalidParameter naming the first offending field.
  void validate() const {
    auto finite_positive = [](const char* name, double v) {
      if (!std::isfinite(v) || v <= 0.0) throw InvalidParameter(name, "must be finite and > 0");
    };
    finite_positive("c1", c1);
    finite_positive("c2", c2);
    finite_positive("r", r);
    if (!std::isfinite(k) || k < 0.0) throw InvalidParameter("k", "must be finite and >= 0");
    finite_positive("gm1", gm1);
    if (!std::isfinite(v_ss)) throw InvalidParameter("v_ss", "must be finite");
    if (!std::isfinite(v_th) || v_th < 0.0) throw InvalidParameter("v_th", "must be finite and >= 0");
    finite_positive("v_dd", v_dd);
    if (sign != 1 && sign != -1) throw InvalidParameter("sign", "must be +1 or -1");
    if (mc_floor) finite_positive("mc_floor", *mc_floor);
    const double b = beta();
    const double a = alpha();
    if (!std::isfinite(b)) throw InvalidParameter("beta", "derived value is not finite");
    if (!std::isfinite(a)) throw InvalidParameter("alpha", "derived value is not finite");
    if (!(b > resolved_floor())) throw InvalidParameter("mc_floor", "must be below beta");
  }
};

struct MemcapState {
  double sigma = 0.0;  // C*s, time integral of charge
  double q = 0.0;      // C
  double t = 0.0;      // s
};

/// Node quantities of the emulator circuit for the current state.
struct EmulatorInternals {
  double v_c1 = 0.0;  // voltage across C1, q / C1
  double v_b2 = 0.0;  // charge-control voltage across C2, gm1 sigma / (C1 C2)
  double gm2 = 0.0;   // transconductance of OTA-2, K (V_b2 - V_SS - V_th)
  double v_r = 0.0;   // drop across R; the buffer mirrors it to V_N'
};

class Device {
 public:
  explicit Device(const MemcapParams& params) : params_(params) {
    params_.validate();
    beta_ = params_.beta();
    alpha_ = params_.alpha();
    floor_ = params_.resolved_floor();
    sigma_limit_ = alpha_ > 0.0 ? (beta_ - floor_) / alpha_
                                : std::numeric_limits<double>::infinity();
    last_elastance_ = beta_;
  }

  [[nodiscard]] const MemcapParams& params() const noexcept { return params_; }
  [[nodiscard]] const MemcapState& state() const noexcept { return state_; }
  [[nodiscard]] double beta() const noexcept { return beta_; }
  [[nodiscard]] double alpha() const noexcept { return alpha_; }
  [[nodiscard]] double mc_floor() const noexcept { return floor_; }

  /// sigma is confined to [lo, hi] so that the un-floored elastance stays in
  /// [mc_floor, 2 beta - mc_floor]. Unbounded when alpha = 0.
  [[nodiscard]] std::pair<double, double> sigma_window() const noexcept {
    return {-sigma_limit_, sigma_limit_};
  }

  /// Number of steps where the sigma update hit the window edge.
  [[nodiscard]] std::uint64_t clamp_events() const noexcept { return clamp_events_; }

  /// beta - sign*alpha*sigma without the floor.
  [[nodiscard]] double raw_memcapacitance() const noexcept {
    return beta_ - params_.sign * alpha_ * state_.sigma;
  }

  /// Elastance M_C in F^-1. Capacitance is its reciprocal.
  [[nodiscard]] double memcapacitance() const noexcept {
    return std::max(raw_memcapacitance(), floor_);
  }

  /// Elastance used by the most recent step (beta before the first step).
  [[nodiscard]] double last_elastance() const noexcept { return last_elastance_; }

  /// Forward-Euler step: q = v / M_C(sigma), then sigma += q dt.
  double step(double v_in, double dt) {
    if (!std::isfinite(v_in)) throw NonFinite("step: v_in is not finite");
    if (!std::isfinite(dt) || dt <= 0.0) throw NonFinite("step: dt must be finite and > 0");
    const double m = memcapacitance();
    const double q = v_in / m;
    double sigma = state_.sigma + q * dt;
    if (sigma > sigma_limit_) {
      sigma = sigma_limit_;
      ++clamp_events_;
    } else if (sigma < -sigma_limit_) {
      sigma = -sigma_limit_;
      ++clamp_events_;
    }
    state_.q = q;
    state_.sigma = sigma;
    state_.t += dt;
    last_elastance_ = m;
    return q;
  }

  [[nodiscard]] EmulatorInternals emulator_internals() const noexcept {
    const auto& p = params_;
    EmulatorInternals e;
    e.v_c1 = state_.q / p.c1;
    e.v_b2 = p.gm1 * state_.sigma / (p.c1 * p.c2);
    e.gm2 = p.k * (e.v_b2 - p.v_ss - p.v_th);
    e.v_r = e.gm2 * (state_.q / p.c1) * p.r;
    return e;
  }

  /// Place the device at a given sigma (clamped into the window); q resets to 0.
  void set_sigma(double sigma) noexcept {
    state_.sigma = std::clamp(sigma, -sigma_limit_, sigma_limit_);
    state_.q = 0.0;
  }

  /// Reachable capacitance range [1/(2 beta - floor), 1/floor] over the window.
  [[nodiscard]] std::pair<double, double> capacitance_range() const noexcept {
    return {1.0 / (2.0 * beta_ - floor_), 1.0 / floor_};
  }

 private:
  MemcapParams params_;
  MemcapState state_;
  double beta_ = 0.0;
  double alpha_ = 0.0;
  double floor_ = 0.0;
  double sigma_limit_ = 0.0;
  double last_elastance_ = 0.0;
  std::uint64_t clamp_events_ = 0;
};

struct SweepConfig {
  double amplitude = 1.0;     // V
  double frequency = 1e3;     // Hz
  std::size_t periods = 3;
  std::size_t steps_per_period = 1000;
  /// |v| below this counts as a zero crossing for pinch_residual; unset means
  /// 1e-12 * amplitude.
  std::optional<double> v_eps;

  void validate() const {
    if (!std::isfinite(amplitude) || amplitude <= 0.0)
      throw InvalidParameter("amplitude", "must be finite and > 0");
    if (!std::isfinite(frequency) || frequency <= 0.0)
      throw InvalidParameter("frequency", "must be finite and > 0");
    if (periods < 1) throw InvalidParameter("periods", "must be >= 1");
    if (steps_per_period < 100) throw InvalidParameter("steps_per_period", "must be >= 100");
    if (v_eps && !(*v_eps >= 0.0)) throw InvalidParameter("v_eps", "must be >= 0");
  }
};

struct HysteresisSample {
  double t = 0.0;      // s
  double v = 0.0;      // V
  double q = 0.0;      // C
  double c_mem = 0.0;  // F
};

struct HysteresisResult {
  std::vector<HysteresisSample> samples;
  double lobe_area = 0.0;       // V*C
  double pinch_residual = 0.0;  // C
  std::uint64_t clamp_events = 0;
  double final_sigma = 0.0;
};

namespace detail {

// |shoelace| of a polygon given as parallel coordinate arrays; implicitly closed.
inline double shoelace(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    acc += x[i] * y[j] - x[j] * y[i];
  }
  return 0.5 * std::abs(acc);
}

}  // namespace detail

/// Area enclosed by the q-v trajectory of one period, as the sum of the two
/// half-period lobes. Each lobe runs origin to origin and the two have
/// opposite orientation, so they are measured separately.
///
/// The shoelace runs on (v, q - v/beta): a shear, so areas are unchanged,
/// but the linear part of the loop no longer contributes rounding noise.
inline double lobe_area(std::span<const HysteresisSample> period, double beta) {
  if (period.size() < 3) return 0.0;
  std::vector<double> v(period.size());
  std::vector<double> d(period.size());
  for (std::size_t i = 0; i < period.size(); ++i) {
    v[i] = period[i].v;
    d[i] = period[i].q - period[i].v / beta;
  }
  const std::size_t half = (period.size() - 1) / 2;
  const std::span<const double> vs(v);
  const std::span<const double> ds(d);
  return detail::shoelace(vs.first(half + 1), ds.first(half + 1)) +
         detail::shoelace(vs.subspan(half), ds.subspan(half));
}

/// Drive v(t) = A sin(2 pi f t) through a fresh device and record the q-v loop.
/// Sample 0 is the zero state at t = 0; there are periods*steps_per_period + 1
/// samples. Samples at multiples of half a period are driven with exactly 0 V.
inline HysteresisResult hysteresis_sweep(const MemcapParams& params, const SweepConfig& cfg) {
  cfg.validate();
  Device dev(params);
  const std::size_t spp = cfg.steps_per_period;
  const std::size_t total = cfg.periods * spp;
  const double dt = 1.0 / (cfg.frequency * static_cast<double>(spp));

  HysteresisResult out;
  out.samples.reserve(total + 1);
  out.samples.push_back({0.0, 0.0, 0.0, 1.0 / dev.memcapacitance()});
  for (std::size_t i = 1; i <= total; ++i) {
    const std::size_t phase = i % spp;
    const double v = (2 * phase) % spp == 0
                         ? 0.0
                         : cfg.amplitude * std::sin(2.0 * std::numbers::pi *
                                                    static_cast<double>(phase) /
                                                    static_cast<double>(spp));
    const double q = dev.step(v, dt);
    out.samples.push_back({static_cast<double>(i) * dt, v, q, 1.0 / dev.last_elastance()});
  }

  const double v_eps = cfg.v_eps.value_or(1e-12 * cfg.amplitude);
  for (const auto& s : out.samples) {
    if (std::abs(s.v) < v_eps || s.v == 0.0) out.pinch_residual = std::max(out.pinch_residual, std::abs(s.q));
  }
  out.lobe_area = lobe_area(std::span<const HysteresisSample>(out.samples).last(spp + 1), dev.beta());
  out.clamp_events = dev.clamp_events();
  out.final_sigma = dev.state().sigma;
  return out;
}

inline HysteresisResult hysteresis_sweep(const MemcapParams& params, double amplitude,
                                         double frequency, std::size_t periods,
                                         std::size_t steps_per_period) {
  SweepConfig cfg;
  cfg.amplitude = amplitude;
  cfg.frequency = frequency;
  cfg.periods = periods;
  cfg.steps_per_period = steps_per_period;
  return hysteresis_sweep(params, cfg);
}

}  // namespace memcap
