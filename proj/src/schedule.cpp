#include "coind/schedule.hpp"

#include <cmath>

namespace coind {

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConstraintError("schedule requires T >= 2");
  if (!(beta_start > 0.0)) throw ConstraintError("schedule requires beta_start > 0");
  if (!(beta_start <= beta_end)) throw ConstraintError("schedule requires beta_start <= beta_end");
  if (!(beta_end < 1.0)) throw ConstraintError("schedule requires beta_end < 1");

  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alpha_bars.resize(T);
  double abar = 1.0;
  for (int i = 0; i < T; ++i) {
    s.betas[i] = beta_start + (beta_end - beta_start) * i / static_cast<double>(T - 1);
    abar *= 1.0 - s.betas[i];
    s.alpha_bars[i] = abar;
  }
  return s;
}

NoiseSchedule default_schedule() {
  const int T = 200;
  const double scale = 1000.0 / T;
  return build_schedule(T, 1e-4 * scale, 0.02 * scale);
}

static void check_t(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T) throw ConstraintError("timestep out of range [1, T]");
}

Vec perturb(const Vec& x0, int t, const Vec& eps, const NoiseSchedule& schedule) {
  check_t(t, schedule);
  if (x0.size() != eps.size()) throw ShapeError("perturb: x0 and eps sizes differ");
  const double abar = schedule.alpha_bar(t);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

Vec eps_to_score(const Vec& eps_hat, int t, const NoiseSchedule& schedule) {
  check_t(t, schedule);
  return -eps_hat / std::sqrt(1.0 - schedule.alpha_bar(t));
}

ConditionVector mask_condition(const ConditionVector& cond, double p_uncond, Rng& rng) {
  if (p_uncond < 0.0 || p_uncond >= 1.0)
    throw ConstraintError("mask_condition requires 0 <= p_uncond < 1");
  ConditionVector out = cond;
  for (int& v : out) {
    if (rng.uniform() < p_uncond) v = kNull;
  }
  return out;
}

}  // namespace coind
