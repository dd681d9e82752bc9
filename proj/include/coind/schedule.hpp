#pragma once

#include <vector>

#include "coind/common.hpp"

namespace coind {

/// Linear DDPM-style variance schedule. Timesteps are 1-based: t in [1, T].
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_t, index t-1
  std::vector<double> alpha_bars;  // abar_t = prod_{i<=t} (1 - beta_i)

  double beta(int t) const { return betas.at(t - 1); }
  double alpha_bar(int t) const { return alpha_bars.at(t - 1); }
};

/// betas linearly spaced on [beta_start, beta_end], alpha_bars by running
/// product.
NoiseSchedule build_schedule(int T, double beta_start, double beta_end);

/// Desk-scale default: T=200 with the [1e-4, 0.02] range scaled by 1000/T.
NoiseSchedule default_schedule();

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Vec perturb(const Vec& x0, int t, const Vec& eps, const NoiseSchedule& schedule);

/// s = -eps_hat / sqrt(1 - abar_t)
Vec eps_to_score(const Vec& eps_hat, int t, const NoiseSchedule& schedule);

/// Null token for an unconditioned attribute slot.
inline constexpr int kNull = -1;

/// Per-attribute condition with null tokens; entry i is a value index or
/// kNull.
using ConditionVector = std::vector<int>;

inline ConditionVector all_null(int n) { return ConditionVector(n, kNull); }

/// ConditionVector where only attribute i is set.
inline ConditionVector only_set(int n, int attribute, int value) {
  ConditionVector c(n, kNull);
  c[attribute] = value;
  return c;
}

/// Independently replaces each entry by the null token with probability
/// p_uncond.
ConditionVector mask_condition(const ConditionVector& cond, double p_uncond, Rng& rng);

}  // namespace coind
