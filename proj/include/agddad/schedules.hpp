#pragma once

#include <cstdint>
#include <vector>

#include "agddad/core/image.hpp"
#include "agddad/core/rng.hpp"

namespace agddad {

enum class ScheduleKind { Linear };

// Diffusion time discretization: variance schedule, cumulative signal decay
// and the rescaled list of reverse-sampling steps. Immutable after
// construction and safe to share across threads.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;       // size T, each in (0,1)
  std::vector<double> alphas;      // 1 - beta[t]
  std::vector<double> alpha_bars;  // prod_{s<=t} alpha[s], strictly decreasing
  std::vector<int> sampling_steps; // descending, subset of [0, t_start), ends at 0

  double alpha_bar(int t) const { return alpha_bars.at(static_cast<size_t>(t)); }

  // Stable identity of the variance schedule; checkpoints embed it so a
  // model cannot silently be sampled with a different schedule.
  uint32_t fingerprint() const;
};

struct ForwardSample {
  Image x_t;
  Image epsilon;
  int t = 0;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                            ScheduleKind kind = ScheduleKind::Linear);

// Uniform-stride descending step grid over [0, t_start): floor(n_steps *
// t_start / T) indices, deduplicated, always ending at 0.
std::vector<int> rescale_steps(const NoiseSchedule& schedule, int n_steps, int t_start);

// Returns a copy of the schedule with sampling_steps populated.
NoiseSchedule with_sampling_steps(const NoiseSchedule& schedule, int n_steps, int t_start);

// Closed-form forward draw x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
ForwardSample q_sample(const Image& x0, int t, const Image& epsilon,
                       const NoiseSchedule& schedule);

// Convenience: draws epsilon ~ N(0, I) internally.
ForwardSample q_sample(const Image& x0, int t, Rng& rng, const NoiseSchedule& schedule);

Image gaussian_like(const Image& proto, Rng& rng);

}  // namespace agddad
