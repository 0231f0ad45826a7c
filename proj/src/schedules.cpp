#include "agddad/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "agddad/core/io.hpp"

namespace agddad {

uint32_t NoiseSchedule::fingerprint() const {
  char buf[128];
  const int n = std::snprintf(buf, sizeof(buf), "T=%d;bs=%.17g;be=%.17g;kind=linear", T,
                              beta_start, beta_end);
  return crc32_bytes(buf, static_cast<size_t>(n));
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (kind != ScheduleKind::Linear) throw std::invalid_argument("make_schedule: unknown kind");
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: require 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.betas[t] = beta_start + (beta_end - beta_start) * t / static_cast<double>(T - 1);
    s.alphas[t] = 1.0 - s.betas[t];
    prod *= s.alphas[t];
    s.alpha_bars[t] = prod;
  }
  return s;
}

std::vector<int> rescale_steps(const NoiseSchedule& schedule, int n_steps, int t_start) {
  if (n_steps < 1) throw std::invalid_argument("rescale_steps: n_steps must be >= 1");
  if (t_start > schedule.T) throw std::invalid_argument("rescale_steps: t_start exceeds T");
  if (n_steps > t_start) throw std::invalid_argument("rescale_steps: n_steps exceeds t_start");

  const int count = std::max(1, static_cast<int>(static_cast<int64_t>(n_steps) * t_start /
                                                 schedule.T));
  std::vector<int> steps;
  steps.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int idx = static_cast<int>(static_cast<int64_t>(i) * t_start / count);
    if (steps.empty() || steps.back() != idx) steps.push_back(idx);
  }
  std::reverse(steps.begin(), steps.end());
  return steps;  // descending, includes 0
}

NoiseSchedule with_sampling_steps(const NoiseSchedule& schedule, int n_steps, int t_start) {
  NoiseSchedule out = schedule;
  out.sampling_steps = rescale_steps(schedule, n_steps, t_start);
  return out;
}

Image gaussian_like(const Image& proto, Rng& rng) {
  Image eps = Image::zeros_like(proto);
  for (double& x : eps.v) x = rng.normal();
  return eps;
}

ForwardSample q_sample(const Image& x0, int t, const Image& epsilon,
                       const NoiseSchedule& schedule) {
  require_same_shape(x0, epsilon, "q_sample");
  if (t < 0 || t >= schedule.T) throw std::invalid_argument("q_sample: t outside [0, T)");
  const double ab = schedule.alpha_bar(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  ForwardSample fs;
  fs.t = t;
  fs.epsilon = epsilon;
  fs.x_t = Image::zeros_like(x0);
  for (size_t i = 0; i < x0.v.size(); ++i) fs.x_t.v[i] = sa * x0.v[i] + sn * epsilon.v[i];
  return fs;
}

ForwardSample q_sample(const Image& x0, int t, Rng& rng, const NoiseSchedule& schedule) {
  return q_sample(x0, t, gaussian_like(x0, rng), schedule);
}

}  // namespace agddad
