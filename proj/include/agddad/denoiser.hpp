#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "agddad/core/image.hpp"
#include "agddad/core/rng.hpp"
#include "agddad/nn/core.hpp"
#include "agddad/schedules.hpp"

namespace agddad {

struct DenoiserConfig {
  int image_size = 64;
  int channels = 1;
  int base_width = 32;   // width doubles per level
  int depth_levels = 2;  // resolutions: image_size / 2^i
  int time_dim = 64;
  int norm_groups = 8;
  int training_steps = 20000;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int checkpoint_every = 1000;
  int threads = 0;

  // Pipeline-level constraints (library code may build smaller toys).
  void validate() const;
};

// Noise-prediction interface; scoring and sampling only ever see this.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Image predict(const Image& x_t, int t) const = 0;
  virtual int channels() const = 0;
};

// Residual UNet with additive skip connections, GroupNorm, SiLU and a
// sinusoidal timestep embedding injected into every residual block.
class UNetDenoiser : public Denoiser {
 public:
  UNetDenoiser(const DenoiserConfig& config, uint64_t init_seed);
  ~UNetDenoiser() override;
  UNetDenoiser(UNetDenoiser&&) noexcept;
  UNetDenoiser& operator=(UNetDenoiser&&) noexcept;

  Image predict(const Image& x_t, int t) const override;
  int channels() const override;

  const DenoiserConfig& config() const;
  size_t param_count() const;
  std::vector<double>& params();
  const std::vector<double>& params() const;
  int64_t trained_steps() const;
  void set_trained_steps(int64_t n);

  // Mean over the batch of per-pixel squared error against the true noise;
  // accumulates d(loss)/d(params) into grad (resized and zeroed inside).
  double loss_and_grad(const std::vector<Image>& x0, const std::vector<int>& ts,
                       const std::vector<Image>& eps, nn::Grad& grad, int threads = 0) const;

  double loss_only(const std::vector<Image>& x0, const std::vector<int>& ts,
                   const std::vector<Image>& eps) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct TrainState {
  int64_t step = 0;
  double loss_ema = 0.0;
  uint64_t rng_seed = 0;
  std::filesystem::path checkpoint_path;
  std::vector<double> ema_trace;  // loss_ema per step, for convergence checks
};

// Pre-sampled (t, epsilon) pairs so the objective can be evaluated
// repeatedly at identical randomness (finite differences, regression tests).
struct NoiseDraws {
  std::vector<int> ts;
  std::vector<Image> eps;
};
NoiseDraws sample_noise_draws(const std::vector<Image>& x0, const NoiseSchedule& schedule,
                              Rng& rng);

double training_loss(const Denoiser& net, const std::vector<Image>& x0,
                     const NoiseSchedule& schedule, Rng& rng);
double training_loss_fixed(const Denoiser& net, const std::vector<Image>& x0,
                           const NoiseSchedule& schedule, const NoiseDraws& draws);

TrainState train(UNetDenoiser& net, const std::vector<Image>& corpus,
                 const NoiseSchedule& schedule, const DenoiserConfig& config, Rng& rng,
                 const std::filesystem::path& checkpoint_path);

// Central finite differences over every parameter of a small net against the
// analytic gradient of the training loss; returns the max discrepancy scaled
// by max(1, |analytic|, |numeric|).
double gradient_check(UNetDenoiser& net, const std::vector<Image>& x0,
                      const NoiseSchedule& schedule, Rng& rng);

void save_denoiser(const std::filesystem::path& path, const UNetDenoiser& net,
                   const NoiseSchedule& schedule, double loss_ema = 0.0);
std::unique_ptr<UNetDenoiser> load_denoiser(const std::filesystem::path& path,
                                            const NoiseSchedule& schedule);
DenoiserConfig load_denoiser_config(const std::filesystem::path& path);

std::vector<double> sinusoidal_embedding(int t, int dim);

}  // namespace agddad
