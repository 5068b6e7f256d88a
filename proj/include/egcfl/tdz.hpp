#pragma once

#include <string>
#include <vector>

#include "egcfl/nn/ops.hpp"

namespace egcfl::tdz {

// Blockwise 2-D separable orthonormal transform. `basis1d` is the row-major
// (block x block) 1-D factor; `basis` is its Kronecker square acting on
// column-stacked blocks, satisfying basis * basis^T = I.
struct OrthoTransform {
  int block_size = 0;
  std::vector<real_t> basis1d;
  std::vector<real_t> basis;
};

// Orthonormal DCT-II basis for block_size x block_size blocks.
OrthoTransform build_transform(int block_size);

// Deadzone activation: 0 on [-delta, delta] (boundary included), identity
// elsewhere. Total for delta >= 0.
inline real_t deadzone(real_t x, real_t delta) {
  return (x >= -delta && x <= delta) ? 0.0 : x;
}

struct TdzConfig {
  OrthoTransform transform;
  real_t delta = 0.05;
};

TdzConfig make_tdz_config(int block_size = 8, real_t delta = 0.05);

// transform -> deadzone -> inverse transform over each channel plane, with
// reflect padding to a block multiple and cropping back. Differentiable; the
// deadzone backward follows `mode`. No output clamp.
nn::Tensor tdz_layer(const nn::Tensor& images, const TdzConfig& config,
                     nn::DeadzoneBackward mode = nn::DeadzoneBackward::kMasked);

// Deterministic whole-layer application with the output clamped to [0, 1].
nn::Tensor forward_tdz(const nn::Tensor& images, const TdzConfig& config);
// Same, without the clamp (used by idempotence analysis).
nn::Tensor forward_tdz_unclamped(const nn::Tensor& images, const TdzConfig& config);

struct NoiseEnergyReport {
  std::vector<real_t> pre_energy;   // per batch: ||clean - attacked||_2
  std::vector<real_t> post_energy;  // per batch: ||TDZ(clean) - TDZ(attacked)||_2
  int batch_count = 0;

  real_t mean_pre() const;
  real_t mean_post() const;
};

NoiseEnergyReport noise_energy_report(const nn::Tensor& clean,
                                      const nn::Tensor& attacked,
                                      const TdzConfig& config, int batch_size);

// CSV columns: batch_index,pre_energy,post_energy; PNG holds the two curves.
void write_noise_energy_report(const NoiseEnergyReport& report,
                               const std::string& csv_path,
                               const std::string& png_path);

}  // namespace egcfl::tdz
