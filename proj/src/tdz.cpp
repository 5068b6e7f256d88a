#include "egcfl/tdz.hpp"

#include <cmath>

#include "egcfl/io/fsutil.hpp"
#include "egcfl/io/plot.hpp"

namespace egcfl::tdz {

OrthoTransform build_transform(int block_size) {
  if (block_size < 1)
    throw InvalidArgument("build_transform: block_size must be positive");
  OrthoTransform t;
  t.block_size = block_size;
  const int b = block_size;
  t.basis1d.resize(static_cast<size_t>(b) * b);
  const real_t pi = 3.14159265358979323846264338327950288;
  for (int k = 0; k < b; ++k) {
    const real_t scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<real_t>(b));
    for (int n = 0; n < b; ++n)
      t.basis1d[static_cast<size_t>(k) * b + n] =
          scale * std::cos(pi * (2.0 * n + 1.0) * k / (2.0 * b));
  }
  // Kronecker square: 2-D transform of a column-stacked block.
  const int b2 = b * b;
  t.basis.resize(static_cast<size_t>(b2) * b2);
  for (int i1 = 0; i1 < b; ++i1)
    for (int i2 = 0; i2 < b; ++i2)
      for (int j1 = 0; j1 < b; ++j1)
        for (int j2 = 0; j2 < b; ++j2)
          t.basis[static_cast<size_t>(i1 * b + i2) * b2 + (j1 * b + j2)] =
              t.basis1d[static_cast<size_t>(i1) * b + j1] *
              t.basis1d[static_cast<size_t>(i2) * b + j2];
  return t;
}

TdzConfig make_tdz_config(int block_size, real_t delta) {
  if (delta < 0.0) throw InvalidArgument("TdzConfig: delta must be nonnegative");
  TdzConfig cfg;
  cfg.transform = build_transform(block_size);
  cfg.delta = delta;
  return cfg;
}

nn::Tensor tdz_layer(const nn::Tensor& images, const TdzConfig& config,
                     nn::DeadzoneBackward mode) {
  if (!images.defined() || images.ndim() != 4)
    throw InvalidArgument("tdz_layer: expects a (N,C,H,W) tensor");
  if (config.delta < 0.0) throw InvalidArgument("tdz_layer: delta must be nonnegative");
  const int b = config.transform.block_size;
  if (b < 1) throw InvalidArgument("tdz_layer: transform not initialized");
  const int h = images.dim(2), w = images.dim(3);
  const int pad_h = (b - h % b) % b, pad_w = (b - w % b) % b;
  if (pad_h >= h || pad_w >= w)
    throw InvalidArgument("tdz_layer: image too small for the block size");

  nn::Tensor x = images;
  if (pad_h > 0 || pad_w > 0) x = nn::reflect_pad2d(x, 0, pad_h, 0, pad_w);
  nn::Tensor coeff = nn::block_transform(x, config.transform.basis1d, b, false);
  nn::Tensor kept = nn::deadzone(coeff, config.delta, mode);
  nn::Tensor out = nn::block_transform(kept, config.transform.basis1d, b, true);
  if (pad_h > 0 || pad_w > 0) out = nn::crop2d(out, 0, 0, h, w);
  return out;
}

nn::Tensor forward_tdz(const nn::Tensor& images, const TdzConfig& config) {
  nn::NoGradGuard ng;
  return nn::clamp(tdz_layer(images, config), 0.0, 1.0);
}

nn::Tensor forward_tdz_unclamped(const nn::Tensor& images, const TdzConfig& config) {
  nn::NoGradGuard ng;
  return tdz_layer(images, config);
}

real_t NoiseEnergyReport::mean_pre() const {
  real_t s = 0.0;
  for (real_t v : pre_energy) s += v;
  return pre_energy.empty() ? 0.0 : s / static_cast<real_t>(pre_energy.size());
}

real_t NoiseEnergyReport::mean_post() const {
  real_t s = 0.0;
  for (real_t v : post_energy) s += v;
  return post_energy.empty() ? 0.0 : s / static_cast<real_t>(post_energy.size());
}

NoiseEnergyReport noise_energy_report(const nn::Tensor& clean,
                                      const nn::Tensor& attacked,
                                      const TdzConfig& config, int batch_size) {
  if (!clean.defined() || !attacked.defined() || clean.shape() != attacked.shape())
    throw InvalidArgument("noise_energy_report: clean/attacked shape mismatch");
  if (batch_size < 1)
    throw InvalidArgument("noise_energy_report: batch_size must be positive");

  const nn::Tensor clean_tdz = forward_tdz(clean, config);
  const nn::Tensor attacked_tdz = forward_tdz(attacked, config);

  const int n = clean.dim(0);
  const int64_t stride = clean.size() / n;
  NoiseEnergyReport report;
  for (int begin = 0; begin < n; begin += batch_size) {
    const int count = std::min(batch_size, n - begin);
    real_t pre = 0.0, post = 0.0;
    for (int64_t i = static_cast<int64_t>(begin) * stride;
         i < (static_cast<int64_t>(begin) + count) * stride; ++i) {
      const real_t d0 = clean.data()[i] - attacked.data()[i];
      const real_t d1 = clean_tdz.data()[i] - attacked_tdz.data()[i];
      pre += d0 * d0;
      post += d1 * d1;
    }
    report.pre_energy.push_back(std::sqrt(pre));
    report.post_energy.push_back(std::sqrt(post));
  }
  report.batch_count = static_cast<int>(report.pre_energy.size());
  return report;
}

void write_noise_energy_report(const NoiseEnergyReport& report,
                               const std::string& csv_path,
                               const std::string& png_path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<size_t>(report.batch_count));
  for (int i = 0; i < report.batch_count; ++i)
    rows.push_back({std::to_string(i), io::format_real(report.pre_energy[i]),
                    io::format_real(report.post_energy[i])});
  io::write_csv(csv_path, {"batch_index", "pre_energy", "post_energy"}, rows);

  io::LinePlot plot;
  plot.title = "ATTACK NOISE ENERGY BEFORE/AFTER TDZ";
  plot.x_label = "BATCH INDEX";
  plot.y_label = "L2 ENERGY";
  io::Series pre{"BEFORE", {}, {}}, post{"AFTER", {}, {}};
  for (int i = 0; i < report.batch_count; ++i) {
    pre.x.push_back(i);
    pre.y.push_back(report.pre_energy[i]);
    post.x.push_back(i);
    post.y.push_back(report.post_energy[i]);
  }
  plot.series = {pre, post};
  io::write_plot(png_path, plot);
}

}  // namespace egcfl::tdz
