#include "egcfl/visualize.hpp"

#include <cmath>

#include "egcfl/io/fsutil.hpp"
#include "egcfl/io/png.hpp"

namespace egcfl::harness {

namespace {

using io::RgbImage;

// (C,H,W) slice of a batch tensor -> RGB raster.
RgbImage tile_from_tensor(const nn::Tensor& batch, int index, int upscale) {
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const real_t* base = batch.data() + static_cast<int64_t>(index) * c * h * w;
  RgbImage img(w * upscale, h * upscale);
  for (int y = 0; y < h * upscale; ++y)
    for (int x = 0; x < w * upscale; ++x) {
      const int sy = y / upscale, sx = x / upscale;
      auto px = [&](int ch) {
        const real_t v = base[(static_cast<int64_t>(ch) * h + sy) * w + sx];
        return static_cast<uint8_t>(std::lround(255.0 * clamp01(v)));
      };
      if (c >= 3)
        img.set(x, y, px(0), px(1), px(2));
      else
        img.set(x, y, px(0), px(0), px(0));
    }
  return img;
}

// Mean |activation| across channels, normalized to [0,1] per map.
std::vector<real_t> feature_magnitude(const nn::Tensor& features, int index) {
  const int c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const real_t* base = features.data() + static_cast<int64_t>(index) * c * h * w;
  std::vector<real_t> map(static_cast<size_t>(h) * w, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h * w; ++i)
      map[static_cast<size_t>(i)] += std::fabs(base[static_cast<int64_t>(ch) * h * w + i]);
  real_t hi = 0.0;
  for (real_t v : map) hi = std::max(hi, v);
  if (hi > 0.0)
    for (real_t& v : map) v /= hi;
  return map;
}

RgbImage heat_tile(const std::vector<real_t>& map, int h, int w, int out_w, int out_h) {
  RgbImage img(out_w, out_h);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const int sy = y * h / out_h, sx = x * w / out_w;
      uint8_t r, g, b;
      io::heat_color(map[static_cast<size_t>(sy) * w + sx], r, g, b);
      img.set(x, y, r, g, b);
    }
  return img;
}

RgbImage overlay(const RgbImage& image, const std::vector<real_t>& map, int h, int w) {
  RgbImage img(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const int sy = y * h / image.height, sx = x * w / image.width;
      uint8_t hr, hg, hb;
      io::heat_color(map[static_cast<size_t>(sy) * w + sx], hr, hg, hb);
      const size_t i = 3 * (static_cast<size_t>(y) * image.width + x);
      img.pixels[i] = static_cast<uint8_t>((image.pixels[i] + hr) / 2);
      img.pixels[i + 1] = static_cast<uint8_t>((image.pixels[i + 1] + hg) / 2);
      img.pixels[i + 2] = static_cast<uint8_t>((image.pixels[i + 2] + hb) / 2);
    }
  return img;
}

void blit(RgbImage& dst, const RgbImage& src, int x0, int y0) {
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const size_t i = 3 * (static_cast<size_t>(y) * src.width + x);
      dst.set(x0 + x, y0 + y, src.pixels[i], src.pixels[i + 1], src.pixels[i + 2]);
    }
}

struct CamResult {
  nn::Tensor features;             // tap activations (batch)
  std::vector<std::vector<real_t>> maps;  // per sample, normalized cam
  int map_h = 0, map_w = 0;
};

// Gradient-weighted class activation map at the requested tap: channel
// weights are spatial means of d(logit of predicted class)/d(activation).
CamResult grad_cam(Classifier& classifier, const nn::Tensor& images, int tap_from_end) {
  CamResult out;
  nn::Tensor x = images.detach();
  x.set_requires_grad(true);  // forces graph construction through the tap
  nn::Tensor tap;
  nn::Tensor logits = classifier.logits_with_tap(x, tap_from_end, &tap);
  tap.set_retain_grad(true);
  const auto pred = nn::argmax_rows(logits);

  // single backward from the sum of each sample's predicted-class logit
  std::vector<std::pair<real_t, nn::Tensor>> picks;
  const int classes = logits.dim(1);
  for (int i = 0; i < images.dim(0); ++i)
    picks.emplace_back(1.0, nn::select_scalar(
                                logits, static_cast<int64_t>(i) * classes +
                                            pred[static_cast<size_t>(i)]));
  nn::weighted_sum(picks).backward();

  const int n = tap.dim(0), c = tap.dim(1), h = tap.dim(2), w = tap.dim(3);
  out.map_h = h;
  out.map_w = w;
  out.features = tap.detach();
  const real_t* act = tap.data();
  const std::vector<real_t>& grad = tap.grad_values();
  for (int i = 0; i < n; ++i) {
    std::vector<real_t> cam(static_cast<size_t>(h) * w, 0.0);
    for (int ch = 0; ch < c; ++ch) {
      const int64_t off = (static_cast<int64_t>(i) * c + ch) * h * w;
      real_t weight = 0.0;
      for (int p = 0; p < h * w; ++p) weight += grad[static_cast<size_t>(off + p)];
      weight /= static_cast<real_t>(h * w);
      for (int p = 0; p < h * w; ++p)
        cam[static_cast<size_t>(p)] += weight * act[off + p];
    }
    real_t hi = 0.0;
    for (real_t& v : cam) {
      v = std::max(v, 0.0);
      hi = std::max(hi, v);
    }
    if (hi > 0.0)
      for (real_t& v : cam) v /= hi;
    out.maps.push_back(std::move(cam));
  }
  return out;
}

real_t mean_feature_distance(Classifier& classifier, const nn::Tensor& clean,
                             const nn::Tensor& other) {
  nn::NoGradGuard ng;
  nn::Tensor fc = classifier.features(clean, false);
  nn::Tensor fo = classifier.features(other, false);
  const int n = clean.dim(0);
  const int64_t stride = fc.size() / n;
  real_t total = 0.0;
  for (int i = 0; i < n; ++i) {
    real_t d2 = 0.0;
    for (int64_t j = i * stride; j < (i + 1) * stride; ++j) {
      const real_t d = fc.data()[j] - fo.data()[j];
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return total / n;
}

}  // namespace

VisualizeResult visualize(Classifier& classifier, pipeline::DefensePipeline& defense,
                          const ImageBatch& samples, const VisualizeOptions& options,
                          const std::string& out_dir) {
  if (samples.count() < 1) throw InvalidArgument("visualize: empty sample batch");
  if (options.tap_from_end < 1 ||
      options.tap_from_end > classifier.activation_count())
    throw InvalidArgument("visualize: activation tap out of range");
  io::ensure_dir(out_dir);
  VisualizeResult result;

  // attacked inputs (white-box on the bare classifier) and the defense trace
  attacks::ClassifierModel bare(classifier);
  const attacks::AttackResult attacked =
      attacks::pgd(bare, samples, options.attack);
  const auto trace = defense.defend(attacked.attacked.images, options.k_test);
  const nn::Tensor& defended = trace.fused.back();

  result.attacked_feature_distance =
      mean_feature_distance(classifier, samples.images, attacked.attacked.images);
  result.defended_feature_distance =
      mean_feature_distance(classifier, samples.images, defended);

  const int up = options.upscale;
  const int tile = samples.images.dim(3) * up;
  const int tile_h = samples.images.dim(2) * up;
  const int pad = 4;

  // strip: clean | attacked | estimates... | final fused
  {
    const int cols = 2 + static_cast<int>(trace.estimates.size()) + 1;
    const int label_h = 10;
    RgbImage sheet(pad + cols * (tile + pad),
                   label_h + pad + samples.count() * (tile_h + pad), 245, 245, 245);
    const char* heads[] = {"CLEAN", "ATTACKED"};
    io::draw_text(sheet, pad, 2, heads[0], 0, 0, 0);
    io::draw_text(sheet, pad + (tile + pad), 2, heads[1], 0, 0, 0);
    for (size_t k = 0; k < trace.estimates.size(); ++k)
      io::draw_text(sheet, pad + static_cast<int>(2 + k) * (tile + pad), 2,
                    "GEN" + std::to_string(k + 1), 0, 0, 0);
    io::draw_text(sheet, pad + (cols - 1) * (tile + pad), 2, "FUSED", 0, 0, 0);
    for (int i = 0; i < samples.count(); ++i) {
      const int y0 = label_h + pad + i * (tile_h + pad);
      blit(sheet, tile_from_tensor(samples.images, i, up), pad, y0);
      blit(sheet, tile_from_tensor(attacked.attacked.images, i, up), pad + tile + pad,
           y0);
      for (size_t k = 0; k < trace.estimates.size(); ++k)
        blit(sheet, tile_from_tensor(trace.estimates[k], i, up),
             pad + static_cast<int>(2 + k) * (tile + pad), y0);
      blit(sheet, tile_from_tensor(defended, i, up), pad + (cols - 1) * (tile + pad),
           y0);
    }
    const std::string path = out_dir + "/grid.png";
    io::write_png(path, sheet);
    result.files.push_back(path);
  }

  // per-sample heatmap panels for the first max_panels samples
  const CamResult cam_clean = grad_cam(classifier, samples.images, options.tap_from_end);
  const CamResult cam_attacked =
      grad_cam(classifier, attacked.attacked.images, options.tap_from_end);
  const CamResult cam_defended = grad_cam(classifier, defended, options.tap_from_end);

  const int panels = std::min(samples.count(), options.max_panels);
  for (int i = 0; i < panels; ++i) {
    const int label_w = 70;
    RgbImage sheet(label_w + 3 * (tile + pad) + pad, 10 + 3 * (tile_h + pad) + pad, 245,
                   245, 245);
    io::draw_text(sheet, label_w, 2, "IMAGE", 0, 0, 0);
    io::draw_text(sheet, label_w + tile + pad, 2, "FEATURES", 0, 0, 0);
    io::draw_text(sheet, label_w + 2 * (tile + pad), 2, "CAM", 0, 0, 0);
    const struct {
      const char* name;
      const nn::Tensor& images;
      const CamResult& cam;
    } rows[] = {{"CLEAN", samples.images, cam_clean},
                {"ATTACKED", attacked.attacked.images, cam_attacked},
                {"CLEANED", defended, cam_defended}};
    for (int r = 0; r < 3; ++r) {
      const int y0 = 10 + pad + r * (tile_h + pad);
      io::draw_text(sheet, 2, y0 + tile_h / 2 - 4, rows[r].name, 0, 0, 0);
      const RgbImage img = tile_from_tensor(rows[r].images, i, up);
      blit(sheet, img, label_w, y0);
      blit(sheet,
           heat_tile(feature_magnitude(rows[r].cam.features, i), rows[r].cam.map_h,
                     rows[r].cam.map_w, tile, tile_h),
           label_w + tile + pad, y0);
      blit(sheet,
           overlay(img, rows[r].cam.maps[static_cast<size_t>(i)], rows[r].cam.map_h,
                   rows[r].cam.map_w),
           label_w + 2 * (tile + pad), y0);
    }
    const std::string path = out_dir + "/cam_" + std::to_string(i) + ".png";
    io::write_png(path, sheet);
    result.files.push_back(path);
  }
  return result;
}

}  // namespace egcfl::harness
