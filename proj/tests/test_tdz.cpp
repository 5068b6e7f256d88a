#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "egcfl/nn/gradcheck.hpp"
#include "egcfl/io/fsutil.hpp"
#include "egcfl/tdz.hpp"

using namespace egcfl;
using namespace egcfl::tdz;

namespace {

nn::Tensor random_images(int n, int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  nn::Tensor t = nn::Tensor::zeros({n, c, h, w});
  rng.fill_uniform(t.data(), static_cast<size_t>(t.size()), 0.0, 1.0);
  return t;
}

real_t max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
  real_t m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("build_transform: analytic small cases") {
  const OrthoTransform t1 = build_transform(1);
  REQUIRE(t1.basis.size() == 1);
  CHECK(t1.basis[0] == doctest::Approx(1.0));

  const OrthoTransform t2 = build_transform(2);
  const real_t r = 1.0 / std::sqrt(2.0);
  CHECK(t2.basis1d[0] == doctest::Approx(r));
  CHECK(t2.basis1d[1] == doctest::Approx(r));
  CHECK(t2.basis1d[2] == doctest::Approx(r));
  CHECK(t2.basis1d[3] == doctest::Approx(-r));
  // 2-D basis is the Kronecker square of the 1-D factor.
  for (int i1 = 0; i1 < 2; ++i1)
    for (int i2 = 0; i2 < 2; ++i2)
      for (int j1 = 0; j1 < 2; ++j1)
        for (int j2 = 0; j2 < 2; ++j2)
          CHECK(t2.basis[(i1 * 2 + i2) * 4 + (j1 * 2 + j2)] ==
                doctest::Approx(t2.basis1d[i1 * 2 + j1] * t2.basis1d[i2 * 2 + j2]));

  CHECK_THROWS_AS(build_transform(0), InvalidArgument);
  CHECK_THROWS_AS(build_transform(-3), InvalidArgument);
}

TEST_CASE("build_transform: orthonormality via direct matrix multiply") {
  for (int b : {2, 4, 8}) {
    const OrthoTransform t = build_transform(b);
    const int n = b * b;
    real_t max_err = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        real_t acc = 0.0;
        for (int k = 0; k < n; ++k)
          acc += t.basis[static_cast<size_t>(i) * n + k] *
                 t.basis[static_cast<size_t>(j) * n + k];
        max_err = std::max(max_err, std::fabs(acc - (i == j ? 1.0 : 0.0)));
      }
    CHECK(max_err <= 1e-6);
  }
}

TEST_CASE("transform preserves norms (Parseval)") {
  const OrthoTransform t = build_transform(8);
  Rng rng(3);
  const int n = 64;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<real_t> x(n), y(n, 0.0);
    rng.fill_uniform(x.data(), x.size(), -1.0, 1.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) y[i] += t.basis[static_cast<size_t>(i) * n + j] * x[j];
    real_t nx = 0.0, ny = 0.0;
    for (int i = 0; i < n; ++i) {
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    CHECK(std::sqrt(ny) == doctest::Approx(std::sqrt(nx)).epsilon(1e-5));
  }
}

TEST_CASE("deadzone scalar semantics") {
  CHECK(deadzone(0.5, 1.0) == 0.0);
  CHECK(deadzone(2.0, 1.0) == 2.0);
  CHECK(deadzone(-1.0, 1.0) == 0.0);  // boundary belongs to the deadzone
  CHECK(deadzone(1.0, 1.0) == 0.0);
  CHECK(deadzone(-2.0, 1.0) == -2.0);
  CHECK(deadzone(0.0, 0.0) == 0.0);
  CHECK(deadzone(0.3, 0.0) == 0.3);

  // exhaustive grid including the boundary points
  for (real_t delta : {0.0, 0.05, 0.5, 1.0}) {
    for (int i = -200; i <= 200; ++i) {
      const real_t x = 0.01 * i;
      const real_t expected = std::fabs(x) <= delta ? 0.0 : x;
      CHECK(deadzone(x, delta) == expected);
    }
    CHECK(deadzone(delta, delta) == 0.0);
    CHECK(deadzone(-delta, delta) == 0.0);
  }
}

TEST_CASE("forward_tdz: zero, constant, and delta=0 round trip") {
  const TdzConfig cfg = make_tdz_config(8, 0.05);

  nn::Tensor zero = nn::Tensor::zeros({2, 3, 32, 32});
  CHECK(max_abs_diff(forward_tdz(zero, cfg), zero) == 0.0);

  nn::Tensor constant = nn::Tensor::full({2, 3, 32, 32}, 0.5);
  // All block energy sits in the DC coefficient (0.5 * 8 = 4.0 > delta).
  CHECK(max_abs_diff(forward_tdz(constant, cfg), constant) <= 1e-5);

  const TdzConfig passthrough = make_tdz_config(8, 0.0);
  nn::Tensor x = random_images(100, 3, 32, 32, 21);
  CHECK(max_abs_diff(forward_tdz(x, passthrough), x) <= 1e-5);
}

TEST_CASE("transform stage is linear") {
  const TdzConfig cfg = make_tdz_config(8, 0.0);
  nn::Tensor x = random_images(2, 3, 32, 32, 5);
  nn::Tensor y = random_images(2, 3, 32, 32, 6);
  const real_t a = 0.7, b = -1.3;
  nn::Tensor combo = nn::Tensor::zeros({2, 3, 32, 32});
  for (int64_t i = 0; i < combo.size(); ++i)
    combo.data()[i] = a * x.data()[i] + b * y.data()[i];
  nn::NoGradGuard ng;
  nn::Tensor tx = nn::block_transform(x, cfg.transform.basis1d, 8, false);
  nn::Tensor ty = nn::block_transform(y, cfg.transform.basis1d, 8, false);
  nn::Tensor tc = nn::block_transform(combo, cfg.transform.basis1d, 8, false);
  real_t max_err = 0.0;
  for (int64_t i = 0; i < tc.size(); ++i)
    max_err = std::max(max_err,
                       std::fabs(tc.data()[i] - (a * tx.data()[i] + b * ty.data()[i])));
  CHECK(max_err <= 1e-5);
}

TEST_CASE("noise kill and content pass-through") {
  const int b = 8;
  const real_t delta = 0.05;
  const TdzConfig cfg = make_tdz_config(b, delta);
  Rng rng(9);

  SUBCASE("all coefficients inside the deadzone -> exactly zero output") {
    nn::Tensor coeffs = nn::Tensor::zeros({1, 1, b, b});
    rng.fill_uniform(coeffs.data(), static_cast<size_t>(coeffs.size()), -delta * 0.9,
                     delta * 0.9);
    nn::NoGradGuard ng;
    nn::Tensor block = nn::block_transform(coeffs, cfg.transform.basis1d, b, true);
    nn::Tensor out = forward_tdz_unclamped(block, cfg);
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
  }

  SUBCASE("every nonzero coefficient above delta -> round trip") {
    nn::Tensor coeffs = nn::Tensor::zeros({1, 1, b, b});
    for (int i = 0; i < b * b; i += 3) {
      const real_t mag = delta * 2.0 + rng.uniform(0.0, 1.0);
      coeffs.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    nn::NoGradGuard ng;
    nn::Tensor block = nn::block_transform(coeffs, cfg.transform.basis1d, b, true);
    nn::Tensor out = forward_tdz_unclamped(block, cfg);
    CHECK(max_abs_diff(out, block) <= 1e-5);
  }
}

TEST_CASE("idempotence on the unclamped output") {
  const TdzConfig cfg = make_tdz_config(8, 0.05);
  nn::Tensor x = random_images(8, 3, 32, 32, 33);
  nn::Tensor once = forward_tdz_unclamped(x, cfg);
  nn::Tensor twice = forward_tdz_unclamped(once, cfg);
  CHECK(max_abs_diff(once, twice) <= 1e-4);
}

TEST_CASE("non-multiple image sizes are reflect padded and cropped") {
  const TdzConfig cfg = make_tdz_config(8, 0.0);
  nn::Tensor x = random_images(2, 3, 10, 14, 44);
  nn::Tensor out = forward_tdz(x, cfg);
  REQUIRE(out.shape() == nn::Shape{2, 3, 10, 14});
  CHECK(max_abs_diff(out, x) <= 1e-5);

  // too small for the block size
  nn::Tensor tiny = random_images(1, 1, 4, 4, 45);
  CHECK_THROWS_AS(tdz_layer(tiny, cfg), InvalidArgument);
}

TEST_CASE("tdz_layer differentiates") {
  const TdzConfig cfg = make_tdz_config(4, 0.05);
  Rng rng(55);
  nn::Tensor x = nn::Tensor::zeros({1, 2, 8, 8}, true);
  // keep coefficients away from the +-delta kinks
  rng.fill_uniform(x.data(), static_cast<size_t>(x.size()), 0.2, 1.0);

  auto rep = nn::check_gradients(
      [&] {
        return nn::sum_sq(tdz_layer(x, cfg, nn::DeadzoneBackward::kMasked));
      },
      {x}, 1e-6, 128);
  CHECK(rep.ok());

  // straight-through: gradient of sum(tdz(x)) is all ones
  x.zero_grad();
  nn::sum_all(tdz_layer(x, cfg, nn::DeadzoneBackward::kStraightThrough)).backward();
  nn::Tensor ones_back = nn::Tensor::zeros(x.shape());
  {
    nn::NoGradGuard ng;
    nn::Tensor g = nn::Tensor::full(x.shape(), 1.0);
    nn::Tensor t = nn::block_transform(g, cfg.transform.basis1d, 4, false);
    ones_back = nn::block_transform(t, cfg.transform.basis1d, 4, true);
  }
  for (int64_t i = 0; i < x.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(ones_back.data()[i]).epsilon(1e-10));
}

TEST_CASE("noise_energy_report") {
  const TdzConfig cfg = make_tdz_config(8, 0.05);

  SUBCASE("identical inputs give zero energies") {
    nn::Tensor x = random_images(12, 3, 32, 32, 71);
    const auto rep = noise_energy_report(x, x, cfg, 4);
    REQUIRE(rep.batch_count == 3);
    for (real_t v : rep.pre_energy) CHECK(v == 0.0);
    for (real_t v : rep.post_energy) CHECK(v == 0.0);
  }

  SUBCASE("delta=0 reduces to the round trip") {
    nn::Tensor x = random_images(8, 3, 32, 32, 72);
    nn::Tensor y = random_images(8, 3, 32, 32, 73);
    const TdzConfig identity_cfg = make_tdz_config(8, 0.0);
    const auto rep = noise_energy_report(x, y, identity_cfg, 4);
    for (int i = 0; i < rep.batch_count; ++i)
      CHECK(rep.post_energy[i] == doctest::Approx(rep.pre_energy[i]).epsilon(1e-4));
  }

  SUBCASE("uniform-sign noise at 8/255 is attenuated on smooth images") {
    // smooth synthetic content: sums of low-frequency gradients
    const int n = 120;
    nn::Tensor clean = nn::Tensor::zeros({n, 3, 32, 32});
    Rng rng(74);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        const real_t ax = rng.uniform(0.0, 0.3), ay = rng.uniform(0.0, 0.3);
        const real_t base = rng.uniform(0.2, 0.7);
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x)
            clean.data()[((static_cast<int64_t>(i) * 3 + c) * 32 + y) * 32 + x] =
                clamp01(base + ax * x / 32.0 + ay * y / 32.0);
      }
    nn::Tensor attacked = clean.detach();
    const real_t eps = 8.0 / 255.0;
    for (int64_t i = 0; i < attacked.size(); ++i)
      attacked.data()[i] =
          clamp01(attacked.data()[i] + (rng.uniform() < 0.5 ? -eps : eps));
    const auto rep = noise_energy_report(clean, attacked, cfg, 4);
    CHECK(rep.mean_post() < rep.mean_pre());
  }

  SUBCASE("shape mismatch and bad batch size throw") {
    nn::Tensor a = random_images(4, 3, 32, 32, 75);
    nn::Tensor b = random_images(4, 3, 16, 16, 76);
    CHECK_THROWS_AS(noise_energy_report(a, b, cfg, 4), InvalidArgument);
    CHECK_THROWS_AS(noise_energy_report(a, a, cfg, 0), InvalidArgument);
  }

  SUBCASE("csv and plot emission is deterministic") {
    nn::Tensor x = random_images(8, 3, 32, 32, 77);
    nn::Tensor y = random_images(8, 3, 32, 32, 78);
    const auto rep = noise_energy_report(x, y, cfg, 2);
    const auto dir = std::filesystem::temp_directory_path() / "egcfl_tdz_test";
    std::filesystem::create_directories(dir);
    const std::string csv = (dir / "energy.csv").string();
    const std::string png = (dir / "energy.png").string();
    write_noise_energy_report(rep, csv, png);
    REQUIRE(std::filesystem::exists(csv));
    REQUIRE(std::filesystem::exists(png));
    CHECK(std::filesystem::file_size(png) > 100);
    const auto png_bytes = io::read_file(png);
    write_noise_energy_report(rep, csv, png);
    CHECK(io::read_file(png) == png_bytes);
    const auto csv_text = io::read_file(csv);
    CHECK(csv_text.rfind("batch_index,pre_energy,post_energy", 0) == 0);
  }
}
