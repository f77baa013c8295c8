#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "srcl/autodiff.hpp"
#include "srcl/conv3d.hpp"
#include "srcl/rng.hpp"

using namespace srcl;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

/// Central finite differences against the tape gradient for every probed
/// entry of every leaf.
void gradcheck(std::vector<Variable> leaves, const std::function<Variable()>& f, Rng& rng,
               double h = 1e-6, double tol = 1e-5, int probes_per_leaf = 8) {
  Variable out = f();
  out.backward();
  std::vector<Tensor> analytic;
  for (auto& leaf : leaves) {
    REQUIRE(leaf.grad().numel() == leaf.value().numel());
    analytic.push_back(leaf.grad());
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (int p = 0; p < probes_per_leaf; ++p) {
      const Index idx = rng.uniform_int(0, leaves[li].value().numel() - 1);
      const double orig = leaves[li].value()[idx];
      leaves[li].mutable_value()[idx] = orig + h;
      const double fp = f().item();
      leaves[li].mutable_value()[idx] = orig - h;
      const double fm = f().item();
      leaves[li].mutable_value()[idx] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double got = analytic[li][idx];
      const double scale = std::max({1.0, std::abs(fd), std::abs(got)});
      CHECK(std::abs(fd - got) / scale < tol);
    }
  }
}

}  // namespace

TEST_CASE("elementwise chain gradients") {
  Rng rng(1);
  Variable a = Variable::leaf(random_tensor({3, 4}, rng), true);
  Variable b = Variable::leaf(random_tensor({3, 4}, rng), true);
  gradcheck({a, b}, [&] {
    return mean_all(mul(sigmoid(a), add(softplus(b), mul_scalar(a, 0.5))));
  }, rng);
}

TEST_CASE("leaky relu and abs gradients away from the kink") {
  Rng rng(2);
  Tensor t = random_tensor({40}, rng);
  for (Index i = 0; i < t.numel(); ++i)
    if (std::abs(t[i]) < 1e-3) t[i] = 0.1;  // keep probes off the kink
  Variable a = Variable::leaf(t, true);
  gradcheck({a}, [&] { return mean_all(abs_val(leaky_relu(a, 0.2))); }, rng);
}

TEST_CASE("div gradient on both sides") {
  Rng rng(3);
  Tensor den = random_tensor({2, 5}, rng);
  den.array() = den.array().abs() + 1.0;
  Variable a = Variable::leaf(random_tensor({2, 5}, rng), true);
  Variable b = Variable::leaf(den, true);
  gradcheck({a, b}, [&] { return mean_all(div(a, b)); }, rng);
}

TEST_CASE("linear layer gradients") {
  Rng rng(4);
  Variable x = Variable::leaf(random_tensor({3, 6}, rng), true);
  Variable w = Variable::leaf(random_tensor({4, 6}, rng, 0.5), true);
  Variable b = Variable::leaf(random_tensor({4}, rng, 0.1), true);
  gradcheck({x, w, b}, [&] { return mean_all(mul(linear(x, w, b), linear(x, w, b))); }, rng);
}

TEST_CASE("conv3d gradients, unit stride") {
  Rng rng(5);
  Variable x = Variable::leaf(random_tensor({2, 2, 4, 4, 4}, rng), true);
  Variable w = Variable::leaf(random_tensor({3, 2, 3, 3, 3}, rng, 0.3), true);
  Variable b = Variable::leaf(random_tensor({3}, rng, 0.1), true);
  gradcheck({x, w, b}, [&] { return mean_all(mul(conv3d(x, w, b), conv3d(x, w, b))); }, rng, 1e-6, 1e-5, 10);
}

TEST_CASE("conv3d gradients, anisotropic stride") {
  Rng rng(6);
  Variable x = Variable::leaf(random_tensor({1, 1, 4, 8, 8}, rng), true);
  Variable w = Variable::leaf(random_tensor({2, 1, 3, 3, 3}, rng, 0.3), true);
  Variable b = Variable::leaf(random_tensor({2}, rng, 0.1), true);
  gradcheck({x, w, b}, [&] {
    return mean_all(abs_val(conv3d(x, w, b, {1, 2, 2})));
  }, rng);
}

TEST_CASE("conv3d stride output shapes") {
  Rng rng(61);
  Variable x = Variable::leaf(random_tensor({1, 1, 16, 16, 16}, rng), false);
  Variable w = Variable::leaf(random_tensor({4, 1, 3, 3, 3}, rng), false);
  Variable b = Variable::leaf(Tensor::zeros({4}), false);
  CHECK(conv3d(x, w, b, {2, 2, 2}).value().shape() == Shape{1, 4, 8, 8, 8});
  CHECK(conv3d(x, w, b, {1, 2, 2}).value().shape() == Shape{1, 4, 16, 8, 8});
  CHECK(conv3d(x, w, b).value().shape() == Shape{1, 4, 16, 16, 16});
}

TEST_CASE("conv3d is deterministic") {
  Rng rng(62);
  Variable x = Variable::leaf(random_tensor({2, 3, 6, 6, 6}, rng), false);
  Variable w = Variable::leaf(random_tensor({3, 3, 3, 3, 3}, rng), false);
  Variable b = Variable::leaf(random_tensor({3}, rng), false);
  const Tensor first = conv3d(x, w, b).value();
  const Tensor second = conv3d(x, w, b).value();
  CHECK((first.array() == second.array()).all());
}

TEST_CASE("voxel shuffle permutes and inverts correctly") {
  Rng rng(7);
  Variable x = Variable::leaf(random_tensor({2, 8, 2, 2, 2}, rng), true);
  Variable out = voxel_shuffle(x, {2, 2, 2});
  CHECK(out.value().shape() == Shape{2, 1, 4, 4, 4});
  // element mapping: channel block (dz, dy, dx) lands at offset (dz, dy, dx)
  CHECK(out.value().at(Index(0), Index(0), Index(1), Index(0), Index(0)) ==
        x.value().at(Index(0), Index(4), Index(0), Index(0), Index(0)));
  gradcheck({x}, [&] { return mean_all(mul(voxel_shuffle(x, {2, 2, 2}), voxel_shuffle(x, {2, 2, 2}))); }, rng);

  Variable aniso = Variable::leaf(random_tensor({1, 4, 3, 2, 2}, rng), true);
  CHECK(voxel_shuffle(aniso, {1, 2, 2}).value().shape() == Shape{1, 1, 3, 4, 4});
}

TEST_CASE("global pooling and channel gating gradients") {
  Rng rng(8);
  Variable x = Variable::leaf(random_tensor({2, 3, 3, 3, 3}, rng), true);
  Variable g = Variable::leaf(random_tensor({2, 3}, rng), true);
  gradcheck({x, g}, [&] {
    return mean_all(scale_channels(x, sigmoid(add(global_avg_pool(x), g))));
  }, rng);
}

TEST_CASE("window pass and differentiable ssim gradients") {
  Rng rng(9);
  Tensor base = random_tensor({1, 1, 7, 7, 7}, rng, 0.2);
  base.array() += 0.5;
  Tensor noisy = base;
  for (Index i = 0; i < noisy.numel(); ++i) noisy[i] += 0.05 * rng.normal();
  Variable a = Variable::leaf(base, true);
  Variable b = Variable::leaf(noisy, true);
  gradcheck({a, b}, [&] { return ssim_mean(a, b, 5, 1.5, 1.0); }, rng, 1e-6, 1e-4);

  // identical inputs give SSIM exactly 1
  Variable same = Variable::leaf(base, false);
  CHECK(ssim_mean(same, same, 5, 1.5, 1.0).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("contrastive node matches the module and checks out on gradients") {
  Rng rng(10);
  Variable u = Variable::leaf(random_tensor({3, 6}, rng), true);
  Variable v = Variable::leaf(random_tensor({3, 6}, rng), true);
  ContrastiveConfig cfg;
  cfg.temperature = 0.25;
  gradcheck({u, v}, [&] { return contrastive_loss(u, v, cfg); }, rng, 1e-6, 1e-5);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  Rng rng(11);
  Variable x = Variable::leaf(random_tensor({5}, rng), true);
  Variable y = mul(x, x);          // x^2
  Variable z = add(y, mul_scalar(x, 3.0));  // x^2 + 3x
  mean_all(z).backward();
  for (Index i = 0; i < 5; ++i)
    CHECK(x.grad()[i] == doctest::Approx((2.0 * x.value()[i] + 3.0) / 5.0).epsilon(1e-12));
}

TEST_CASE("detach stops gradient flow") {
  Rng rng(12);
  Variable x = Variable::leaf(random_tensor({4}, rng), true);
  Variable out = mean_all(mul(detach(x), x));
  out.backward();
  // gradient is x (from the live side), not 2x
  for (Index i = 0; i < 4; ++i)
    CHECK(x.grad()[i] == doctest::Approx(x.value()[i] / 4.0).epsilon(1e-12));
}

TEST_CASE("no-grad region records nothing") {
  Rng rng(13);
  Variable x = Variable::leaf(random_tensor({4}, rng), true);
  NoGradGuard ng;
  Variable out = mean_all(mul(x, x));
  CHECK_FALSE(out.requires_grad());
}
