#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "srcl/networks.hpp"
#include "srcl/rng.hpp"

using namespace srcl;

namespace {

NetworkSpec small_spec(ScaleFactor f = ScaleFactor(2, 2, 2)) {
  NetworkSpec s;
  s.base_channels = 4;
  s.paper_faithful = false;
  s.n_encoder_blocks = 2;
  s.n_rcab_blocks = 1;
  s.disc_stages = 2;
  s.disc_base_channels = 4;
  s.upscale = f;
  return s;
}

Tensor random_batch(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("paper-faithful mode pins the encoder depth") {
  NetworkSpec s;
  s.n_encoder_blocks = 5;
  CHECK_THROWS_AS(s.validate(), config_error);
  s.paper_faithful = false;
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("lr_encode keeps the grid and emits base_channels feature maps") {
  NetworkSpec spec;  // paper-faithful: 6 blocks, 16 channels
  Networks nets(spec, 11);
  const Tensor x = random_batch({1, 1, 16, 16, 16}, 3);
  Variable f = nets.lr_encode(Variable::leaf(x, false));
  CHECK(f.value().shape() == Shape{1, 16, 16, 16, 16});

  // determinism: same state, same input, identical outputs
  Variable f2 = nets.lr_encode(Variable::leaf(x, false));
  CHECK((f.value().array() == f2.value().array()).all());

  // anisotropic grids are fine for the LR encoder
  Variable f3 = nets.lr_encode(Variable::leaf(random_batch({1, 1, 16, 16, 32}, 4), false));
  CHECK(f3.value().shape() == Shape{1, 16, 16, 16, 32});
}

TEST_CASE("hr_encode strides the first conv down to the LR grid") {
  Networks nets(NetworkSpec{}, 11);
  Variable f = nets.hr_encode(Variable::leaf(random_batch({1, 1, 32, 32, 32}, 5), false));
  CHECK(f.value().shape() == Shape{1, 16, 16, 16, 16});

  NetworkSpec aniso;
  aniso.upscale = ScaleFactor(1, 2, 2);
  Networks nets2(aniso, 11);
  Variable f2 = nets2.hr_encode(Variable::leaf(random_batch({1, 1, 16, 32, 32}, 6), false));
  CHECK(f2.value().shape() == Shape{1, 16, 16, 16, 16});

  CHECK_THROWS_AS(nets.hr_encode(Variable::leaf(random_batch({1, 1, 31, 32, 32}, 7), false)),
                  config_error);
}

TEST_CASE("decoders produce the right grids") {
  Networks nets(small_spec(), 13);
  const Tensor f = random_batch({2, 4, 8, 8, 8}, 8);
  CHECK(nets.sr_decode(Variable::leaf(f, false)).value().shape() == Shape{2, 1, 16, 16, 16});
  CHECK(nets.lr_decode(Variable::leaf(f, false)).value().shape() == Shape{2, 1, 8, 8, 8});

  NetworkSpec aniso = small_spec(ScaleFactor(1, 2, 2));
  Networks nets2(aniso, 13);
  CHECK(nets2.sr_decode(Variable::leaf(f, false)).value().shape() == Shape{2, 1, 8, 16, 16});

  // channel mismatch with the spec is a contract violation
  CHECK_THROWS_AS(nets.sr_decode(Variable::leaf(random_batch({2, 3, 8, 8, 8}, 9), false)), config_error);
  CHECK_THROWS_AS(nets.lr_decode(Variable::leaf(random_batch({2, 3, 8, 8, 8}, 9), false)), config_error);
}

TEST_CASE("zero feature map decodes to the finite bias response") {
  Networks nets(small_spec(), 17);
  Variable out = nets.sr_decode(Variable::leaf(Tensor::zeros({1, 4, 4, 4, 4}), false));
  CHECK(out.value().all_finite());
  // two samples of zeros give identical responses
  Variable out2 = nets.sr_decode(Variable::leaf(Tensor::zeros({2, 4, 4, 4, 4}), false));
  CHECK(out2.value().all_finite());
}

TEST_CASE("every sr_decoder parameter receives gradient from an L1 fit at init") {
  Networks nets(small_spec(), 19);
  Variable f = Variable::leaf(random_batch({2, 4, 4, 4, 4}, 21), false);
  Variable target = Variable::leaf(random_batch({2, 1, 8, 8, 8}, 22), false);
  Variable loss = l1_loss(nets.sr_decode(f), target);
  loss.backward();
  for (const auto& [name, v] : nets.gen_params.items()) {
    if (name.rfind("sr_decoder", 0) != 0) continue;
    INFO(name);
    REQUIRE(v.grad().numel() == v.value().numel());
    CHECK(v.grad().array().abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("discriminators emit one logit per sample and check their inputs") {
  Networks nets(small_spec(), 23);
  Variable logits = nets.discriminate(DiscKind::source, Variable::leaf(random_batch({2, 1, 16, 16, 16}, 25), false));
  CHECK(logits.value().shape() == Shape{2});

  Variable again = nets.discriminate(DiscKind::source, Variable::leaf(random_batch({2, 1, 16, 16, 16}, 25), false));
  CHECK((logits.value().array() == again.value().array()).all());

  // the feature discriminator refuses image volumes
  CHECK_THROWS_AS(nets.discriminate(DiscKind::feature, Variable::leaf(random_batch({2, 1, 8, 8, 8}, 26), false)),
                  config_error);
  Variable feat = nets.discriminate(DiscKind::feature, Variable::leaf(random_batch({2, 4, 8, 8, 8}, 27), false));
  CHECK(feat.value().shape() == Shape{2});
}

TEST_CASE("shape round trips across encoder-decoder pairs") {
  Networks nets(small_spec(), 29);
  const Tensor lr = random_batch({1, 1, 8, 8, 8}, 31);
  const Tensor hr = random_batch({1, 1, 16, 16, 16}, 32);
  CHECK(nets.sr_decode(nets.lr_encode(Variable::leaf(lr, false))).value().shape() ==
        Shape{1, 1, 16, 16, 16});
  CHECK(nets.lr_decode(nets.hr_encode(Variable::leaf(hr, false))).value().shape() ==
        Shape{1, 1, 8, 8, 8});
}

TEST_CASE("parameter count is a pure function of the spec") {
  Networks a(small_spec(), 1);
  Networks b(small_spec(), 999);
  CHECK(a.parameter_count() == b.parameter_count());
  CHECK(a.parameter_count() > 0);

  NetworkSpec wider = small_spec();
  wider.base_channels = 8;
  Networks c(wider, 1);
  CHECK(c.parameter_count() > a.parameter_count());
}

TEST_CASE("channel attention gates stay in (0, 1)") {
  Networks nets(small_spec(), 37);
  Rng rng(41);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor f = random_batch({2, 4, 4, 4, 4}, rng.next_u64());
    f.array() *= 3.0;
    const Variable gate = nets.sr_decoder.blocks[0].ca.gate(Variable::leaf(f, false));
    CHECK(gate.value().min() > 0.0);
    CHECK(gate.value().max() < 1.0);
  }
}

TEST_CASE("seeded initialization reproduces bitwise") {
  Networks a(small_spec(), 4242);
  Networks b(small_spec(), 4242);
  CHECK(a.parameter_hash() == b.parameter_hash());
  for (std::size_t i = 0; i < a.gen_params.items().size(); ++i) {
    const auto& [an, av] = a.gen_params.items()[i];
    const auto& [bn, bv] = b.gen_params.items()[i];
    CHECK(an == bn);
    CHECK((av.value().array() == bv.value().array()).all());
  }
  Networks c(small_spec(), 4243);
  CHECK(a.parameter_hash() != c.parameter_hash());
}
