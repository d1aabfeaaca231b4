#include <torch/torch.h>

#include "mpls/blocks.hpp"
#include "mpls/ffa.hpp"

// libtorch defines its own CHECK macro; doctest's has to win.
#undef CHECK
#include <doctest.h>

using namespace mpls;

namespace {

BlockConfig small_block(std::int64_t c, std::int64_t groups = 4) {
  BlockConfig b;
  b.base_width = c;
  b.groupnorm_groups = groups;
  return b;
}

// Closed-form parameter counts, written out independently of the modules.
std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k3, std::int64_t groups = 1) {
  return out * (in / groups) * k3 + out;
}
std::int64_t convnext_params(std::int64_t c, std::int64_t k3, std::int64_t e) {
  return conv_params(c, c, k3, c) + 2 * c + conv_params(c, e * c, 1) + conv_params(e * c, c, 1);
}
std::int64_t down_params(std::int64_t c, std::int64_t k3, std::int64_t e) {
  return conv_params(c, c, k3, c) + 2 * c + conv_params(c, e * c, 1) + conv_params(e * c, 2 * c, 1) +
         conv_params(c, 2 * c, 1);
}

// Relative error between the autograd gradient of sum(f(x)) and central differences.
double fd_gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
  x = x.clone().set_requires_grad(true);
  f(x).sum().backward();
  const auto analytic = x.grad().clone();
  torch::NoGradGuard ng;
  auto numeric = torch::zeros_like(x);
  auto flat = x.view({-1});
  auto nflat = numeric.view({-1});
  const double h = 1e-6;
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double v = flat[i].item<double>();
    flat[i] = v + h;
    const double up = f(x).sum().item<double>();
    flat[i] = v - h;
    const double dn = f(x).sum().item<double>();
    flat[i] = v;
    nflat[i] = (up - dn) / (2 * h);
  }
  return ((analytic - numeric).norm() / numeric.norm().clamp_min(1e-12)).item<double>();
}

}  // namespace

TEST_CASE("stem projects to C channels and keeps the grid") {
  torch::NoGradGuard ng;
  const auto cfg = small_block(32);
  Stem s3(3, cfg), s1(1, cfg);
  CHECK(s3->forward(torch::randn({1, 3, 16, 16, 16})).sizes() == std::vector<std::int64_t>{1, 32, 16, 16, 16});
  CHECK(s1->forward(torch::randn({1, 1, 8, 12, 16})).sizes() == std::vector<std::int64_t>{1, 32, 8, 12, 16});
  CHECK_THROWS_AS(s3->forward(torch::randn({1, 1, 8, 8, 8})), std::invalid_argument);
}

TEST_CASE("convnext block with zeroed projection is the identity") {
  torch::NoGradGuard ng;
  ConvNext3d b(16, small_block(16));
  b->zero_final_projection();
  const auto x = torch::randn({2, 16, 6, 6, 6});
  CHECK(torch::equal(b->forward(x), x));
}

TEST_CASE("convnext block keeps shape and its gradient matches finite differences") {
  auto cfg = small_block(2, 1);
  ConvNext3d b(2, cfg);
  b->to(torch::kDouble);
  {
    torch::NoGradGuard ng;
    CHECK(b->forward(torch::randn({1, 2, 4, 4, 4}, torch::kDouble)).sizes() ==
          std::vector<std::int64_t>{1, 2, 4, 4, 4});
  }
  torch::manual_seed(3);
  const auto x = torch::randn({1, 2, 4, 4, 4}, torch::kDouble);
  CHECK(fd_gradient_error([&](const torch::Tensor& t) { return b->forward(t); }, x) <= 1e-4);
}

TEST_CASE("down block halves the grid and doubles the channels") {
  torch::NoGradGuard ng;
  DownConvNext3d d(8, small_block(8));
  CHECK(d->forward(torch::randn({1, 8, 16, 16, 16})).sizes() == std::vector<std::int64_t>{1, 16, 8, 8, 8});
  CHECK(d->forward(torch::randn({1, 8, 4, 8, 2})).sizes() == std::vector<std::int64_t>{1, 16, 2, 4, 1});
  CHECK_THROWS_AS(d->forward(torch::randn({1, 8, 7, 8, 8})), std::invalid_argument);
}

TEST_CASE("output heads contract the level width to two logits") {
  torch::NoGradGuard ng;
  BlockConfig cfg;  // C = 32
  for (const auto& [level, width] : std::vector<std::pair<int, std::int64_t>>{{1, 32}, {3, 128}, {4, 256}}) {
    CHECK(cfg.channels_at_level(level) == width);
    OutputHead h(width);
    CHECK(h->forward(torch::zeros({1, width, 2, 2, 2})).size(1) == 2);
  }
}

TEST_CASE("parameter counts follow the closed form") {
  for (const std::int64_t c : {8, 16}) {
    for (const std::int64_t e : {2, 4}) {
      auto cfg = small_block(c);
      cfg.expansion = e;
      CHECK(parameter_count(*ConvNext3d(c, cfg)) == convnext_params(c, 27, e));
      CHECK(parameter_count(*DownConvNext3d(c, cfg)) == down_params(c, 27, e));
    }
  }
  auto k5 = small_block(8);
  k5.kernel = {5, 5, 5};
  CHECK(parameter_count(*ConvNext3d(8, k5)) == convnext_params(8, 125, 2));
  CHECK(parameter_count(*Stem(3, small_block(32))) == conv_params(3, 32, 1));
  CHECK(parameter_count(*UpConv3d(16, small_block(8))) == 16 * 8 * 8 + 8 + 2 * 8);
}

TEST_CASE("block config validation") {
  BlockConfig b;
  CHECK_NOTHROW(b.validate(4));
  b.base_width = 6;
  CHECK_THROWS_AS(b.validate(4), std::invalid_argument);
  b = BlockConfig{};
  b.kernel = {3, 4, 3};
  CHECK_THROWS_AS(b.validate(4), std::invalid_argument);
}

TEST_CASE("attention gates lie in (0, 1)") {
  torch::NoGradGuard ng;
  torch::manual_seed(1);
  FFAConfig cfg;
  Apca a(16, 32, cfg);
  Gfa g(16, 32, cfg);
  for (int trial = 0; trial < 3; ++trial) {
    const auto xf = 3 * torch::randn({2, 16, 6, 6, 6});
    const auto xg = 3 * torch::randn({2, 32, 6, 6, 6});
    for (const auto& gate : {a->gate(xf, xg), g->gate(xf, xg)}) {
      CHECK(gate.sizes() == std::vector<std::int64_t>{2, 1, 6, 6, 6});
      CHECK(gate.gt(0).all().item<bool>());
      CHECK(gate.lt(1).all().item<bool>());
    }
    const auto ratio = a->forward(xf, xg) / xf;
    CHECK(ratio.gt(0).all().item<bool>());
    CHECK(ratio.lt(1).all().item<bool>());
  }
  CHECK_THROWS_AS(a->gate(torch::zeros({1, 16, 4, 4, 4}), torch::zeros({1, 32, 4, 4, 2})), std::invalid_argument);
  CHECK_THROWS_AS(g->gate(torch::zeros({1, 16, 4, 4, 4}), torch::zeros({1, 32, 2, 4, 4})), std::invalid_argument);
}

TEST_CASE("a saturated gate passes x_f through") {
  torch::NoGradGuard ng;
  FFAConfig cfg;
  CfFfa f(8, 8, cfg);
  for (auto* conv : {&f->apca()->gate_conv(), &f->gfa()->gate_conv()}) {
    (*conv)->weight.zero_();
    (*conv)->bias.fill_(50.0);
  }
  const auto xf = torch::randn({1, 8, 4, 4, 4});
  const auto xg = torch::randn({1, 8, 4, 4, 4});
  CHECK(torch::allclose(f->apca()->forward(xf, xg), xf));
  CHECK(torch::allclose(f->gfa()->forward(xf, xg), xf));
  CHECK(torch::allclose(f->forward(xf, xg), xf));
}

TEST_CASE("constant inputs give a spatially constant coarse gate") {
  torch::NoGradGuard ng;
  Apca a(8, 8, FFAConfig{});
  const auto gate = a->gate(torch::full({1, 8, 5, 6, 7}, 0.3), torch::full({1, 8, 5, 6, 7}, -1.2));
  CHECK((gate - gate.flatten()[0]).abs().max().item<float>() < 1e-6f);
}

TEST_CASE("coarse gate only sees the three axis profiles") {
  torch::NoGradGuard ng;
  torch::manual_seed(7);
  Apca a(8, 8, FFAConfig{});
  const auto base_f = torch::randn({1, 8, 6, 6, 6});
  const auto base_g = torch::randn({1, 8, 6, 6, 6});
  const auto va_f = torch::randn({8}), vb_f = torch::randn({8});
  const auto va_g = torch::randn({8}), vb_g = torch::randn({8});
  const std::int64_t z = 2, y1 = 1, y2 = 4, x1 = 0, x2 = 3;

  // Places (p, q / q', p') in a 2x2 square of slab z.
  auto build = [&](const torch::Tensor& base, const torch::Tensor& p, const torch::Tensor& q,
                   const torch::Tensor& p2, const torch::Tensor& q2) {
    auto t = base.clone();
    t.index_put_({0, torch::indexing::Slice(), z, y1, x1}, p);
    t.index_put_({0, torch::indexing::Slice(), z, y1, x2}, q);
    t.index_put_({0, torch::indexing::Slice(), z, y2, x1}, q2);
    t.index_put_({0, torch::indexing::Slice(), z, y2, x2}, p2);
    return t;
  };
  // a b / b a, swapped along x to b a / a b: every row and column keeps its multiset.
  const auto g0 = a->gate(build(base_f, va_f, vb_f, va_f, vb_f), build(base_g, va_g, vb_g, va_g, vb_g));
  const auto g1 = a->gate(build(base_f, vb_f, va_f, vb_f, va_f), build(base_g, vb_g, va_g, vb_g, va_g));
  CHECK((g0 - g1).abs().max().item<float>() < 1e-5f);

  // a a / b b swapped to b b / a a changes the row profile, so the gate moves.
  const auto h0 = a->gate(build(base_f, va_f, va_f, vb_f, vb_f), build(base_g, va_g, va_g, vb_g, vb_g));
  const auto h1 = a->gate(build(base_f, vb_f, vb_f, va_f, va_f), build(base_g, vb_g, vb_g, va_g, va_g));
  CHECK((h0 - h1).abs().max().item<float>() > 1e-4f);
}

TEST_CASE("fine gate changes only inside the receptive field") {
  torch::NoGradGuard ng;
  torch::manual_seed(9);
  Gfa g(8, 8, FFAConfig{});
  const auto xf = torch::randn({1, 8, 10, 10, 10});
  const auto xg = torch::randn({1, 8, 10, 10, 10});
  // Swapping two voxels keeps the group-norm statistics, so only their neighbourhoods may move.
  auto swapped = xg.clone();
  using torch::indexing::Slice;
  const auto p = xg.index({0, Slice(), 2, 2, 2}).clone();
  const auto q = xg.index({0, Slice(), 7, 7, 7}).clone();
  swapped.index_put_({0, Slice(), 2, 2, 2}, q);
  swapped.index_put_({0, Slice(), 7, 7, 7}, p);
  const auto diff = (g->gate(xf, xg) - g->gate(xf, swapped)).abs()[0][0];
  auto near = [](std::int64_t z, std::int64_t y, std::int64_t x, std::int64_t c) {
    return std::abs(z - c) <= 1 && std::abs(y - c) <= 1 && std::abs(x - c) <= 1;
  };
  float outside = 0.0f;
  for (std::int64_t z = 0; z < 10; ++z)
    for (std::int64_t y = 0; y < 10; ++y)
      for (std::int64_t x = 0; x < 10; ++x)
        if (!near(z, y, x, 2) && !near(z, y, x, 7)) outside = std::max(outside, diff[z][y][x].item<float>());
  CHECK(outside < 1e-6f);
  CHECK(diff[2][2][2].item<float>() > 1e-4f);
  CHECK(diff[7][7][7].item<float>() > 1e-4f);
}

TEST_CASE("cf_ffa keeps the encoder shape and resizes the decoder features") {
  torch::NoGradGuard ng;
  CfFfa f(64, 128, FFAConfig{});
  const auto out = f->forward(torch::randn({1, 64, 32, 32, 32}), torch::randn({1, 128, 16, 16, 16}));
  CHECK(out.sizes() == std::vector<std::int64_t>{1, 64, 32, 32, 32});
  const auto zero = f->forward(torch::zeros({1, 64, 8, 8, 8}), torch::randn({1, 128, 8, 8, 8}));
  CHECK(zero.abs().max().item<float>() == 0.0f);
}

TEST_CASE("sum combination adds the two gated maps") {
  torch::NoGradGuard ng;
  torch::manual_seed(4);
  FFAConfig cfg;
  cfg.combine = CombineMode::Sum;
  CfFfa f(8, 8, cfg);
  const auto xf = torch::randn({1, 8, 4, 4, 4}), xg = torch::randn({1, 8, 4, 4, 4});
  CHECK(torch::allclose(f->forward(xf, xg), f->apca()->forward(xf, xg) + f->gfa()->forward(xf, xg)));
}

TEST_CASE("gradients reach both skip inputs") {
  torch::manual_seed(5);
  FFAConfig cfg;
  cfg.groupnorm_groups = 2;
  CfFfa f(2, 2, cfg);
  const auto xf = torch::randn({1, 2, 8, 8, 8}).set_requires_grad(true);
  const auto xg = torch::randn({1, 2, 8, 8, 8}).set_requires_grad(true);
  f->forward(xf, xg).pow(2).sum().backward();
  CHECK(xf.grad().abs().sum().item<float>() > 0.0f);
  CHECK(xg.grad().abs().sum().item<float>() > 0.0f);
  CHECK(torch::isfinite(xg.grad()).all().item<bool>());

  // Finite-difference sensitivity to x_g in double precision.
  f->to(torch::kDouble);
  const auto xf_d = xf.detach().to(torch::kDouble);
  const auto xg_d = xg.detach().to(torch::kDouble);
  CHECK(fd_gradient_error([&](const torch::Tensor& t) { return f->forward(xf_d, t).pow(2); }, xg_d) <= 1e-4);
}
