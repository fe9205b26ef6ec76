#include <cmath>
#include <vector>

#include "doctest.h"
#include "rtn/rng.hpp"
#include "rtn/tensor.hpp"

using namespace rtn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                     double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(vals), requires_grad);
}

// Direct quadruple-loop reference for cross-correlation with zero padding.
std::vector<double> conv_reference(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                                   int stride, int pad) {
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int k = kernel.dim(0), cout = kernel.dim(3);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow * cout, 0.0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int co = 0; co < cout; ++co) {
        double acc = bias.defined() ? bias.values()[static_cast<std::size_t>(co)] : 0.0;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride + ky - pad;
            const int ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < cin; ++ci) {
              acc += input.at3(iy, ix, ci) * kernel.values()[((static_cast<std::size_t>(ky) * k + kx) * cin + ci) * cout + co];
            }
          }
        }
        out[(static_cast<std::size_t>(oy) * ow + ox) * cout + co] = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d scalar kernel scales the input") {
  Tensor input = Tensor::full({3, 3, 1}, 1.0);
  Tensor kernel = Tensor::from_values({1, 1, 1, 1}, {2.0});
  Tensor out = conv2d(input, kernel, Tensor(), 1, 0);
  REQUIRE(out.shape() == std::vector<int>({3, 3, 1}));
  for (double v : out.values()) CHECK(v == 2.0);
}

TEST_CASE("conv2d zero kernel yields zero output") {
  Rng rng(7);
  Tensor input = random_tensor({3, 3, 2}, rng, false);
  Tensor kernel = Tensor::zeros({3, 3, 2, 3});
  Tensor out = conv2d(input, kernel, Tensor(), 1, 1);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches direct-summation reference") {
  Rng rng(11);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor input = random_tensor({5, 5, 2}, rng, false);
      Tensor kernel = random_tensor({3, 3, 2, 4}, rng, false);
      Tensor bias = random_tensor({4}, rng, false);
      Tensor out = conv2d(input, kernel, bias, stride, pad);
      const auto ref = conv_reference(input, kernel, bias, stride, pad);
      REQUIRE(out.size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::fabs(out.values()[i] - ref[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("conv2d reports shape problems with axes") {
  Tensor input = Tensor::zeros({4, 4, 3});
  Tensor kernel = Tensor::zeros({3, 3, 2, 4});
  CHECK_THROWS_AS(conv2d(input, kernel, Tensor(), 1, 1), DimensionError);
  Tensor even = Tensor::zeros({2, 2, 3, 4});
  CHECK_THROWS_AS(conv2d(input, even, Tensor(), 1, 0), DimensionError);
  Tensor big = Tensor::zeros({5, 5, 3, 4});
  CHECK_THROWS_AS(conv2d(Tensor::zeros({3, 3, 3}), big, Tensor(), 1, 0), DimensionError);
}

TEST_CASE("l2_normalize_last 3-4-5 triangle") {
  Tensor x = Tensor::from_values({1, 2}, {3.0, 4.0});
  Tensor y = l2_normalize_last(x);
  CHECK(std::fabs(y.values()[0] - 0.6) < 1e-12);
  CHECK(std::fabs(y.values()[1] - 0.8) < 1e-12);
}

TEST_CASE("l2_normalize_last maps zero vectors to zero") {
  Tensor x = Tensor::zeros({2, 3});
  Tensor y = l2_normalize_last(x);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("softmax uniform logits") {
  Tensor x = Tensor::zeros({4});
  Tensor y = softmax(x, 0);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  Tensor x = random_tensor({5, 7}, rng, false, -3.0, 3.0);
  Tensor y = softmax(x, 1);
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y.values()[static_cast<std::size_t>(i) * 7 + j];
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax gradient matches central differences") {
  Rng rng(5);
  Tensor x = random_tensor({2, 6}, rng, true, -2.0, 2.0);
  Tensor w = random_tensor({2, 6}, rng, false);
  const double err = grad_check(
      [&](const std::vector<Tensor>& in) { return sum(mul(softmax(in[0], 1), w)); }, {x});
  CHECK(err < 1e-6);
}

TEST_CASE("bilinear_sample hits lattice points exactly") {
  Rng rng(13);
  Tensor grid = random_tensor({4, 5, 3}, rng, false);
  Tensor locs = Tensor::from_values({3, 2}, {2.0, 3.0, 0.0, 0.0, 4.0, 3.0});
  Tensor out = bilinear_sample(grid, locs);
  for (int c = 0; c < 3; ++c) {
    CHECK(out.values()[static_cast<std::size_t>(c)] == grid.at3(3, 2, c));
    CHECK(out.values()[3 + static_cast<std::size_t>(c)] == grid.at3(0, 0, c));
    CHECK(out.values()[6 + static_cast<std::size_t>(c)] == grid.at3(3, 4, c));
  }
}

TEST_CASE("bilinear_sample midpoint averages neighbours") {
  Tensor grid = Tensor::from_values({1, 3, 1}, {2.0, 6.0, 10.0});
  Tensor locs = Tensor::from_values({1, 2}, {0.5, 0.0});
  Tensor out = bilinear_sample(grid, locs);
  CHECK(out.values()[0] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("bilinear_sample location gradients match finite differences") {
  Rng rng(17);
  Tensor grid = random_tensor({6, 6, 2}, rng, true);
  // Fractional interior locations, away from the lattice and borders.
  std::vector<double> lv;
  for (int i = 0; i < 5; ++i) {
    lv.push_back(rng.uniform(1.2, 4.3));
    lv.push_back(rng.uniform(1.2, 4.3));
  }
  Tensor locs = Tensor::from_values({5, 2}, std::move(lv), true);
  Tensor w = random_tensor({5, 2}, rng, false);
  const double err = grad_check(
      [&](const std::vector<Tensor>& in) { return sum(mul(bilinear_sample(in[0], in[1]), w)); },
      {grid, locs}, 1e-6);
  CHECK(err < 1e-5);
}

TEST_CASE("bilinear_sample zero border pads with zeros") {
  Tensor grid = Tensor::from_values({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  Tensor locs = Tensor::from_values({2, 2}, {-1.0, 0.0, 5.0, 5.0});
  Tensor out = bilinear_sample(grid, locs, Border::kZero);
  CHECK(out.values()[0] == 0.0);
  CHECK(out.values()[1] == 0.0);
}

TEST_CASE("backward of sum gives unit gradients") {
  Rng rng(19);
  Tensor x = random_tensor({3, 4}, rng, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of quadratic") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar and an intact graph") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), UsageError);
  Tensor loss = sum(y);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), UsageError);
}

TEST_CASE("retained graphs accumulate: two passes double the gradient") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss, true);
  const std::vector<double> once = x.grad();
  backward(loss, true);
  CHECK(x.grad()[0] == doctest::Approx(2.0 * once[0]));
  CHECK(x.grad()[1] == doctest::Approx(2.0 * once[1]));
}

TEST_CASE("zero_grad resets accumulators exactly") {
  Tensor x = Tensor::from_values({3}, {1.0, -2.0, 3.0}, true);
  backward(sum(mul(x, x)));
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("grad_check covers every registered op") {
  Rng rng(23);

  SUBCASE("add sub mul scale") {
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    const double err = grad_check(
        [](const std::vector<Tensor>& in) {
          return sum(mul(add(in[0], in[1]), sub(scale(in[0], 0.7), in[1])));
        },
        {a, b});
    CHECK(err < 1e-4);
  }

  SUBCASE("relu away from the kink") {
    std::vector<double> vals;
    for (int i = 0; i < 12; ++i) vals.push_back((i % 2 ? 1.0 : -1.0) * (0.2 + 0.1 * i));
    Tensor x = Tensor::from_values({12}, std::move(vals), true);
    const double err =
        grad_check([](const std::vector<Tensor>& in) { return sum(relu(in[0])); }, {x});
    CHECK(err < 1e-4);
  }

  SUBCASE("matmul") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    const double err = grad_check(
        [](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); }, {a, b});
    CHECK(err < 1e-4);
  }

  SUBCASE("mean") {
    Tensor x = random_tensor({5, 2}, rng);
    const double err = grad_check(
        [](const std::vector<Tensor>& in) { return mean(mul(in[0], in[0])); }, {x});
    CHECK(err < 1e-4);
  }

  SUBCASE("l2_normalize_last") {
    Tensor x = random_tensor({3, 4}, rng, true, 0.3, 1.5);
    Tensor w = random_tensor({3, 4}, rng, false);
    const double err = grad_check(
        [&](const std::vector<Tensor>& in) { return sum(mul(l2_normalize_last(in[0]), w)); }, {x});
    CHECK(err < 1e-4);
  }

  SUBCASE("conv2d zero and replicate padding") {
    for (PadMode mode : {PadMode::kZero, PadMode::kReplicate}) {
      Tensor input = random_tensor({5, 4, 2}, rng);
      Tensor kernel = random_tensor({3, 3, 2, 3}, rng);
      Tensor bias = random_tensor({3}, rng);
      const double err = grad_check(
          [mode](const std::vector<Tensor>& in) {
            return sum(conv2d(in[0], in[1], in[2], 2, 1, mode));
          },
          {input, kernel, bias});
      CHECK(err < 1e-4);
    }
  }

  SUBCASE("concat slice upsample") {
    Tensor a = random_tensor({3, 4, 2}, rng);
    Tensor b = random_tensor({3, 4, 3}, rng);
    const double err = grad_check(
        [](const std::vector<Tensor>& in) {
          Tensor cat = concat_last(in[0], in[1]);
          Tensor up = upsample_nearest(cat, 5, 7);
          return sum(mul(slice_last(up, 1, 3), slice_last(up, 2, 3)));
        },
        {a, b});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("forward and gradients are deterministic") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor input = random_tensor({6, 6, 2}, rng);
    Tensor kernel = random_tensor({3, 3, 2, 4}, rng);
    Tensor bias = random_tensor({4}, rng);
    Tensor out = l2_normalize_last(relu(conv2d(input, kernel, bias, 1, 1)));
    Tensor loss = mean(mul(out, out));
    zero_grad({input, kernel, bias});
    backward(loss);
    std::vector<double> snapshot = out.values();
    snapshot.insert(snapshot.end(), input.grad().begin(), input.grad().end());
    snapshot.insert(snapshot.end(), kernel.grad().begin(), kernel.grad().end());
    snapshot.push_back(loss.item());
    return snapshot;
  };
  const auto a = run(99);
  const auto b = run(99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("tensor invariants: shape product and grad shape") {
  Tensor t = Tensor::zeros({2, 3, 4}, true);
  CHECK(t.size() == 24);
  CHECK(t.grad().size() == t.size());
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), DimensionError);
}
