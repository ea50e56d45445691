#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "aba/conv.hpp"
#include "aba/gradcheck.hpp"
#include "aba/image_io.hpp"
#include "aba/kernels.hpp"
#include "aba/tape.hpp"
#include "aba/warp.hpp"
#include "helpers.hpp"

using namespace aba;
using aba::test::random_tensor;

namespace {

Tensor row(std::vector<double> v) {
  Tensor t(1, 1, static_cast<int>(v.size()));
  t.data = std::move(v);
  return t;
}

Tensor flow_row(std::vector<double> dx) {
  Tensor f(2, 1, static_cast<int>(dx.size()));
  for (std::size_t i = 0; i < dx.size(); ++i) f.data[i] = dx[i];
  return f;
}

/// Reference bilinear sampler with edge clamping, written independently of warp.hpp.
double sample_ref(const Tensor& img, int c, double y, double x) {
  const double cy = std::clamp(y, 0.0, img.height - 1.0), cx = std::clamp(x, 0.0, img.width - 1.0);
  const int y0 = static_cast<int>(std::floor(cy)), x0 = static_cast<int>(std::floor(cx));
  const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double fy = cy - y0, fx = cx - x0;
  return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
         fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

}  // namespace

TEST(Warp, ZeroFlowIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor img = random_tensor(3, 9, 11, rng);
  EXPECT_EQ(warp(img, FlowField(9, 11)).data, img.data);
}

TEST(Warp, BilinearMidpoint) {
  const Tensor out = warp(row({0.0, 1.0}), flow_row({0.5, 0.0}));
  EXPECT_DOUBLE_EQ(out.data[0], 0.5);
  EXPECT_DOUBLE_EQ(out.data[1], 1.0);
}

TEST(Warp, ConstantShiftClampsAtBorder) {
  const Tensor out = warp(row({0.0, 0.3, 0.6, 0.9}), flow_row({1, 1, 1, 1}));
  const std::vector<double> want{0.3, 0.6, 0.9, 0.9};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data[i], want[i], 1e-12);
}

TEST(Warp, MatchesReferenceSampler) {
  std::mt19937_64 rng(2);
  const Tensor img = random_tensor(2, 7, 9, rng);
  const Tensor fl = random_tensor(2, 7, 9, rng, -3.0, 3.0);
  const Tensor out = warp(img, fl);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x)
        EXPECT_NEAR(out.at(c, y, x), sample_ref(img, c, y + fl.at(1, y, x), x + fl.at(0, y, x)), 1e-12);
}

TEST(Warp, OutputWithinInputRange) {
  std::mt19937_64 rng(3);
  const Tensor img = random_tensor(1, 8, 8, rng, 0.2, 0.7);
  const Tensor out = warp(img, random_tensor(2, 8, 8, rng, -5, 5));
  for (double v : out.data) {
    EXPECT_GE(v, 0.2 - 1e-12);
    EXPECT_LE(v, 0.7 + 1e-12);
  }
}

TEST(Warp, DimensionMismatchThrows) {
  EXPECT_THROW(warp(Tensor(1, 4, 4), FlowField(4, 5)), InvalidArgument);
}

TEST(WarpBackward, IdentityJacobianAtZeroFlow) {
  std::mt19937_64 rng(4);
  const Tensor img = random_tensor(1, 6, 6, rng);
  const auto g = warp_backward(img, FlowField(6, 6), Tensor(1, 6, 6, 1.0));
  for (double v : g.image.data) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(WarpBackward, SlopeOfLinearSegment) {
  Tensor grad_out(1, 1, 2);
  grad_out.data[0] = 1.0;
  const auto g = warp_backward(row({0.0, 1.0}), flow_row({0.5, 0.0}), grad_out);
  EXPECT_DOUBLE_EQ(g.flow.data[0], 1.0);
}

TEST(WarpBackward, KnotUsesAveragedSlope) {
  // Sample lands exactly on pixel 1 of [0, 1, 5]: left slope 1, right slope 4.
  Tensor grad_out(1, 1, 3);
  grad_out.data[0] = 1.0;
  const auto g = warp_backward(row({0.0, 1.0, 5.0}), flow_row({1.0, 0.0, 0.0}), grad_out);
  EXPECT_DOUBLE_EQ(g.flow.data[0], 2.5);
}

TEST(WarpBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Tensor img = random_tensor(2, 8, 8, rng);
  // Flows with fractional parts away from knots so the probe stays on one segment.
  Tensor fl = random_tensor(2, 8, 8, rng, -2.0, 2.0);
  for (double& v : fl.data) {
    const double f = v - std::floor(v);
    if (f < 0.05 || f > 0.95) v += 0.3;
  }
  const double err = grad_check(
      [](Tape&, const std::vector<Var>& p) { return ad::reduce_sum(ad::mul(ad::warp(p[0], p[1]), ad::warp(p[0], p[1]))); },
      {img, fl}, 1e-3);
  EXPECT_LT(err, 1e-3);
}

TEST(Tape, SquareDerivative) {
  Tape t;
  Var x = t.leaf(scalar_tensor(3.0));
  Var y = ad::mul(x, x);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x).data[0], 6.0);
}

TEST(Tape, NonScalarLossThrows) {
  Tape t;
  Var x = t.leaf(Tensor(1, 2, 2, 1.0));
  EXPECT_THROW(t.backward(x), InvalidArgument);
}

TEST(Tape, UntouchedLeafGetsZeroGradient) {
  Tape t;
  Var x = t.leaf(scalar_tensor(2.0));
  Var unused = t.leaf(Tensor(1, 2, 3, 7.0));
  t.backward(ad::mul(x, x));
  const Tensor g = t.grad(unused);
  EXPECT_EQ(g.channels * g.height * g.width, 6);
  for (double v : g.data) EXPECT_EQ(v, 0.0);
}

TEST(Tape, BackwardIsLinearInTheLoss) {
  std::mt19937_64 rng(6);
  const Tensor a = random_tensor(1, 3, 3, rng);
  auto grad_of = [&](int which) {
    Tape t;
    Var x = t.leaf(a);
    Var l1 = ad::reduce_sum(ad::mul(x, x));
    Var l2 = ad::reduce_sum(ad::tanh(x));
    Var l = which == 0 ? l1 : which == 1 ? l2 : ad::add(l1, l2);
    t.backward(l);
    return t.grad(x);
  };
  const Tensor g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(g12.data[i], g1.data[i] + g2.data[i], 1e-12);
}

TEST(Tape, SoftmaxCrossEntropyClosedForm) {
  // d(-log softmax_k)/dz = softmax - onehot_k
  Tensor z(4, 1, 1);
  z.data = {0.3, -1.2, 2.0, 0.5};
  const Tensor s = kernels::channel_softmax(z);
  const int k = 1;
  Tensor up(4, 1, 1);
  up.data[k] = -1.0 / s.data[k];
  const Tensor g = kernels::channel_softmax_backward(s, up);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(g.data[i], s.data[i] - (i == k ? 1.0 : 0.0), 1e-12);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(7);
  const double err = grad_check(
      [](Tape&, const std::vector<Var>& p) { return ad::reduce_sum(ad::affine(ad::add(p[0], p[0]), 3.0, 1.0)); },
      {random_tensor(2, 3, 3, rng)}, 1e-3);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, TanhSlopeAtZero) {
  const auto r = grad_check_detailed([](Tape&, const std::vector<Var>& p) { return ad::reduce_sum(ad::tanh(p[0])); },
                                     {scalar_tensor(0.0)}, 1e-3);
  EXPECT_DOUBLE_EQ(r.worst_analytic, 1.0);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(GradCheck, NonFiniteLossThrows) {
  EXPECT_THROW(grad_check([](Tape&, const std::vector<Var>& p) {
                 return ad::affine(p[0], std::numeric_limits<double>::infinity());
               },
                          {scalar_tensor(1.0)}, 1e-3),
               NumericFailure);
}

// Every primitive with a backward rule, on small random instances.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  const Tensor a = random_tensor(3, 4, 5, rng, -1.0, 1.0);
  const Tensor b = random_tensor(3, 4, 5, rng, -1.0, 1.0);
  const Tensor target = random_tensor(3, 4, 5, rng, -1.0, 1.0);
  Tensor labels = random_tensor(3, 4, 5, rng);
  for (double& v : labels.data) v = v > 0.5;
  TapedScalarFn f;
  std::vector<Tensor> params{a, b};
  switch (GetParam()) {
    case 0: f = [&](Tape&, auto& p) { return ad::reduce_sum(ad::mul(ad::add(p[0], p[1]), ad::sub(p[0], p[1]))); }; break;
    case 1: f = [&](Tape&, auto& p) { return ad::squared_error(ad::mul(p[0], p[1]), target); }; break;
    case 2: f = [&](Tape&, auto& p) { return ad::bce_with_logits(ad::mul(p[0], p[1]), labels); }; break;
    case 3: f = [&](Tape&, auto& p) { return ad::norm2(ad::add(p[0], p[1])); }; break;
    case 4: f = [&](Tape&, auto& p) { return ad::squared_error(ad::tanh(ad::mul(p[0], p[1])), target); }; break;
    case 5: f = [&](Tape&, auto& p) { return ad::squared_error(ad::leaky_relu(ad::add(p[0], p[1]), 0.2), target); }; break;
    case 6: f = [&](Tape&, auto& p) { return ad::squared_error(ad::channel_softmax(ad::mul(p[0], p[1])), target); }; break;
    case 7:
      f = [&](Tape&, auto& p) {
        return ad::squared_error(ad::concat_channels({ad::slice_channels(p[0], 1, 2), ad::slice_channels(p[1], 0, 1)}),
                                 target);
      };
      break;
    case 8:
      f = [&](Tape&, auto& p) {
        Var s = ad::prefix_sums(p[0]);
        Var r = ad::suffix_sums(p[1]);
        return ad::reduce_sum(ad::mul(ad::slice_channels(s, 1, 3), ad::slice_channels(r, 0, 3)));
      };
      break;
    case 9:
      params = {random_tensor(3, 4, 5, rng), random_tensor(2, 4, 5, rng, -1, 1)};
      f = [&](Tape&, auto& p) { return ad::norm2(ad::outer_planes(p[0], p[1], -0.7)); };
      break;
    case 10:
      params = {random_tensor(3, 4, 5, rng), random_tensor(6, 4, 5, rng)};
      f = [&](Tape&, auto& p) { return ad::norm2(ad::weighted_stack_sum(p[0], p[1])); };
      break;
    case 11: f = [&](Tape&, auto& p) { return ad::norm2(ad::luma(ad::mul(p[0], p[1]))); }; break;
    case 12: f = [&](Tape&, auto& p) { return ad::norm2(ad::gradient_magnitude(ad::slice_channels(p[0], 0, 1))); }; break;
    case 13: f = [&](Tape&, auto& p) { return ad::squared_error(ad::resize(p[0], 7, 3), Tensor(3, 7, 3, 0.1)); }; break;
    case 14: {
      const kernels::ConvShape s{3, 2, 4, 2, 1};
      params = {random_tensor(3, 8, 8, rng, -1, 1), random_tensor(6, 4, 4, rng, -1, 1), random_tensor(2, 1, 1, rng)};
      f = [s](Tape&, auto& p) { return ad::norm2(ad::conv2d(p[0], p[1], p[2], s)); };
      break;
    }
    case 15: {
      const kernels::ConvShape s{3, 2, 4, 2, 1};
      params = {random_tensor(3, 4, 4, rng, -1, 1), random_tensor(6, 4, 4, rng, -1, 1), random_tensor(2, 1, 1, rng)};
      f = [s](Tape&, auto& p) { return ad::norm2(ad::conv_transpose2d(p[0], p[1], p[2], s)); };
      break;
    }
  }
  EXPECT_LT(grad_check(f, params, 1e-3), 1e-3);
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGrad, ::testing::Range(0, 16));

TEST(Conv, OutputSizes) {
  const kernels::ConvShape s{1, 1, 4, 2, 1};
  EXPECT_EQ(kernels::conv_out_size(64, s), 32);
  EXPECT_EQ(kernels::deconv_out_size(32, s), 64);
}

TEST(Conv, MatchesDirectLoop) {
  std::mt19937_64 rng(8);
  const kernels::ConvShape s{2, 3, 4, 2, 1};
  const Tensor in = random_tensor(2, 6, 6, rng), w = random_tensor(6, 4, 4, rng), b = random_tensor(3, 1, 1, rng);
  const Tensor out = kernels::conv2d(in, w, b, s);
  ASSERT_EQ(out.height, 3);
  for (int o = 0; o < 3; ++o)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        double acc = b.data[o];
        for (int i = 0; i < 2; ++i)
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx) {
              const int iy = 2 * y - 1 + ky, ix = 2 * x - 1 + kx;
              if (iy >= 0 && iy < 6 && ix >= 0 && ix < 6) acc += w.at(o * 2 + i, ky, kx) * in.at(i, iy, ix);
            }
        EXPECT_NEAR(out.at(o, y, x), acc, 1e-12);
      }
}

TEST(Conv, TransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, conv_T(y)> with shared weights and zero bias.
  std::mt19937_64 rng(9);
  const kernels::ConvShape s{2, 3, 4, 2, 1};
  const kernels::ConvShape st{3, 2, 4, 2, 1};
  const Tensor x = random_tensor(2, 8, 8, rng), y = random_tensor(3, 4, 4, rng), w = random_tensor(6, 4, 4, rng);
  // conv weight index o*in+i; transposed index i*out+o with in=3,out=2 is the same layout.
  const Tensor cx = kernels::conv2d(x, w, Tensor(3, 1, 1), s);
  const Tensor ty = kernels::conv_transpose2d(y, w, Tensor(2, 1, 1), st);
  double l = 0, r = 0;
  for (std::size_t i = 0; i < cx.size(); ++i) l += cx.data[i] * y.data[i];
  for (std::size_t i = 0; i < ty.size(); ++i) r += x.data[i] * ty.data[i];
  EXPECT_NEAR(l, r, 1e-10);
}

TEST(ImageIo, ByteConversionRoundsHalfAwayFromZero) {
  EXPECT_EQ(io::to_byte(0.5 / 255.0), 1);
  EXPECT_EQ(io::to_byte(1.0), 255);
  EXPECT_EQ(io::to_byte(-0.2), 0);
  EXPECT_DOUBLE_EQ(io::from_byte(51), 0.2);
}

TEST(ImageIo, PngAndPnmRoundTrip) {
  const auto dir = aba::test::scratch_dir("io");
  std::mt19937_64 rng(10);
  for (int c : {1, 3}) {
    Tensor f = random_tensor(c, 9, 12, rng);
    for (double& v : f.data) v = io::from_byte(io::to_byte(v));
    for (const char* ext : {".png", c == 1 ? ".pgm" : ".ppm"}) {
      const auto p = dir / (std::string("f") + std::to_string(c) + ext);
      io::write_image(p, f);
      const Tensor g = io::read_image(p);
      ASSERT_TRUE(g.same_shape(f));
      EXPECT_LT(max_abs_diff(f, g), 1e-12);
    }
  }
}

TEST(ImageIo, MissingFileIsLoadError) {
  EXPECT_THROW(io::read_image("/nonexistent/x.png"), LoadError);
}

TEST(ImageIo, WrongMagicIsLoadError) {
  const auto p = aba::test::scratch_dir("magic") / "bad.bin";
  std::ofstream(p) << "NOTMAGIC1234567890";
  std::ifstream in(p, std::ios::binary);
  EXPECT_THROW(io::bin::expect_magic(in, "FLOWv1", p.string()), LoadError);
}
