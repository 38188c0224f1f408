#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "ifgmi/core/adam.hpp"
#include "ifgmi/core/serialize.hpp"
#include "primitive_cases.hpp"

using namespace ifgmi;
using ifgmi::testing::randn;

TEST(Ops, IdentityMatmulReturnsOperand) {
  Rng rng(1);
  Tensor<float> eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.data_mut()[i * 3 + i] = 1.f;
  Tensor<float> a(Shape{3, 5});
  for (auto& v : a.data_mut()) v = normal<float>(rng);
  auto out = matmul(eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(out[i], a[i]);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto p = softmax(Tensor<float>(Shape{1, 2}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(Ops, ArccoshOfOneIsZero) {
  EXPECT_DOUBLE_EQ(arccosh(Tensor<double>::scalar(1.0)).item(), 0.0);
  EXPECT_NEAR(arccosh(Tensor<double>::scalar(std::cosh(2.5))).item(), 2.5, 1e-12);
}

TEST(Ops, ShapeMismatchNamesPrimitiveAndShapes) {
  Tensor<float> a(Shape{2, 3}), b(Shape{3, 2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[3,2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(conv2d(Tensor<float>(Shape{1, 2, 4, 4}), Tensor<float>(Shape{3, 1, 3, 3}), Tensor<float>(Shape{3})),
               ShapeError);
}

TEST(Ops, ConvMatchesDirectLoop) {
  Rng rng(7);
  auto x = randn({2, 3, 6, 5}, rng);
  auto w = randn({4, 3, 3, 3}, rng);
  auto b = randn({4}, rng);
  auto y = conv2d(x, w, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (int yy = 0; yy < 6; ++yy)
        for (int xx = 0; xx < 5; ++xx) {
          double acc = b[o];
          for (std::size_t c = 0; c < 3; ++c)
            for (int ky = -1; ky <= 1; ++ky)
              for (int kx = -1; kx <= 1; ++kx) {
                int sy = yy + ky, sx = xx + kx;
                if (sy < 0 || sy >= 6 || sx < 0 || sx >= 5) continue;
                acc += w[((o * 3 + c) * 3 + (ky + 1)) * 3 + (kx + 1)] * x[((n * 3 + c) * 6 + sy) * 5 + sx];
              }
          EXPECT_NEAR(y[((n * 4 + o) * 6 + yy) * 5 + xx], acc, 1e-12);
        }
}

TEST(Ops, SoftmaxRowsArePositiveAndSumToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<float> x(Shape{4, 7});
    for (auto& v : x.data_mut()) v = 10.f * normal<float>(rng);
    auto p = softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GT(p[r * 7 + c], 0.f);
        s += p[r * 7 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor<float> x(Shape{2, 2}, 3.f);
  x.set_requires_grad();
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    tape.backward(sum(x));
  }
  for (float g : x.grad()) EXPECT_EQ(g, 1.f);
}

TEST(Backward, SquareAtThreeGivesSix) {
  auto x = Tensor<double>::scalar(3.0);
  x.set_requires_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, UnreachedLeafGetsZeroGradient) {
  auto x = Tensor<double>::scalar(2.0), y = Tensor<double>::scalar(5.0);
  x.set_requires_grad();
  y.set_requires_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(mul(x, x));
  EXPECT_EQ(y.grad(), std::vector<double>{0.0});
}

TEST(Backward, NonScalarLossRejected) {
  Tensor<double> x(Shape{3}, 1.0);
  x.set_requires_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = mul_scalar(x, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, TapeVisitsInReverseCreationOrder) {
  auto x = Tensor<double>::scalar(1.5);
  x.set_requires_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto a = tanh(x);
  auto b = mul(a, x);
  auto c = sum(b);
  auto order = tape.reverse_order();
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order[0], &c.node());
  EXPECT_EQ(order[1], &b.node());
  EXPECT_EQ(order[2], &a.node());
}

TEST(Backward, NoTapeMeansNoRecording) {
  Tensor<double> x(Shape{2}, 1.0);
  x.set_requires_grad();
  auto y = tanh(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(2024);
  for (const auto& pc : ifgmi::testing::primitive_cases()) {
    double worst = 0;
    for (int inst = 0; inst < 20; ++inst) {
      auto res = ifgmi::testing::gradcheck(pc.fn, pc.make_inputs(rng), rng);
      worst = std::max(worst, res.max_rel_error);
    }
    EXPECT_LT(worst, 1e-5) << pc.name;
  }
}

TEST(Determinism, RepeatedForwardBackwardIsBitIdentical) {
  auto run = [] {
    Rng rng(99);
    auto x = randn({2, 3, 8, 8}, rng);
    auto w = randn({5, 3, 3, 3}, rng);
    auto b = randn({5}, rng);
    x.set_requires_grad();
    w.set_requires_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto y = sum(tanh(instance_norm(conv2d(x, w, b))));
    tape.backward(y);
    auto g = w.grad();
    g.push_back(y.item());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroGradientLeavesParamUnchanged) {
  std::vector<float> p{1.f, -2.f}, g{0.f, 0.f};
  AdamState<float> st;
  adam_step<float>(p, g, st, AdamHyper{});
  EXPECT_EQ(p[0], 1.f);
  EXPECT_EQ(p[1], -2.f);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, SingleStepHandComputed) {
  std::vector<double> p{1.0}, g{1.0};
  AdamState<double> st;
  adam_step<double>(p, g, st, AdamHyper{0.005, 0.1, 0.1, 1e-8});
  // mhat = vhat = 1, step = 0.005 / (1 + 1e-8)
  EXPECT_NEAR(p[0], 1.0 - 0.005 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[0], 0.995, 1e-9);
}

TEST(Adam, ConstantGradientDecreasesMonotonically) {
  std::vector<double> p{1.0}, g{0.3};
  AdamState<double> st;
  double prev = p[0];
  for (int i = 0; i < 2; ++i) {
    adam_step<double>(p, g, st, AdamHyper{});
    EXPECT_LT(p[0], prev);
    prev = p[0];
  }
  EXPECT_EQ(st.t, 2);
  EXPECT_EQ(st.m.size(), 1u);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  std::vector<float> p{1.f}, g{NAN};
  AdamState<float> st;
  try {
    adam_step<float>(p, g, st, AdamHyper{}, "mapping.fc0.weight");
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("mapping.fc0.weight"), std::string::npos);
  }
  EXPECT_EQ(p[0], 1.f);
  EXPECT_EQ(st.t, 0);
}

TEST(Adam, OptimizerClearsGradients) {
  Tensor<double> x(Shape{3}, 1.0);
  x.set_requires_grad();
  Adam<double> opt;
  opt.add("x", x);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  opt.step();
  EXPECT_FALSE(x.has_grad());
  EXPECT_LT(x[0], 1.0);
}

TEST(Serialize, HeaderLayout) {
  TensorFile f{NamedTensor::from("ab", Tensor<float>(Shape{2}, 1.5f))};
  auto buf = encode_tensors(f);
  ASSERT_EQ(buf.substr(0, 4), "IFGT");
  // magic + version + count + namelen + "ab" + dtype + rank + 1 dim + 2 floats
  EXPECT_EQ(buf.size(), 4u + 4 + 4 + 4 + 2 + 1 + 4 + 8 + 8);
  EXPECT_EQ(static_cast<unsigned char>(buf[4]), kTensorFileVersion);
  EXPECT_EQ(buf[8], 1);
  EXPECT_EQ(buf[16], 'a');
  EXPECT_EQ(buf[18], 0);  // f32
}

TEST(Serialize, RoundTripPreservesBitsAndDtype) {
  Rng rng(5);
  auto d = randn({2, 3, 4}, rng);
  Tensor<float> f(Shape{5});
  for (auto& v : f.data_mut()) v = normal<float>(rng);
  TensorFile file{NamedTensor::from("double", d), NamedTensor::from("float", f)};
  auto path = std::filesystem::temp_directory_path() / "ifgmi_roundtrip.ifgt";
  save_tensors(path, file);
  auto back = load_tensors(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].dtype(), Dtype::f64);
  EXPECT_EQ(back[1].dtype(), Dtype::f32);
  EXPECT_EQ(back[0].shape, (Shape{2, 3, 4}));
  auto d2 = back[0].as<double>();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d2[i], d[i]);
  EXPECT_EQ(checksum(back), checksum(file));
  std::filesystem::remove(path);
}

TEST(Serialize, CorruptInputsRejected) {
  EXPECT_THROW(decode_tensors("NOPE"), FormatError);
  auto buf = encode_tensors({NamedTensor::from("x", Tensor<double>(Shape{4}))});
  EXPECT_THROW(decode_tensors(buf.substr(0, buf.size() - 3)), FormatError);
}
