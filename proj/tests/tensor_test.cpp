#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "epcdepth/ops.hpp"
#include "epcdepth/tensor.hpp"
#include "epcdepth/tensor_io.hpp"

namespace {

using epc::backward;
using epc::Shape;
using epc::Tape;
using epc::Tensor;

class TensorTest : public ::testing::Test {
 protected:
  void TearDown() override { Tape::active().clear(); }
};

TEST_F(TensorTest, ShapeAndData) {
  Tensor t({2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.rank(), 4);
  EXPECT_FLOAT_EQ(t.at4(1, 2, 3, 4), 1.5f);
  EXPECT_THROW(Tensor({2, 0, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);
}

TEST_F(TensorTest, SumBackwardIsOnes) {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  backward(epc::sum(x));
  Tensor g = x.grad();
  for (int64_t i = 0; i < g.numel(); ++i) EXPECT_FLOAT_EQ(g[i], 1.0f);
}

TEST_F(TensorTest, SquareBackwardIsTwoX) {
  Tensor x = Tensor::from_data({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  x.set_requires_grad(true);
  backward(epc::sum(epc::mul(x, x)));
  Tensor g = x.grad();
  for (int64_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(g[i], 2.0f * x[i]);
}

TEST_F(TensorTest, NonScalarLossRejected) {
  Tensor x({2, 2}, 1.0f);
  x.set_requires_grad(true);
  Tensor y = epc::add(x, x);
  EXPECT_THROW(backward(y), std::invalid_argument);
}

TEST_F(TensorTest, UnreachableGradIsZero) {
  Tensor x({3}, 1.0f);
  x.set_requires_grad(true);
  Tensor y({3}, 2.0f);
  y.set_requires_grad(true);
  backward(epc::sum(x));
  Tensor gy = y.grad();
  for (int64_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(gy[i], 0.0f);
}

TEST_F(TensorTest, BackwardOfSumEqualsSumOfBackwards) {
  std::mt19937_64 rng(11);
  Tensor x = Tensor::uniform({2, 3, 5, 7}, -1.0f, 1.0f, rng);
  x.set_requires_grad(true);

  Tensor l1 = epc::mean(epc::mul(x, x));
  Tensor l2 = epc::sum(epc::abs(x));
  backward(epc::add(l1, l2));
  Tensor combined = x.grad();
  x.zero_grad();
  Tape::active().clear();

  Tensor l1b = epc::mean(epc::mul(x, x));
  backward(l1b);
  Tensor l2b = epc::sum(epc::abs(x));
  backward(l2b);
  Tensor accumulated = x.grad();

  for (int64_t i = 0; i < x.numel(); ++i) {
    const float a = combined[i], b = accumulated[i];
    EXPECT_NEAR(a, b, 1e-6f * std::max(1.0f, std::fabs(a)));
  }
}

TEST_F(TensorTest, DetachStopsGradient) {
  Tensor x({4}, 2.0f);
  x.set_requires_grad(true);
  Tensor y = epc::mul(x, x);
  Tensor z = epc::sum(epc::mul(y.detach(), x));
  backward(z);
  Tensor g = x.grad();
  // d/dx of detach(x^2) * x is exactly x^2 (no path through the square)
  for (int64_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(g[i], 4.0f);
}

TEST_F(TensorTest, NoGradScopeProducesConstants) {
  Tensor x({4}, 1.0f);
  x.set_requires_grad(true);
  epc::NoGradGuardT<float> guard;
  Tensor y = epc::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(Tape::active().size(), 0u);
}

TEST_F(TensorTest, GradAccumulatesAcrossTapeEpochs) {
  Tensor w({2}, 3.0f);
  w.set_requires_grad(true);
  backward(epc::sum(epc::mul(w, w)));
  Tape::active().clear();
  backward(epc::sum(epc::mul(w, w)));
  EXPECT_FLOAT_EQ(w.grad()[0], 12.0f);  // 6 + 6
}

TEST_F(TensorTest, EpctRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "epct_test";
  fs::create_directories(dir);
  const std::string path = (dir / "t.epct").string();

  std::mt19937_64 rng(5);
  Tensor t = Tensor::uniform({3, 4, 5}, -10.0f, 10.0f, rng);
  epc::write_epct(path, t);
  Tensor r = epc::read_epct(path);
  ASSERT_EQ(r.shape(), t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(r[i], t[i]);  // bit-exact

  // header layout: magic, version u16, rank u16, dims u32
  std::FILE* f = std::fopen(path.c_str(), "rb");
  unsigned char head[8];
  ASSERT_EQ(std::fread(head, 1, 8, f), 8u);
  std::fclose(f);
  EXPECT_EQ(std::string(head, head + 4), "EPCT");
  EXPECT_EQ(head[4] | (head[5] << 8), 1);
  EXPECT_EQ(head[6] | (head[7] << 8), 3);
  fs::remove_all(dir);
}

}  // namespace
