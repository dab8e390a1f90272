#include <gtest/gtest.h>

#include <random>

#include "epcdepth/grad_check.hpp"
#include "epcdepth/losses.hpp"

namespace {

using epc::LossWeights;
using epc::Tensor;

class LossesTest : public ::testing::Test {
 protected:
  void TearDown() override { epc::Tape::active().clear(); }
  std::mt19937_64 rng_{41};
  LossWeights w_;
};

TEST_F(LossesTest, IdenticalImagesGiveZero) {
  Tensor img = Tensor::uniform({1, 3, 8, 12}, 0.0f, 1.0f, rng_);
  Tensor m = epc::photometric_error_map(img, img, w_);
  ASSERT_EQ(m.shape(), (epc::Shape{1, 1, 8, 12}));
  for (int64_t i = 0; i < m.numel(); ++i) EXPECT_NEAR(m[i], 0.0f, 1e-6f);
}

TEST_F(LossesTest, ConstantContrastClosedForm) {
  Tensor zeros({1, 3, 9, 9}, 0.0f);
  Tensor ones({1, 3, 9, 9}, 1.0f);
  Tensor m = epc::photometric_error_map(zeros, ones, w_);
  const double c1 = 0.01 * 0.01;
  const double expected = 0.85 * (1.0 - c1 / (1.0 + c1)) / 2.0 + 0.15;
  EXPECT_NEAR(m.at4(0, 0, 4, 4), expected, 1e-5);
}

TEST_F(LossesTest, SsimTermSymmetricUnderSwap) {
  Tensor a = Tensor::uniform({1, 3, 8, 10}, 0.0f, 1.0f, rng_);
  Tensor b = Tensor::uniform({1, 3, 8, 10}, 0.0f, 1.0f, rng_);
  Tensor m1 = epc::photometric_error_map(a, b, w_);
  Tensor m2 = epc::photometric_error_map(b, a, w_);
  // both terms are symmetric in the two images
  for (int64_t i = 0; i < m1.numel(); ++i) EXPECT_NEAR(m1[i], m2[i], 1e-6f);
}

TEST_F(LossesTest, MapIsNonNegativeAndBounded) {
  Tensor a = Tensor::uniform({2, 3, 8, 10}, 0.0f, 1.0f, rng_);
  Tensor b = Tensor::uniform({2, 3, 8, 10}, 0.0f, 1.0f, rng_);
  Tensor m = epc::photometric_error_map(a, b, w_);
  for (int64_t i = 0; i < m.numel(); ++i) {
    EXPECT_GE(m[i], 0.0f);
    EXPECT_LE(m[i], 0.85f + 0.15f * 1.0f + 1e-6f);
  }
}

TEST_F(LossesTest, WindowLargerThanImageRejected) {
  Tensor a({1, 3, 2, 2}, 0.5f);
  EXPECT_THROW(epc::photometric_error_map(a, a, w_), std::invalid_argument);
}

TEST_F(LossesTest, SelfDistillationValues) {
  Tensor d({1, 1, 4, 4}, 1.0f);
  EXPECT_NEAR(epc::self_distillation_loss(d, d.detach())[0], 0.0f, 1e-7f);

  Tensor y({1, 1, 4, 4}, 1.0f + (static_cast<float>(M_E) - 1.0f));
  EXPECT_NEAR(epc::self_distillation_loss(d, y)[0], 1.0f, 1e-5f);

  Tensor d2({1, 1, 2, 2}, 0.3f);
  Tensor y2({1, 1, 2, 2}, 0.5f);
  EXPECT_NEAR(epc::self_distillation_loss(d2, y2)[0], std::log(1.2f), 1e-6f);
}

TEST_F(LossesTest, SelfDistillationRejectsLiveLabel) {
  Tensor d({1, 1, 2, 2}, 1.0f);
  Tensor label({1, 1, 2, 2}, 1.0f);
  label.set_requires_grad(true);
  EXPECT_THROW(epc::self_distillation_loss(d, label), std::invalid_argument);
}

TEST_F(LossesTest, SelfDistillationNumericallySymmetric) {
  Tensor d = Tensor::uniform({1, 1, 5, 5}, 0.0f, 4.0f, rng_);
  Tensor y = Tensor::uniform({1, 1, 5, 5}, 0.0f, 4.0f, rng_);
  const float a = epc::self_distillation_loss(d, y.detach())[0];
  const float b = epc::self_distillation_loss(y, d.detach())[0];
  EXPECT_FLOAT_EQ(a, b);
}

TEST_F(LossesTest, HintLossCases) {
  const epc::Shape s{1, 1, 2, 2};
  Tensor disp(s, 1.0f);
  Tensor hint(s, 1.0f);
  Tensor valid(s, 1.0f);
  Tensor e_hint(s, 0.5f);
  Tensor e_pred(s, 0.1f);
  // hint never better -> zero
  EXPECT_FLOAT_EQ(epc::hint_loss_map(disp, hint, valid, e_pred, e_hint)[0], 0.0f);
  // hint better but equals disp -> log(1) = 0
  EXPECT_FLOAT_EQ(epc::hint_loss_map(disp, hint, valid, e_hint, e_pred)[0], 0.0f);

  // 4-pixel map, two active pixels with |h-d| = 1 and 3
  Tensor d2 = Tensor::from_data(s, {1.0f, 1.0f, 1.0f, 1.0f});
  Tensor h2 = Tensor::from_data(s, {2.0f, 4.0f, 9.0f, 9.0f});
  Tensor v2 = Tensor::from_data(s, {1.0f, 1.0f, 0.0f, 0.0f});
  Tensor eh = Tensor::from_data(s, {0.0f, 0.0f, 0.0f, 0.0f});
  Tensor ep = Tensor::from_data(s, {1.0f, 1.0f, 1.0f, 1.0f});
  const float loss = epc::hint_loss_map(d2, h2, v2, ep, eh)[0];
  EXPECT_NEAR(loss, (std::log(2.0f) + std::log(4.0f)) / 4.0f, 1e-6f);
}

TEST_F(LossesTest, PureL1ModeIsPerPixel) {
  LossWeights l1;
  l1.alpha = 0.0f;
  l1.beta = 1.0f;
  Tensor a = Tensor::uniform({1, 3, 4, 4}, 0.0f, 1.0f, rng_);
  Tensor b = Tensor::uniform({1, 3, 4, 4}, 0.0f, 1.0f, rng_);
  Tensor m = epc::photometric_error_map(a, b, l1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double acc = 0.0;
      for (int c = 0; c < 3; ++c) acc += std::fabs(a.at4(0, c, y, x) - b.at4(0, c, y, x));
      EXPECT_NEAR(m.at4(0, 0, y, x), acc / 3.0, 1e-6);
    }
}

struct JointSetup {
  epc::JointLossInputsT<float> in;
  std::mt19937_64 rng{53};

  explicit JointSetup(int scale_count, bool with_sd, bool with_hint) {
    in.target = Tensor::uniform({1, 3, 8, 16}, 0.0f, 1.0f, rng);
    in.source = Tensor::uniform({1, 3, 8, 16}, 0.0f, 1.0f, rng);
    for (int s = 0; s < scale_count; ++s) {
      Tensor d = Tensor::uniform({1, 1, 8, 16}, 1.2f, 2.8f, rng);
      in.scales.push_back({d, s % 2 == 0});
    }
    if (with_sd) {
      in.label_decoder = Tensor::uniform({1, 1, 8, 16}, 1.2f, 2.8f, rng);
      in.label_encoder = Tensor::uniform({1, 1, 8, 16}, 1.2f, 2.8f, rng);
    }
    if (with_hint) {
      in.hint = Tensor::uniform({1, 1, 8, 16}, 1.0f, 3.0f, rng);
      in.hint_valid = Tensor({1, 1, 8, 16}, 1.0f);
    }
  }
};

TEST_F(LossesTest, JointLossSingleScaleIsPlainSum) {
  JointSetup setup(1, true, true);
  epc::LossBreakdown lb = epc::joint_loss(setup.in);
  ASSERT_EQ(lb.per_scale.size(), 1u);
  const auto& t = lb.per_scale[0];
  EXPECT_NEAR(lb.total_value(), t.photometric + t.self_distill + t.hint, 1e-6f);
}

TEST_F(LossesTest, JointLossDuplicateScaleInvariant) {
  JointSetup setup(1, true, true);
  const float single = epc::joint_loss(setup.in).total_value();
  epc::Tape::active().clear();
  setup.in.scales.push_back(setup.in.scales[0]);
  const float doubled = epc::joint_loss(setup.in).total_value();
  EXPECT_FLOAT_EQ(single, doubled);
}

TEST_F(LossesTest, JointLossPermutationInvariant) {
  JointSetup setup(4, true, true);
  const float forward = epc::joint_loss(setup.in).total_value();
  epc::Tape::active().clear();
  std::reverse(setup.in.scales.begin(), setup.in.scales.end());
  const float reversed = epc::joint_loss(setup.in).total_value();
  EXPECT_NEAR(forward, reversed, 1e-6f * std::fabs(forward));
}

TEST_F(LossesTest, DisabledTermsVanish) {
  // labels equal to each scale's own disparity and an all-false hint mask
  // leave exactly the photometric term
  JointSetup setup(2, false, false);
  epc::JointLossInputsT<float> with_extras = setup.in;
  with_extras.label_decoder = setup.in.scales[0].disp.detach();
  with_extras.label_encoder = setup.in.scales[1].disp.detach();
  with_extras.hint = Tensor({1, 1, 8, 16}, 2.0f);
  with_extras.hint_valid = Tensor({1, 1, 8, 16}, 0.0f);
  const float full = epc::joint_loss(with_extras).total_value();
  epc::Tape::active().clear();
  const float ph_only = epc::joint_loss(setup.in).total_value();
  EXPECT_FLOAT_EQ(full, ph_only);
}

TEST_F(LossesTest, EmptyScaleListRejected) {
  epc::JointLossInputsT<float> in;
  in.target = Tensor({1, 3, 8, 8}, 0.5f);
  in.source = Tensor({1, 3, 8, 8}, 0.5f);
  EXPECT_THROW(epc::joint_loss(in), std::invalid_argument);
}

TEST_F(LossesTest, PhotometricGradCheck) {
  Tensor target = Tensor::uniform({1, 3, 6, 10}, 0.0f, 1.0f, rng_);
  Tensor recon = Tensor::uniform({1, 3, 6, 10}, 0.05f, 0.95f, rng_);
  LossWeights w = w_;
  std::vector<Tensor> in = {recon};
  double err = epc::grad_check(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        std::vector<T> data(target.vec().begin(), target.vec().end());
        auto t = epc::TensorT<T>::from_data(target.shape(), std::move(data));
        return epc::mean(epc::photometric_error_map(t, v[0], w));
      },
      in, 1e-4);
  EXPECT_LT(err, 1e-3);
}

}  // namespace
