#include <string>

#include "doctest.h"
#include "medfuse/data.hpp"
#include "medfuse/encoders.hpp"
#include "oracles.hpp"

using namespace medfuse;

namespace {

CxrEncoderConfig small_cxr_config(Index resolution = 16) {
  CxrEncoderConfig cfg;
  cfg.input_resolution = resolution;
  cfg.stage_widths = {4, 8};
  cfg.blocks_per_stage = 1;
  cfg.feature_dim = 512;
  return cfg;
}

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("ehr encoder output width is the hidden dimension") {
  Rng rng(1);
  EhrEncoderParams enc = make_ehr_encoder(76, 256, 2, 0.3, rng);
  Tensor x = Tensor::uniform({4, 24, 76}, -1.0, 1.0, rng);
  Rng dr(0);
  Tensor v = encode_ehr(enc, x, false, dr);
  CHECK(v.shape() == Shape{4, 256});
}

TEST_CASE("T=1 equals a manual two-layer step") {
  Rng rng(2);
  EhrEncoderParams enc = make_ehr_encoder(5, 4, 2, 0.3, rng);
  Tensor x = Tensor::uniform({2, 1, 5}, -1.0, 1.0, rng);
  Rng dr(0);
  Tensor v = encode_ehr(enc, x, false, dr);
  auto s0 = lstm_cell_step(enc.lstm_layers[0], slice_time(x, 0), Tensor({2, 4}), Tensor({2, 4}));
  auto s1 = lstm_cell_step(enc.lstm_layers[1], s0.h, Tensor({2, 4}), Tensor({2, 4}));
  for (Index i = 0; i < v.numel(); ++i) CHECK(v.data()[i] == s1.h.data()[i]);
}

TEST_CASE("deterministic in eval mode across runs") {
  Rng rng(3);
  EhrEncoderParams enc = make_ehr_encoder(6, 5, 2, 0.5, rng);
  Tensor x = Tensor::uniform({3, 4, 6}, -1.0, 1.0, rng);
  Rng d1(11), d2(99);
  Tensor a = encode_ehr(enc, x, false, d1);
  Tensor b = encode_ehr(enc, x, false, d2);
  for (Index i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("wrong feature width names the expected 76") {
  Rng rng(4);
  EhrEncoderParams enc = make_ehr_encoder(76, 8, 2, 0.0, rng);
  Rng dr(0);
  try {
    encode_ehr(enc, Tensor({2, 3, 75}), false, dr);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("76") != std::string::npos);
  }
}

TEST_CASE("batch order invariance") {
  Rng rng(5);
  EhrEncoderParams enc = make_ehr_encoder(6, 4, 2, 0.0, rng);
  Tensor x = Tensor::uniform({3, 4, 6}, -1.0, 1.0, rng);
  Tensor permuted({3, 4, 6});
  const Index plane = 4 * 6;
  const Index perm[3] = {2, 0, 1};
  for (Index b = 0; b < 3; ++b) {
    for (Index i = 0; i < plane; ++i) {
      permuted.data()[b * plane + i] = x.data()[perm[b] * plane + i];
    }
  }
  Rng d1(0), d2(0);
  Tensor v = encode_ehr(enc, x, false, d1);
  Tensor vp = encode_ehr(enc, permuted, false, d2);
  for (Index b = 0; b < 3; ++b) {
    for (Index j = 0; j < 4; ++j) {
      CHECK(vp.at(b, j) == v.at(perm[b], j));
    }
  }
}

TEST_CASE("cxr encoder keeps the feature contract at any resolution") {
  Rng rng(6);
  CxrEncoderParams enc = make_cxr_encoder(small_cxr_config(16), rng);
  Tensor x = Tensor::uniform({2, 3, 16, 16}, -1.0, 1.0, rng);
  Rng dr(0);
  Tensor v = encode_cxr(enc, x, false, dr);
  CHECK(v.shape() == Shape{2, 512});

  CxrEncoderParams enc32 = make_cxr_encoder(small_cxr_config(32), rng);
  Tensor x32 = Tensor::uniform({1, 3, 32, 32}, -1.0, 1.0, rng);
  CHECK(encode_cxr(enc32, x32, false, dr).shape() == Shape{1, 512});
}

TEST_CASE("zero image with zero biases encodes to zero") {
  Rng rng(7);
  CxrEncoderParams enc = make_cxr_encoder(small_cxr_config(16), rng);
  // Construction zero-initializes all biases; the zero image must stay zero
  // through every homogeneous layer.
  Tensor x({1, 3, 16, 16});
  Rng dr(0);
  Tensor v = encode_cxr(enc, x, false, dr);
  for (Index i = 0; i < v.numel(); ++i) CHECK(v.data()[i] == 0.0);
}

TEST_CASE("wrong image geometry raises dimension errors") {
  Rng rng(8);
  CxrEncoderParams enc = make_cxr_encoder(small_cxr_config(16), rng);
  Rng dr(0);
  CHECK_THROWS_AS(encode_cxr(enc, Tensor({1, 1, 16, 16}), false, dr), DimensionError);
  CHECK_THROWS_AS(encode_cxr(enc, Tensor({1, 3, 8, 8}), false, dr), DimensionError);
}

TEST_CASE("replicated grayscale input is accepted and deterministic") {
  Rng rng(9);
  CxrEncoderParams enc = make_cxr_encoder(small_cxr_config(16), rng);
  Tensor mono = Tensor::uniform({1, 16, 16}, -1.0, 1.0, rng);
  Tensor rgb = replicate_channels(mono);
  Tensor batch({1, 3, 16, 16});
  for (Index i = 0; i < rgb.numel(); ++i) batch.data()[i] = rgb.data()[i];
  Rng d1(0), d2(0);
  Tensor a = encode_cxr(enc, batch, false, d1);
  Tensor b = encode_cxr(enc, batch, false, d2);
  for (Index i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("classifier basics") {
  Rng rng(10);
  ClassifierParams zero{LinearParams{Tensor({3, 4}), Tensor({3})}};
  Tensor v = Tensor::uniform({2, 4}, -1.0, 1.0, rng);
  Tensor p = classify(zero, v);
  for (Index i = 0; i < p.numel(); ++i) CHECK(p.data()[i] == doctest::Approx(0.5));

  // Task head sizes: 25 phenotypes, 1 mortality, 14 radiology labels.
  for (Index l : {25, 1, 14}) {
    ClassifierParams head = make_classifier(8, l, rng);
    Tensor out = classify(head, Tensor::uniform({2, 8}, -1.0, 1.0, rng));
    CHECK(out.shape() == Shape{2, l});
    for (Index i = 0; i < out.numel(); ++i) {
      CHECK(out.data()[i] > 0.0);
      CHECK(out.data()[i] < 1.0);
    }
  }

  ClassifierParams saturated{LinearParams{Tensor({2, 4}), Tensor::from_values({2}, {20.0, 20.0})}};
  Tensor sat = classify(saturated, v);
  for (Index i = 0; i < sat.numel(); ++i) CHECK(std::abs(sat.data()[i] - 1.0) < 1e-8);

  CHECK_THROWS_AS(classify(zero, Tensor({2, 5})), DimensionError);
}

TEST_CASE("gradient check through encoder + classifier + BCE") {
  Rng rng(11);
  EhrEncoderParams enc = make_ehr_encoder(5, 3, 2, 0.0, rng);
  ClassifierParams head = make_classifier(3, 2, rng);
  Tensor x = Tensor::uniform({2, 3, 5}, -1.0, 1.0, rng);
  Tensor y({2, 2});
  y.data()[0] = 1.0;
  y.data()[3] = 1.0;
  auto loss = [&]() {
    Rng dr(0);
    Tensor v = encode_ehr(enc, x, false, dr);
    return bce_with_logits(classify_logits(head, v), y);
  };
  std::vector<Tensor> params = {head.linear.weight, head.linear.bias};
  for (const LstmCellParams& l : enc.lstm_layers) {
    params.push_back(l.w_ih);
    params.push_back(l.w_hh);
    params.push_back(l.bias);
  }
  CHECK(oracle::check_gradients(loss, params).ok);
}

}  // TEST_SUITE
