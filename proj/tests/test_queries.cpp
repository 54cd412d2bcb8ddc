#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "aqdet/queries.hpp"

using namespace aqdet;

TEST_CASE("grid anchors 1x1 is the center") {
  auto set = grid_anchors<double>(1, 1);
  CHECK(set.count() == 1);
  CHECK(set.positions.data()[0] == 0.5);
  CHECK(set.positions.data()[1] == 0.5);
  CHECK(set.kind == AnchorKind::Grid);
  CHECK_FALSE(set.trainable);
}

TEST_CASE("grid anchors 17x17 has 289 points") {
  auto set = grid_anchors<double>(17, 17);
  CHECK(set.count() == 289);
  for (double v : set.positions.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("grid anchors 2x2 cell centers") {
  auto set = grid_anchors<double>(2, 2);
  const std::vector<std::pair<double, double>> expect = {
      {0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(set.positions.data()[2 * k] == expect[k].first);
    CHECK(set.positions.data()[2 * k + 1] == expect[k].second);
  }
  CHECK_THROWS_AS(grid_anchors<double>(0, 3), ShapeError);
}

TEST_CASE("learned anchors are seeded uniform in the unit square") {
  auto a = learned_anchors<double>(300, 42);
  CHECK(a.count() == 300);
  CHECK(a.trainable);
  CHECK(a.positions.requires_grad());
  for (double v : a.positions.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  auto b = learned_anchors<double>(300, 42);
  for (int64_t i = 0; i < a.positions.size(); ++i)
    CHECK(a.positions.data()[i] == b.positions.data()[i]);
}

TEST_CASE("compose single anchor single pattern") {
  std::mt19937_64 rng(3);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * 3.141592653589793};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto anchors = grid_anchors<double>(1, 1);
  auto patterns = PatternBank<double>::init(1, 8, rng);
  auto bundle = compose_queries(anchors, patterns, mlp, cfg);
  CHECK(bundle.num_queries() == 1);
  for (int64_t c = 0; c < 8; ++c)
    CHECK(bundle.q_f_init.data()[c] == patterns.embeddings.data()[c]);
  auto enc = encode_anchor_queries(anchors.positions, mlp, cfg);
  for (int64_t c = 0; c < 8; ++c) CHECK(bundle.q_p.data()[c] == enc.data()[c]);
}

TEST_CASE("compose paper-scale row count") {
  std::mt19937_64 rng(5);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * 3.141592653589793};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto anchors = learned_anchors<double>(300, 1);
  auto patterns = PatternBank<double>::init(3, 8, rng);
  auto bundle = compose_queries(anchors, patterns, mlp, cfg);
  CHECK(bundle.num_queries() == 900);
}

TEST_CASE("compose structural identities") {
  std::mt19937_64 rng(7);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * 3.141592653589793};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto anchors = learned_anchors<double>(4, 9);
  auto patterns = PatternBank<double>::init(3, 8, rng);
  auto bundle = compose_queries(anchors, patterns, mlp, cfg);
  REQUIRE(bundle.num_queries() == 12);
  for (int64_t k = 0; k < 12; ++k) {
    CHECK(bundle.anchor_of_row[static_cast<std::size_t>(k)] == k / 3);
    CHECK(bundle.pattern_of_row[static_cast<std::size_t>(k)] == k % 3);
    for (int64_t c = 0; c < 8; ++c) {
      CHECK(bundle.q_f_init.data()[k * 8 + c] == patterns.embeddings.data()[(k % 3) * 8 + c]);
      CHECK(bundle.q_p.data()[k * 8 + c] == bundle.q_p.data()[(3 * (k / 3)) * 8 + c]);
    }
  }
}

TEST_CASE("pattern sharing: one pattern feeds exactly its rows") {
  std::mt19937_64 rng(11);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * 3.141592653589793};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto anchors = learned_anchors<double>(4, 13);
  auto patterns = PatternBank<double>::init(3, 8, rng);
  auto before = compose_queries(anchors, patterns, mlp, cfg);

  patterns.embeddings.mutable_data()[1 * 8 + 2] += 10.0;  // poke pattern 1
  auto after = compose_queries(anchors, patterns, mlp, cfg);
  for (int64_t k = 0; k < after.num_queries(); ++k) {
    const bool touched = after.pattern_of_row[static_cast<std::size_t>(k)] == 1;
    bool row_changed = false;
    for (int64_t c = 0; c < 8; ++c)
      row_changed |= after.q_f_init.data()[k * 8 + c] != before.q_f_init.data()[k * 8 + c];
    CHECK(row_changed == touched);
    for (int64_t c = 0; c < 8; ++c)
      CHECK(after.q_p.data()[k * 8 + c] == before.q_p.data()[k * 8 + c]);
  }
}

TEST_CASE("decode zero offsets returns anchors") {
  auto raw = TensorD::zeros({2, 4});
  auto anchors = TensorD::from({2, 2}, {0.5, 0.5, 0.25, 0.8});
  auto boxes = decode_boxes(raw, anchors);
  CHECK(boxes.data()[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(boxes.data()[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(boxes.data()[2] == 0.5);  // w = sigmoid(0)
  CHECK(boxes.data()[3] == 0.5);
  CHECK(boxes.data()[4] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(boxes.data()[5] == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("decode shifts the anchor in logit space") {
  auto raw = TensorD::from({1, 4}, {1.0, 0.0, 0.0, 0.0});
  auto anchors = TensorD::from({1, 2}, {0.5, 0.5});
  auto boxes = decode_boxes(raw, anchors);
  CHECK(boxes.data()[0] == doctest::Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("decoded boxes stay inside the open unit box") {
  std::mt19937_64 rng(17);
  auto raw = TensorD::uniform({40, 4}, rng, -30.0, 30.0);
  auto anchors = TensorD::uniform({40, 2}, rng, 0.01, 0.99);
  auto boxes = decode_boxes(raw, anchors);
  for (double v : boxes.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // beyond |x| ~ 36 the sigmoid saturates to the interval endpoints in fp64
  auto extreme = decode_boxes(TensorD::uniform({10, 4}, rng, -500.0, 500.0),
                              TensorD::uniform({10, 2}, rng, 0.01, 0.99));
  for (double v : extreme.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("gradient flows to anchors through decode") {
  std::mt19937_64 rng(19);
  auto raw = TensorD::uniform({3, 4}, rng, -1.0, 1.0);
  auto f = [&](const TensorD& anchors) { return sum(decode_boxes(raw, anchors)); };
  CHECK(grad_check(f, TensorD::uniform({3, 2}, rng, 0.1, 0.9)) < 1e-4);
}

TEST_CASE("gradient flows to anchors through the encoding path") {
  std::mt19937_64 rng(23);
  SineEncoderConfig cfg{8, 10000.0, 2.0 * 3.141592653589793};
  auto mlp = AnchorEncoderMLP<double>::init(8, rng);
  auto patterns = PatternBank<double>::init(2, 8, rng);
  auto f = [&](const TensorD& pos) {
    auto q_p = repeat_rows(encode_anchor_queries(pos, mlp, cfg), 2);
    return sum(mul(q_p, q_p));
  };
  CHECK(grad_check(f, TensorD::uniform({3, 2}, rng, 0.1, 0.9)) < 1e-4);
}
