// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdint>
#include <vector>

#include "storyweave/error.hpp"
#include "storyweave/lora.hpp"
#include "test_support.hpp"

using namespace storyweave;
using storyweave::testing::random_matrix;

namespace {

LoraModule random_module(int d, int k, int r, Rng& rng, double scale = 1.0) {
  LoraModule m;
  m.A = random_matrix(r, k, rng);
  m.B = random_matrix(d, r, rng);
  m.scale = scale;
  return m;
}

// Column by column with explicit sums.
Matrix naive_apply(const Matrix& w0, const std::vector<const LoraModule*>& mods,
                   const std::vector<std::vector<std::uint8_t>>& masks, const Matrix& x) {
  Matrix y = Matrix::Zero(w0.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index i = 0; i < w0.rows(); ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < w0.cols(); ++j) {
        double w = w0(i, j);
        for (std::size_t m = 0; m < mods.size(); ++m) {
          if (masks[m][static_cast<std::size_t>(c)] == 0) continue;
          double delta = 0.0;
          for (Eigen::Index r = 0; r < mods[m]->A.rows(); ++r) delta += mods[m]->B(i, r) * mods[m]->A(r, j);
          w += mods[m]->scale * delta;
        }
        acc += w * x(j, c);
      }
      y(i, c) = acc;
    }
  }
  return y;
}

std::vector<std::uint8_t> random_mask(Eigen::Index n, Rng& rng, double p = 0.5) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(n));
  for (auto& v : m) v = rng.uniform() < p ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("lora: merge of hand-sized matrices") {
  LoraModule m;
  m.A = Matrix{{1.0, 2.0}};
  m.B = Matrix{{3.0}, {-1.0}};
  m.scale = 0.5;
  const Matrix w0 = Matrix::Identity(2, 2);
  const Matrix merged = merge_lora(w0, m);
  CHECK(merged(0, 0) == doctest::Approx(2.5));
  CHECK(merged(0, 1) == doctest::Approx(3.0));
  CHECK(merged(1, 0) == doctest::Approx(-0.5));
  CHECK(merged(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("lora: freshly created adapter is neutral") {
  Rng rng(1);
  const LoraModule m = LoraModule::create(5, 4, 2, LoraRole::Spatial, LoraKind::Subject, rng);
  CHECK(m.B.isZero());
  CHECK(m.A.rows() == 2);
  CHECK(m.A.cols() == 4);
  CHECK_FALSE(m.A.isZero());
  const Matrix w0 = random_matrix(5, 4, rng);
  CHECK(merge_lora(w0, m) == w0);
}

TEST_CASE("lora: masked application") {
  Rng rng(2);
  const Matrix w0 = random_matrix(6, 5, rng);
  const Matrix x = random_matrix(5, 9, rng);
  const LoraModule m = random_module(6, 5, 3, rng, 0.7);

  SUBCASE("no bindings is the base projection") { CHECK(lora_apply(w0, {}, x) == w0 * x); }
  SUBCASE("all-ones mask equals the merged weight") {
    const std::vector<std::uint8_t> ones(9, 1);
    const MaskedLora b{&m, ones};
    CHECK((lora_apply(w0, {&b, 1}, x) - merge_lora(w0, m) * x).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("all-zero mask is exactly the base projection") {
    const std::vector<std::uint8_t> zeros(9, 0);
    const MaskedLora b{&m, zeros};
    CHECK(lora_apply(w0, {&b, 1}, x) == w0 * x);
  }
}

TEST_CASE("lora: random cases against the per-column oracle") {
  Rng rng(3);
  for (int iter = 0; iter < 100; ++iter) {
    const int d = 1 + static_cast<int>(rng.below(8));
    const int k = 1 + static_cast<int>(rng.below(8));
    const int c = 1 + static_cast<int>(rng.below(12));
    const int n = static_cast<int>(rng.below(4));
    const Matrix w0 = random_matrix(d, k, rng);
    const Matrix x = random_matrix(k, c, rng);
    std::vector<LoraModule> mods;
    std::vector<std::vector<std::uint8_t>> masks;
    for (int i = 0; i < n; ++i) {
      mods.push_back(random_module(d, k, 1 + static_cast<int>(rng.below(4)), rng, rng.uniform() * 2.0));
      masks.push_back(random_mask(c, rng));
    }
    std::vector<MaskedLora> bindings;
    std::vector<const LoraModule*> ptrs;
    for (int i = 0; i < n; ++i) {
      bindings.push_back({&mods[static_cast<std::size_t>(i)], masks[static_cast<std::size_t>(i)]});
      ptrs.push_back(&mods[static_cast<std::size_t>(i)]);
    }
    const Matrix got = lora_apply(w0, bindings, x);
    const Matrix want = naive_apply(w0, ptrs, masks, x);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("lora: superposition and locality") {
  Rng rng(4);
  const Matrix w0 = random_matrix(4, 4, rng);
  const Matrix x = random_matrix(4, 10, rng);
  const LoraModule a = random_module(4, 4, 2, rng);
  const LoraModule b = random_module(4, 4, 2, rng);
  const auto ma = random_mask(10, rng);
  const auto mb = random_mask(10, rng);
  const MaskedLora both[] = {{&a, ma}, {&b, mb}};
  const MaskedLora only_a[] = {{&a, ma}};
  const MaskedLora only_b[] = {{&b, mb}};
  const Matrix base = w0 * x;
  const Matrix sum = lora_apply(w0, only_a, x) + lora_apply(w0, only_b, x) - base;
  CHECK((lora_apply(w0, both, x) - sum).cwiseAbs().maxCoeff() < 1e-12);
  // Columns outside mask a are unaffected by adapter a.
  const Matrix ya = lora_apply(w0, only_a, x);
  for (int c = 0; c < 10; ++c) {
    if (ma[static_cast<std::size_t>(c)] == 0) CHECK(ya.col(c) == base.col(c));
  }
}

TEST_CASE("lora: dimension errors") {
  Rng rng(5);
  const Matrix w0 = random_matrix(4, 3, rng);
  const LoraModule bad = random_module(4, 5, 2, rng);
  CHECK_THROWS_AS(merge_lora(w0, bad), Error);
  const std::vector<std::uint8_t> mask(3, 1);
  const MaskedLora b{&bad, mask};
  try {
    lora_apply(w0, {&b, 1}, random_matrix(3, 3, rng));
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
  const LoraModule good = random_module(4, 3, 2, rng);
  const std::vector<std::uint8_t> short_mask(2, 1);
  const MaskedLora s{&good, short_mask};
  CHECK_THROWS_AS(lora_apply(w0, {&s, 1}, random_matrix(3, 3, rng)), Error);
}

TEST_CASE("lora: placement schemes") {
  const PlacementPlan four = plan_lora_placement(4, PlacementScheme::Interleaved);
  CHECK(four.blocks_with(LoraRole::Spatial) == std::vector<int>{0, 2});
  CHECK(four.blocks_with(LoraRole::Temporal) == std::vector<int>{1, 3});
  const PlacementPlan odd = plan_lora_placement(4, PlacementScheme::Interleaved, 1);
  CHECK(odd.blocks_with(LoraRole::Spatial) == std::vector<int>{1, 3});
  const PlacementPlan half = plan_lora_placement(5, PlacementScheme::HalfHalf);
  CHECK(half.blocks_with(LoraRole::Spatial) == std::vector<int>{0, 1, 2});
  CHECK(half.blocks_with(LoraRole::Temporal) == std::vector<int>{3, 4});
  const PlacementPlan one = plan_lora_placement(1, PlacementScheme::Interleaved);
  CHECK(one.roles == std::vector<LoraRole>{LoraRole::Spatial});
  CHECK_THROWS_AS(plan_lora_placement(0, PlacementScheme::HalfHalf), Error);
  CHECK(parse_placement_scheme("half") == PlacementScheme::HalfHalf);
}

TEST_CASE("lora: adapter serialization") {
  Rng rng(6);
  Adapter a;
  a.name = "walking dog";
  a.block = 1;
  a.site = AdapterSite::FfnOut;
  a.module = random_module(3, 4, 2, rng, 0.5);
  a.module.role = LoraRole::Temporal;
  a.module.kind = LoraKind::MotionSpatialPerVideo;
  a.condition_ids = {2, 5};
  a.use_at_inference = false;
  a.clip_index = 3;
  const std::string bytes = serialize_adapter(a);
  const Adapter b = deserialize_adapter(bytes);
  CHECK(b.name == a.name);
  CHECK(b.block == 1);
  CHECK(b.site == AdapterSite::FfnOut);
  CHECK(b.condition_ids == a.condition_ids);
  CHECK_FALSE(b.use_at_inference);
  CHECK(b.clip_index == 3);
  CHECK(b.module.role == LoraRole::Temporal);
  CHECK(b.module.kind == LoraKind::MotionSpatialPerVideo);
  CHECK(b.module.scale == 0.5);
  // float32 payload
  CHECK((b.module.A - a.module.A).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((b.module.B - a.module.B).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(serialize_adapter(b) == bytes);
  CHECK(adapter_file_name(a) == "walking_dog.b1.ffn_out.clip3.lora");
  CHECK_THROWS_AS(deserialize_adapter(bytes.substr(0, bytes.size() - 1)), Error);
  CHECK_THROWS_AS(deserialize_adapter("no header"), Error);
}

TEST_CASE("lora: matrix JSON") {
  Rng rng(7);
  const Matrix m = random_matrix(3, 2, rng);
  CHECK(matrix_from_json(matrix_to_json(m)) == m);
}
