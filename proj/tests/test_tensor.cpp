#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "ebnet/errors.hpp"
#include "ebnet/tensor.hpp"
#include "testutil.hpp"

using ebnet::Tensor;

TEST_CASE("construction and shape accounting") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.ndim() == 3);
  CHECK(t.dim(2) == 4);
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);

  CHECK_THROWS_AS(Tensor({2, 0, 3}), ebnet::ShapeMismatch);
  CHECK_THROWS_AS(Tensor(std::vector<int>{}), ebnet::ShapeMismatch);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ebnet::ShapeMismatch);

  Tensor f = Tensor::full({3}, 2.5);
  CHECK(f.sum() == doctest::Approx(7.5));
}

TEST_CASE("at3/at4 agree with flat row-major order") {
  Tensor t({2, 3, 4});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
  CHECK(t.at3(1, 2, 3) == 23.0);
  CHECK(t.at3(0, 1, 0) == 4.0);

  Tensor w({2, 3, 2, 2});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<double>(i);
  CHECK(w.at4(1, 2, 1, 1) == 23.0);
  CHECK(w.at4(0, 0, 1, 0) == 2.0);
}

TEST_CASE("reshaped shares values and checks element count") {
  Tensor t({2, 6}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  Tensor r = t.reshaped({1, 3, 4});
  CHECK(r.at3(0, 2, 3) == 11.0);
  CHECK(r[5] == 5.0);
  CHECK_THROWS_AS(t.reshaped({5, 2}), ebnet::ShapeMismatch);
}

TEST_CASE("argmax takes the lowest flat index on ties") {
  Tensor t({5}, {1.0, 7.0, 7.0, 3.0, 7.0});
  CHECK(t.argmax() == 1);
  Tensor flat = Tensor::full({4}, 2.0);
  CHECK(flat.argmax() == 0);
  CHECK(t.max_value() == 7.0);
  CHECK(t.min_value() == 1.0);
}

TEST_CASE("elementwise algebra") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {10, 20, 30, 40});
  CHECK(ebnet::add(a, b)[3] == 44.0);
  CHECK(ebnet::sub(b, a)[0] == 9.0);
  CHECK(ebnet::hadamard(a, b)[2] == 90.0);
  CHECK(ebnet::scale(a, -2.0)[1] == -4.0);
  CHECK(ebnet::add_scalar(a, 0.5)[0] == 1.5);

  Tensor acc = a;
  ebnet::add_into(acc, b);
  CHECK(acc[1] == 22.0);

  Tensor m({3}, {-1.0, 0.0, 2.0});
  Tensor c = ebnet::clamp_non_negative(m);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.0);
  CHECK(c[2] == 2.0);

  Tensor wrong({4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(ebnet::add(a, wrong), ebnet::ShapeMismatch);
}

TEST_CASE("sum accumulates left to right") {
  // the engine and the test oracles rely on one fixed reduction order
  Tensor t({4}, {1e16, 1.0, -1e16, 1.0});
  double manual = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) manual += t[i];
  CHECK(t.sum() == manual);
}

TEST_CASE("shape formatting for error text") {
  CHECK(ebnet::shape_to_string({3, 8, 8}) == "3x8x8");
  Tensor t({2, 5});
  CHECK(t.shape_str() == "2x5");
  CHECK(ebnet::shape_numel({3, 2, 2}) == 12);
}
