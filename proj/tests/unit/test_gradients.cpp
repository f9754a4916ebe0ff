#include "doctest.h"
#include "support/suites.hpp"

TEST_SUITE("autodiff") {
  TEST_CASE("every operation matches central differences") {
    for (const auto& c : suites::operation_gradients()) {
      INFO(c.name);
      CHECK(c.max_relative_error < 1e-4);
    }
  }

  TEST_CASE("compose_isla matches the per-pixel loop") {
    const auto r = suites::compose_vs_loop(200, 17);
    CHECK(r.instances == 200);
    CHECK(r.max_abs_error < 1e-12);
  }

  TEST_CASE("standardize yields zero mean and unit spread") {
    const auto r = suites::standardize_batches(50, 5);
    CHECK(r.max_abs_mean < 1e-10);
    CHECK(r.max_std_deviation < 1e-4);
  }
}
