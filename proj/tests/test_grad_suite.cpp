#include <algorithm>

#include "doctest.h"

#include "cpl/errors.hpp"
#include "cpl/grad_suite.hpp"

using namespace cpl;

TEST_CASE("end-to-end networks pass finite-difference checks") {
  for (const auto& net : network_names()) {
    CAPTURE(net);
    Rng rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto r = run_network_trial(net, rng);
      CHECK(r.entries_checked > 0);
      worst = std::max(worst, r.max_relative_error);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("unknown network") {
  Rng rng(1);
  CHECK_THROWS_AS(run_network_trial("critic", rng), ConfigError);
}
