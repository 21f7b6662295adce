#pragma once
// Small trained instances for tests that need a realistic network.

#include "resexp/harness/harness.hpp"

namespace fixture {

struct Instance {
  resexp::net::NetworkSpec spec;
  resexp::harness::TaskData data;
  resexp::net::NetworkState state;
};

inline Instance trained_instance(std::uint64_t seed, std::size_t width = 8, std::size_t depth = 2,
                                 std::size_t steps = 150, std::size_t M = 256) {
  using namespace resexp;
  harness::TaskConfig task;
  task.input_dim = width;
  task.M = M;
  task.K = M;
  task.M_proxy = 2 * M;
  task.M_estimation = M;
  task.seed = seed;
  net::NetworkSpec base;
  base.depth = depth;
  base.width = width;
  base.branch_width = width;
  base.insertion_layer = depth;
  Instance in;
  in.spec = harness::spec_for_task(task, base);
  in.data = harness::make_task(task, in.spec);
  harness::SgdConfig opt;
  opt.steps = steps;
  opt.seed = seed + 1;
  in.state = harness::train_base(in.spec, in.data.train, opt, seed + 2).state;
  return in;
}

}  // namespace fixture
