#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfnc/episode.hpp"
#include "xfnc/graph.hpp"
#include "xfnc/ib.hpp"
#include "xfnc/nn.hpp"

namespace xfnc {

// Small seeded graph whose node 0 has a 12-node ego subgraph, with random
// parameters and a few labeled nodes from that neighborhood.
struct GradCheckFixture {
  Graph graph;
  nn::ParamSet params;
  std::vector<LabeledNode> nodes;
  ib::LossConfig loss;
  ib::NoiseKey key;
};

GradCheckFixture make_gradcheck_fixture(std::uint64_t seed, std::size_t feature_dim = 16,
                                        std::size_t ways = 5, std::size_t hidden = 64,
                                        std::size_t predictor_hidden = 128);

struct GradCheckPath {
  std::string name;  // e.g. "L_Y/theta"
  nn::GradCheckResult result;
};

// Finite-difference checks of L_Y (theta), L_D (theta and phi) and
// L = L_Y + beta L_D (theta and phi).
std::vector<GradCheckPath> run_gradcheck(GradCheckFixture& fixture, double eps = 1e-5,
                                         std::size_t per_tensor = 200);

}  // namespace xfnc
