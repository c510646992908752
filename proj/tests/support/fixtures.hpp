#pragma once

#include <vector>

#include "fiberlab/losses.hpp"
#include "fiberlab/net.hpp"
#include "fiberlab/rng.hpp"

namespace fixtures {

inline fiberlab::Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  fiberlab::Rng rng(seed);
  fiberlab::Tensor t({rows, cols});
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

inline std::vector<int> random_labels(std::size_t count, int classes, std::uint64_t seed) {
  fiberlab::Rng rng(seed);
  std::vector<int> y(count);
  for (int& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

// Shifts every parameter slightly so zero-initialised biases do not sit on a
// relu kink when a whole hidden row is inactive.
inline fiberlab::net::Network jittered(const fiberlab::net::Network& net, std::uint64_t seed) {
  fiberlab::Rng rng(seed ^ 0x5eedULL);
  fiberlab::net::ParamStore p = net.params();
  for (auto& layer : p)
    for (auto& t : layer)
      for (double& v : t.values()) v += rng.uniform(-0.1, 0.1);
  return net.with_params(std::move(p));
}

inline fiberlab::net::Network plain_network_for(fiberlab::net::LayerKind kind, std::size_t out, std::uint64_t seed) {
  using fiberlab::net::LayerSpec;
  switch (kind) {
    case fiberlab::net::LayerKind::dense:
      return fiberlab::net::Network::initialize({LayerSpec::dense(4, out)}, seed);
    case fiberlab::net::LayerKind::relu:
      return fiberlab::net::Network::initialize({LayerSpec::dense(4, 6), LayerSpec::relu(6), LayerSpec::dense(6, out)},
                                                seed);
    case fiberlab::net::LayerKind::softmax_gate_mixture:
      return fiberlab::net::Network::initialize({LayerSpec::gate(4, 5, 3, {6}), LayerSpec::dense(5, out)}, seed);
  }
  return {};
}

// One small network per layer kind, input width 4, output width `out`.
inline fiberlab::net::Network network_for(fiberlab::net::LayerKind kind, std::size_t out, std::uint64_t seed) {
  return jittered(plain_network_for(kind, out, seed), seed);
}

// An objective of each kind matched to a network with output width `out`
// evaluated on a (6, 4) batch.
inline fiberlab::net::Objective objective_for(fiberlab::net::LossKind kind, std::size_t out, std::uint64_t seed) {
  using fiberlab::net::Objective;
  switch (kind) {
    case fiberlab::net::LossKind::reconstruction:
      return Objective::reconstruction(random_matrix(6, out, seed + 1));
    case fiberlab::net::LossKind::contrastive:
      return Objective::contrastive(random_matrix(6, 4, seed + 2), 0.5);
    case fiberlab::net::LossKind::classification:
      return Objective::classification(random_labels(6, static_cast<int>(out), seed + 3));
    case fiberlab::net::LossKind::alignment:
      return Objective::alignment(random_labels(6, 4, seed + 4), random_matrix(4, out, seed + 5), 0.5);
  }
  return {};
}

}  // namespace fixtures
