#pragma once

#include "vibi/checkpoint.hpp"
#include "vibi/data.hpp"
#include "vibi/nets.hpp"

namespace vibi {

/// Planted-chunk task: dense explainer and approximator over the flat features.
inline VibiConfig synth_config(const SynthSpec& spec = {}) {
  VibiConfig c;
  const auto map = spec.chunk_map();
  c.k = spec.relevant.size();
  c.tau = 0.5;
  c.beta = 0.1;
  c.samples = 32;
  c.lr = 5e-4;
  c.batch = 50;
  c.epochs = 30;
  c.patience = 0;
  c.input_shape = spec.instance_shape();
  c.classes = 2;
  c.chunks = map.to_json();
  c.explainer = mlp_layers(32, map.d());
  c.approximator = mlp_layers(32, 2);
  return c;
}

/// MNIST with 4x4 patches (d = 49), k = 10, beta = 0.1, tau = 0.7, lr = 1e-4, batch 100.
inline VibiConfig mnist_config() {
  VibiConfig c;
  const auto map = ChunkMap::grid(28, 28, 4, 4);
  c.k = 10;
  c.tau = 0.7;
  c.beta = 0.1;
  c.samples = 1;
  c.lr = 1e-4;
  c.batch = 100;
  c.epochs = 30;
  c.patience = 5;
  c.validation_limit = 1000;
  c.input_shape = {1, 28, 28};
  c.classes = 10;
  c.chunks = map.to_json();
  c.explainer = grid_explainer_layers(map);
  c.approximator = mnist_approximator_layers(10);
  return c;
}

}  // namespace vibi
