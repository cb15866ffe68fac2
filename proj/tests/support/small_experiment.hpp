#pragma once

// Reduced experiment used where a full benchmark would be too slow: 96^3
// phantoms at 2.5 mm, 162-vertex meshes and narrow networks.

#include "apn/experiment.hpp"

namespace apn::testing {

inline ExperimentConfig small_experiment(std::uint64_t seed = 3, int steps = 150) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.phantoms.train = 6;
    cfg.phantoms.test = 2;
    cfg.phantoms.dims = {96, 96, 96};
    cfg.phantoms.spacing = Vec3::Constant(2.5);
    cfg.phantoms.semi_axis_min = 35.0;
    cfg.phantoms.semi_axis_max = 50.0;
    cfg.phantoms.center_jitter = 5.0;
    cfg.phantoms.mesh_subdivisions = 2;
    for (AgentSection* a : {&cfg.global_agent, &cfg.local_agent}) {
        a->network.encoder = {32, 64};
        a->network.decoder = {64, 32};
        a->train.steps = steps;
        a->train.batch_size = 4;
        a->augment.samples = 100;
        a->validation_samples = 8;
        a->log_every = 25;
    }
    cfg.global_agent.network.global_hidden = {32};
    // The default 90 mm translation range is most of this smaller field of view.
    cfg.global_agent.augment.translation = 30.0;
    cfg.init.max_translation = 30.0;
    cfg.init.trials = 2;
    return cfg;
}

}  // namespace apn::testing
