#pragma once

// Small synthetic networks and samples shared by the unit and acceptance tests.

#include "apn/agent.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace apn::testing {

inline NetworkConfig toy_config(ActionMode mode, int input_dim = 7) {
    NetworkConfig c;
    c.input_dim = input_dim;
    c.encoder = {5, 6};
    c.decoder = {6, 4};
    c.global_hidden = {5};
    c.mode = mode;
    c.beta = 3.0;
    return c;
}

inline RowMatrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
    return m;
}

inline Vec3 random_vec(Rng& rng, double scale) { return Vec3(rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)); }

// Random state and targets; vertices and truth are scattered so the Hausdorff
// pair is unique almost surely.
inline TrainingSample toy_sample(Rng& rng, const NetworkConfig& cfg, int vertices) {
    TrainingSample s;
    s.state.rows = random_matrix(rng, vertices, cfg.input_dim);
    s.state.radius = 2.5;
    s.state.centroid = random_vec(rng, 1.0);
    s.target_local = random_matrix(rng, vertices, action_width(cfg.mode), 2.0);
    s.target_global.translation = random_vec(rng, 2.0);
    s.target_global.rotation = random_vec(rng, 0.3);
    s.target_global.log_scale = random_vec(rng, 0.1);
    for (int i = 0; i < vertices; ++i) {
        s.estimate_vertices.push_back(random_vec(rng, 5.0));
        s.normals.push_back(rng.unit_vector());
    }
    for (int i = 0; i < vertices + 2; ++i) s.truth_vertices.push_back(random_vec(rng, 6.0));
    return s;
}

// Larger weights than the default initialization so every layer carries a
// visible gradient; biases are nonzero so relus do not sit at exact zeros.
inline AgentNetwork toy_network(const NetworkConfig& cfg, std::uint64_t seed) {
    AgentNetwork net(cfg);
    Rng rng(seed);
    Eigen::VectorXd p(static_cast<Eigen::Index>(net.parameter_count()));
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = rng.uniform(-0.8, 0.8);
    net.set_parameters(p);
    return net;
}

struct GradientReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central differences against loss_and_grad for every parameter. The error
// of a parameter is |g - fd| / max(|g|, |fd|), or the absolute difference
// when both are below `floor`.
inline GradientReport check_gradient(const AgentNetwork& net, const TrainingSample& sample, const LossWeights& w, double eps,
                                     double floor = 1e-9) {
    const auto analytic = loss_and_grad(net, sample, w);
    Eigen::VectorXd g(static_cast<Eigen::Index>(net.parameter_count()));
    Eigen::Index pos = 0;
    for (const auto& layer : analytic.grads) {
        g.segment(pos, layer.w.size()) = Eigen::Map<const Eigen::VectorXd>(layer.w.data(), layer.w.size());
        pos += layer.w.size();
        g.segment(pos, layer.b.size()) = layer.b.transpose();
        pos += layer.b.size();
    }
    const Eigen::VectorXd p0 = net.parameters();
    AgentNetwork probe = net;
    GradientReport report;
    for (Eigen::Index i = 0; i < p0.size(); ++i) {
        Eigen::VectorXd p = p0;
        p[i] = p0[i] + eps;
        probe.set_parameters(p);
        const double up = loss_only(probe, sample, w);
        p[i] = p0[i] - eps;
        probe.set_parameters(p);
        const double down = loss_only(probe, sample, w);
        const double fd = (up - down) / (2.0 * eps);
        const double scale = std::max(std::abs(fd), std::abs(g[i]));
        const double err = scale < floor ? std::abs(fd - g[i]) : std::abs(fd - g[i]) / scale;
        if (err > report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_index = static_cast<std::size_t>(i);
        }
        ++report.checked;
    }
    return report;
}

inline State permute_rows(const State& s, std::span<const std::size_t> perm) {
    std::vector<int> ids(perm.begin(), perm.end());
    return s.select(ids);
}

}  // namespace apn::testing
