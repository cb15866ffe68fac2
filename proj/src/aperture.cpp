#include "apn/aperture.hpp"

#include "apn/io.hpp"

#include <cmath>

namespace apn {

void ApertureConfig::validate() const {
    if (!(alpha >= 0.0 && alpha < std::numbers::pi / 2.0)) throw Error("aperture: alpha must lie in [0, pi/2)");
    if (!(beta > 0.0)) throw Error("aperture: beta must be > 0");
    if (n_depth < 1 || n_ring < 0 || n_azimuth < 1) throw Error("aperture: invalid sampling density");
    if (alpha == 0.0 && n_ring != 0) throw Error("aperture: alpha = 0 requires n_ring = 0");
    if (!(intensity_scale > 0.0)) throw Error("aperture: intensity_scale must be > 0");
}

ApertureConfig ApertureConfig::degenerate(double beta, int n_depth) {
    ApertureConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta = beta;
    cfg.n_depth = n_depth;
    cfg.n_ring = 0;
    return cfg;
}

ConeBoundary cone_boundary(const Vec3& /*vertex*/, const LocalFrame& frame, const ApertureConfig& cfg) {
    ConeBoundary psi;
    const double c = std::cos(cfg.alpha);
    const double s = std::sin(cfg.alpha);
    for (int j = 0; j < 4; ++j) {
        const double phi = 0.5 * std::numbers::pi * j;
        const Vec3 radial = std::cos(phi) * frame.e2 + std::sin(phi) * frame.e3;
        psi[j] = cfg.beta * (c * frame.e1 + s * radial);
    }
    return psi;
}

std::vector<Vec3> aperture_offsets(const LocalFrame& frame, const ApertureConfig& cfg) {
    std::vector<Vec3> offsets;
    offsets.reserve(static_cast<std::size_t>(cfg.sample_count()));
    const int sides = cfg.two_sided ? 2 : 1;
    for (int side = 0; side < sides; ++side) {
        const double sign = side == 0 ? 1.0 : -1.0;
        for (int k = 1; k <= cfg.n_depth; ++k) {
            const double t = cfg.beta * k / cfg.n_depth;
            offsets.push_back(sign * t * frame.e1);
            for (int r = 1; r <= cfg.n_ring; ++r) {
                const double theta = cfg.alpha * r / cfg.n_ring;
                const double c = std::cos(theta);
                const double s = std::sin(theta);
                for (int j = 0; j < cfg.n_azimuth; ++j) {
                    const double phi = 2.0 * std::numbers::pi * j / cfg.n_azimuth;
                    const Vec3 radial = std::cos(phi) * frame.e2 + std::sin(phi) * frame.e3;
                    offsets.push_back(t * (sign * c * frame.e1 + s * radial));
                }
            }
        }
    }
    return offsets;
}

ApertureFeatures sample_aperture(const Volume& vol, const Mesh& mesh, const ApertureConfig& cfg, int threads) {
    const auto normals = vertex_normals(mesh);
    return sample_aperture(vol, mesh, normals, cfg, threads);
}

ApertureFeatures sample_aperture(const Volume& vol, const Mesh& mesh, std::span<const Vec3> normals, const ApertureConfig& cfg,
                                 int threads) {
    cfg.validate();
    if (normals.size() != mesh.vertices.size()) throw Error("sample_aperture: normal count mismatch");
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    ApertureFeatures feats;
    feats.config = cfg;
    feats.positions.resize(n, 3);
    feats.normals.resize(n, 3);
    feats.boundary.resize(n, 12);
    feats.theta.resize(n, cfg.sample_count());
    parallel_for(mesh.vertices.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const Vec3& v = mesh.vertices[i];
            const LocalFrame frame = local_frame(normals[i]);
            feats.positions.row(row) = v.transpose();
            feats.normals.row(row) = frame.e1.transpose();
            const auto psi = cone_boundary(v, frame, cfg);
            for (int j = 0; j < 4; ++j) feats.boundary.block<1, 3>(row, 3 * j) = psi[j].transpose();
            const auto offsets = aperture_offsets(frame, cfg);
            for (std::size_t s = 0; s < offsets.size(); ++s) {
                feats.theta(row, static_cast<Eigen::Index>(s)) = sample_trilinear(vol, v + offsets[s]);
            }
        }
    });
    return feats;
}

State State::select(std::span<const int> row_ids) const {
    State out;
    out.centroid = centroid;
    out.radius = radius;
    out.rows.resize(static_cast<Eigen::Index>(row_ids.size()), rows.cols());
    for (std::size_t i = 0; i < row_ids.size(); ++i) out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(row_ids[i]);
    return out;
}

State assemble_state(const Mesh& mesh, const ApertureFeatures& feats) {
    if (feats.size() != mesh.vertices.size()) throw Error("assemble_state: feature rows do not match the mesh vertex count");
    const auto& cfg = feats.config;
    State state;
    state.centroid = mesh.centroid();
    double radius = 0.0;
    for (const auto& v : mesh.vertices) radius = std::max(radius, (v - state.centroid).norm());
    state.radius = radius > 0.0 ? radius : 1.0;
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    state.rows.resize(n, cfg.state_width());
    const double inv_r = 1.0 / state.radius;
    const double inv_i = 1.0 / cfg.intensity_scale;
    for (Eigen::Index i = 0; i < n; ++i) {
        state.rows.block<1, 3>(i, 0) = (mesh.vertices[static_cast<std::size_t>(i)] - state.centroid).transpose() * inv_r;
        state.rows.block<1, 3>(i, 3) = feats.normals.row(i);
        state.rows.block<1, 12>(i, 6) = feats.boundary.row(i) * inv_r;
        state.rows.block(i, 18, 1, feats.theta.cols()) = (feats.theta.row(i).array() - cfg.intensity_center) * inv_i;
    }
    return state;
}

void write_state(const State& state, const ApertureConfig& cfg, const std::filesystem::path& stem) {
    const std::filesystem::path raw = stem.string() + ".omega.raw";
    io::Json header = {
        {"rows", state.rows.rows()},
        {"cols", state.rows.cols()},
        {"layout", "row-major"},
        {"dtype", "float64"},
        {"byte_order", "little"},
        {"columns", {{"position", 3}, {"normal", 3}, {"boundary", 12}, {"theta", cfg.sample_count()}}},
        {"centroid", io::vec3_json(state.centroid)},
        {"radius", state.radius},
        {"alpha", cfg.alpha},
        {"beta", cfg.beta},
        {"n_depth", cfg.n_depth},
        {"n_ring", cfg.n_ring},
        {"n_azimuth", cfg.n_azimuth},
        {"two_sided", cfg.two_sided},
        {"data_file", raw.filename().string()},
    };
    io::write_raw_le<double>(std::span<const double>(state.rows.data(), static_cast<std::size_t>(state.rows.size())), raw);
    io::write_json(header, stem.string() + ".omega.json");
}

}  // namespace apn
