#pragma once

#include "apn/common.hpp"
#include "apn/mesh.hpp"
#include "apn/volume.hpp"

#include <array>
#include <filesystem>
#include <numbers>

namespace apn {

// Cone of vision anchored at a vertex and opening along its normal.
struct ApertureConfig {
    double alpha = std::numbers::pi / 8.0;  // half-angle, radians, [0, pi/2)
    double beta = 20.0;                     // cone length, mm
    int n_depth = 8;
    int n_ring = 2;
    int n_azimuth = 4;
    bool two_sided = false;  // also sample the mirrored cone along -e1
    // Gray values enter the state as (value - intensity_center) / intensity_scale.
    double intensity_center = 0.0;
    double intensity_scale = 1.0;

    void validate() const;
    int samples_per_side() const { return n_depth * (1 + n_ring * n_azimuth); }
    int sample_count() const { return samples_per_side() * (two_sided ? 2 : 1); }
    // Width of the state rows: position, normal, boundary, gray values.
    int state_width() const { return 3 + 3 + 12 + sample_count(); }

    static ApertureConfig degenerate(double beta, int n_depth);
};

using ConeBoundary = std::array<Vec3, 4>;

// Four vectors of length beta at angle alpha from e1, azimuths 0, 90, 180
// and 270 degrees measured from e2 towards e3.
ConeBoundary cone_boundary(const Vec3& vertex, const LocalFrame& frame, const ApertureConfig& cfg);

// Offsets from the vertex of every sample point, in the fixed order
// side, depth, then axial sample followed by rings (inner to outer) and
// azimuths.
std::vector<Vec3> aperture_offsets(const LocalFrame& frame, const ApertureConfig& cfg);

struct ApertureFeatures {
    ApertureConfig config;
    RowMatrix positions;  // N x 3, mm
    RowMatrix normals;    // N x 3
    RowMatrix boundary;   // N x 12, psi_1..psi_4 offsets in mm
    RowMatrix theta;      // N x sample_count, raw gray values

    std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
};

ApertureFeatures sample_aperture(const Volume& vol, const Mesh& mesh, const ApertureConfig& cfg, int threads = 1);
// Same, with precomputed normals.
ApertureFeatures sample_aperture(const Volume& vol, const Mesh& mesh, std::span<const Vec3> normals, const ApertureConfig& cfg,
                                 int threads = 1);

// Network input for one mesh estimate. Rows follow vertex order.
struct State {
    RowMatrix rows;               // N x state_width
    Vec3 centroid = Vec3::Zero(); // normalization: x_n = (x - centroid) / radius
    double radius = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
    State select(std::span<const int> row_ids) const;
};

State assemble_state(const Mesh& mesh, const ApertureFeatures& feats);

// Debug dump: `<stem>.omega.raw` (float64 row-major state) + `<stem>.omega.json`.
void write_state(const State& state, const ApertureConfig& cfg, const std::filesystem::path& stem);

}  // namespace apn
