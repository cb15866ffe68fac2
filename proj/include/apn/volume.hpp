#pragma once

#include "apn/common.hpp"
#include "apn/mesh.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace apn {

// Voxel lattice geometry. Voxel (i, j, k) has its center at
// origin + (i, j, k) * spacing (component-wise), in mm.
struct Grid {
    std::array<int, 3> dims{0, 0, 0};
    Vec3 spacing = Vec3::Ones();
    Vec3 origin = Vec3::Zero();

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
    }
    Vec3 to_world(const Vec3& voxel) const { return origin + voxel.cwiseProduct(spacing); }
    Vec3 to_voxel(const Vec3& world) const { return (world - origin).cwiseQuotient(spacing); }
    Vec3 extent_min() const { return origin; }
    Vec3 extent_max() const { return to_world(Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1)); }

    // Grid of the given size centered on the world origin.
    static Grid centered(std::array<int, 3> dims, const Vec3& spacing);

    void validate() const;
    bool operator==(const Grid& other) const = default;
};

// Scalar image I. Immutable after construction in normal use; sampling is a
// pure read.
struct Volume {
    Grid grid;
    std::vector<float> data;  // x fastest
    float padding = 0.0f;     // returned for samples outside the voxel-center hull

    Volume() = default;
    Volume(const Grid& g, float fill = 0.0f);

    float at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }
    float& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }

    void validate() const;
};

// Trilinear interpolation at a world point; padding outside the grid.
double sample_trilinear(const Volume& vol, const Vec3& p);

// Raw little-endian float32 payload plus a JSON header: `<stem>.vol.json`
// and `<stem>.vol.raw`.
void write_volume(const Volume& vol, const std::filesystem::path& stem);
Volume read_volume(const std::filesystem::path& header_or_stem);

enum class ShapeFamily { ellipsoid, lobed_blob };

// Synthetic organ stand-in. Lobed blobs modulate the ellipsoid radius with
// signed Gaussian bumps whose directions are drawn from `seed`.
struct PhantomSpec {
    ShapeFamily family = ShapeFamily::ellipsoid;
    Vec3 center = Vec3::Zero();
    Vec3 semi_axes = Vec3::Constant(60.0);
    double interior = 100.0;
    double exterior = 0.0;
    double softness = 1.5;  // Gaussian edge width, mm
    double noise = 0.0;     // per-voxel Gaussian noise stddev
    std::uint64_t seed = 0;
    int lobes = 3;
    double lobe_amplitude = 0.25;
    double lobe_width = 0.2;
    Grid grid = Grid::centered({128, 128, 128}, Vec3::Constant(2.5));
    int mesh_subdivisions = 3;  // icosphere refinement of the level-0 surface mesh

    void validate() const;
};

// Radial scale of the shape along a unit direction in normalized
// (semi-axis) space; 1 everywhere for an ellipsoid.
double phantom_radial_scale(const PhantomSpec& spec, const Vec3& unit_dir);

// Analytic inside test (strict).
bool phantom_contains(const PhantomSpec& spec, const Vec3& p);

// Ground-truth surface at pyramid level `level` (icosphere refined
// mesh_subdivisions + level times, mapped onto the analytic surface).
Mesh phantom_mesh(const PhantomSpec& spec, int level = 0);

struct Phantom {
    Volume volume;
    Mesh mesh;
};

Phantom generate_phantom(const PhantomSpec& spec);

// Binary mask on a grid; 1 for voxel centers inside a closed mesh.
struct Mask {
    Grid grid;
    std::vector<std::uint8_t> bits;

    std::size_t count() const;
    Volume to_volume() const;
};

// Parity test along +x per voxel column. Each column ray is offset from the
// voxel centers by a fixed irrational fraction of a voxel in y and z so that
// rays do not graze mesh edges or vertices; exact zeros left over fall to a
// top-left edge rule, so a shared edge is counted by exactly one triangle.
Mask voxelize_mesh(const Mesh& mesh, const Grid& grid);

double dice(const Mask& a, const Mask& b);

}  // namespace apn
