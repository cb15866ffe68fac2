#pragma once

#include "apn/common.hpp"

#include <Eigen/Geometry>

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace apn {

using Face = std::array<int, 3>;

// Triangle surface mesh. Vertices are in mm. Meshes with the same
// (topology, level) pair share an identical face array, which is what gives
// the shape model its point correspondence.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    int level = 0;
    std::string topology;

    std::size_t size() const { return vertices.size(); }
    Vec3 centroid() const;
};

// Checks index bounds and that every vertex is referenced by a face.
void validate_mesh(const Mesh& mesh);

// Throws unless every undirected edge is shared by exactly two faces with
// opposite orientation.
void require_watertight(const Mesh& mesh);

// Unit icosahedron refined `level` times by midpoint subdivision with the new
// vertices projected to the unit sphere. Vertex indices of coarser levels are
// a prefix of finer levels.
Mesh icosphere(int level);

struct Edge {
    int a;
    int b;
};

// Unique undirected edges (a < b), sorted.
std::vector<Edge> mesh_edges(const Mesh& mesh);

// 1-ring neighbours per vertex, sorted ascending.
std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh);

// Area-weighted vertex normals; throws on vertices without incident area.
std::vector<Vec3> vertex_normals(const Mesh& mesh);

struct LocalFrame {
    Vec3 e1;  // normal
    Vec3 e2;
    Vec3 e3;
};

// e1 = normal; e2 is the global axis least aligned with e1 (lowest index on
// ties) projected onto the tangent plane; e3 = e1 x e2.
LocalFrame local_frame(const Vec3& normal);

// Midpoint 1-to-4 subdivision. Original vertices keep their indices and the
// midpoint of edge k (in mesh_edges order) gets index V + k.
Mesh subdivide(const Mesh& mesh);

// Up-samples a per-vertex field to the subdivided mesh by averaging edge
// endpoints, consistent with subdivide's vertex numbering.
RowMatrix upsample_field(const Mesh& coarse, const RowMatrix& field);

struct ClosestPoint {
    double distance = 0.0;
    Vec3 point = Vec3::Zero();
    int face = -1;
};

// Closest point on a single triangle.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Bounding-volume hierarchy over mesh triangles for exact point-to-surface
// queries. Immutable after construction; queries are thread-safe.
class SurfaceQuery {
public:
    explicit SurfaceQuery(const Mesh& mesh);

    ClosestPoint closest(const Vec3& p) const;
    double distance(const Vec3& p) const { return closest(p).distance; }

private:
    struct Node {
        Eigen::AlignedBox3d box;
        int left = -1;   // child index, or -1 for a leaf
        int right = -1;
        int begin = 0;   // leaf triangle range in order_
        int end = 0;
    };

    int build(int begin, int end, std::vector<Vec3>& centers);

    std::vector<Vec3> vertices_;
    std::vector<Face> faces_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

ClosestPoint point_to_surface_distance(const Vec3& p, const Mesh& mesh);

// Static kd-tree over a point set for nearest-neighbour queries.
class PointIndex {
public:
    explicit PointIndex(std::span<const Vec3> points);

    // Index of the nearest point (lowest index on exact ties) and its distance.
    std::pair<int, double> nearest(const Vec3& q) const;

private:
    struct Node {
        int point = -1;
        int axis = 0;
        int left = -1;
        int right = -1;
    };

    int build(std::vector<int>& ids, int begin, int end, int depth);
    void search(int node, const Vec3& q, int& best, double& best_d2) const;

    std::vector<Vec3> points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

struct HausdorffResult {
    double distance = 0.0;
    int a_index = -1;  // endpoint of the maximal nearest-neighbour pair in A
    int b_index = -1;  // endpoint in B
};

// Symmetric Hausdorff distance between two vertex sets. Reports the pair that
// realises the maximum (A->B direction wins ties).
HausdorffResult hausdorff_pair(std::span<const Vec3> a, std::span<const Vec3> b);
double hausdorff(std::span<const Vec3> a, std::span<const Vec3> b);

// Wavefront OBJ with a `# topo: <id> level: <k>` comment line.
void write_obj(const Mesh& mesh, const std::filesystem::path& path);
Mesh read_obj(const std::filesystem::path& path);

// Applies a vertex permutation: result.vertices[i] = mesh.vertices[perm[i]],
// faces remapped accordingly.
Mesh permute_vertices(const Mesh& mesh, std::span<const std::size_t> perm);

double signed_volume(const Mesh& mesh);

}  // namespace apn
