#include "apn/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace apn {

namespace {

std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

Vec3 Mesh::centroid() const {
    Vec3 sum = Vec3::Zero();
    for (const auto& v : vertices) sum += v;
    return vertices.empty() ? sum : Vec3(sum / static_cast<double>(vertices.size()));
}

void validate_mesh(const Mesh& mesh) {
    const int n = static_cast<int>(mesh.vertices.size());
    if (n == 0 || mesh.faces.empty()) throw Error("mesh: empty vertex or face array");
    std::vector<char> used(mesh.vertices.size(), 0);
    for (const auto& f : mesh.faces) {
        for (int idx : f) {
            if (idx < 0 || idx >= n) throw Error("mesh: face index out of range");
            used[idx] = 1;
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) throw Error("mesh: degenerate face");
    }
    for (std::size_t i = 0; i < used.size(); ++i) {
        if (!used[i]) throw Error("mesh: vertex " + std::to_string(i) + " is not referenced by any face");
    }
}

void require_watertight(const Mesh& mesh) {
    validate_mesh(mesh);
    // +1 for a->b with a<b, -1 for the reverse direction; a closed oriented
    // manifold sees each undirected edge exactly once in each direction.
    std::unordered_map<std::uint64_t, std::pair<int, int>> uses;
    uses.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            const int a = f[k];
            const int b = f[(k + 1) % 3];
            auto& slot = uses[edge_key(a, b)];
            if (a < b) {
                ++slot.first;
            } else {
                ++slot.second;
            }
        }
    }
    for (const auto& [key, count] : uses) {
        if (count.first != 1 || count.second != 1) throw Error("mesh is not watertight (open or non-manifold edge)");
    }
}

std::vector<Edge> mesh_edges(const Mesh& mesh) {
    std::vector<std::uint64_t> keys;
    keys.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) keys.push_back(edge_key(f[k], f[(k + 1) % 3]));
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<Edge> edges;
    edges.reserve(keys.size());
    for (auto key : keys) edges.push_back({static_cast<int>(key >> 32), static_cast<int>(key & 0xffffffffu)});
    return edges;
}

std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh) {
    std::vector<std::vector<int>> nbrs(mesh.vertices.size());
    for (const auto& e : mesh_edges(mesh)) {
        nbrs[e.a].push_back(e.b);
        nbrs[e.b].push_back(e.a);
    }
    for (auto& list : nbrs) std::sort(list.begin(), list.end());
    return nbrs;
}

Mesh icosphere(int level) {
    if (level < 0) throw Error("icosphere: negative level");
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    Mesh mesh;
    mesh.vertices = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
    };
    for (auto& v : mesh.vertices) v.normalize();
    mesh.faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };
    for (int l = 0; l < level; ++l) {
        const std::size_t old_count = mesh.vertices.size();
        mesh = subdivide(mesh);
        for (std::size_t i = old_count; i < mesh.vertices.size(); ++i) mesh.vertices[i].normalize();
    }
    mesh.level = 0;
    mesh.topology = "ico" + std::to_string(level);
    return mesh;
}

std::vector<Vec3> vertex_normals(const Mesh& mesh) {
    std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        // |cross| is twice the face area, so the sum is area weighted.
        const Vec3 n = (b - a).cross(c - a);
        for (int idx : f) normals[idx] += n;
    }
    for (std::size_t i = 0; i < normals.size(); ++i) {
        const double len = normals[i].norm();
        if (!(len > 1e-300)) throw Error("vertex_normals: vertex " + std::to_string(i) + " has no incident area");
        normals[i] /= len;
    }
    return normals;
}

LocalFrame local_frame(const Vec3& normal) {
    const double len = normal.norm();
    if (!(len > 1e-12)) throw Error("local_frame: zero normal");
    LocalFrame frame;
    frame.e1 = normal / len;
    int axis = 0;
    for (int k = 1; k < 3; ++k) {
        if (std::abs(frame.e1[k]) < std::abs(frame.e1[axis])) axis = k;
    }
    Vec3 seed = Vec3::Zero();
    seed[axis] = 1.0;
    frame.e2 = (seed - seed.dot(frame.e1) * frame.e1).normalized();
    frame.e3 = frame.e1.cross(frame.e2);
    return frame;
}

Mesh subdivide(const Mesh& mesh) {
    const auto edges = mesh_edges(mesh);
    const int base = static_cast<int>(mesh.vertices.size());
    std::unordered_map<std::uint64_t, int> midpoint;
    midpoint.reserve(edges.size());
    Mesh out;
    out.vertices = mesh.vertices;
    out.vertices.reserve(mesh.vertices.size() + edges.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
        midpoint[edge_key(edges[k].a, edges[k].b)] = base + static_cast<int>(k);
        out.vertices.push_back(0.5 * (mesh.vertices[edges[k].a] + mesh.vertices[edges[k].b]));
    }
    std::unordered_map<std::uint64_t, int> use_count;
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            if (++use_count[edge_key(f[k], f[(k + 1) % 3])] > 2) throw Error("subdivide: non-manifold edge");
        }
    }
    out.faces.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
        const int ab = midpoint.at(edge_key(f[0], f[1]));
        const int bc = midpoint.at(edge_key(f[1], f[2]));
        const int ca = midpoint.at(edge_key(f[2], f[0]));
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({f[1], bc, ab});
        out.faces.push_back({f[2], ca, bc});
        out.faces.push_back({ab, bc, ca});
    }
    out.level = mesh.level + 1;
    out.topology = mesh.topology;
    return out;
}

RowMatrix upsample_field(const Mesh& coarse, const RowMatrix& field) {
    if (field.rows() != static_cast<Eigen::Index>(coarse.vertices.size())) throw Error("upsample_field: row count mismatch");
    const auto edges = mesh_edges(coarse);
    RowMatrix out(field.rows() + static_cast<Eigen::Index>(edges.size()), field.cols());
    out.topRows(field.rows()) = field;
    for (std::size_t k = 0; k < edges.size(); ++k) {
        out.row(field.rows() + static_cast<Eigen::Index>(k)) = 0.5 * (field.row(edges[k].a) + field.row(edges[k].b));
    }
    return out;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Voronoi-region walk over vertices, edges, then the face interior.
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    }

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

SurfaceQuery::SurfaceQuery(const Mesh& mesh) : vertices_(mesh.vertices), faces_(mesh.faces) {
    if (faces_.empty()) throw Error("SurfaceQuery: mesh has no faces");
    std::vector<Vec3> centers(faces_.size());
    order_.resize(faces_.size());
    for (std::size_t i = 0; i < faces_.size(); ++i) {
        const auto& f = faces_[i];
        centers[i] = (vertices_[f[0]] + vertices_[f[1]] + vertices_[f[2]]) / 3.0;
        order_[i] = static_cast<int>(i);
    }
    nodes_.reserve(2 * faces_.size());
    build(0, static_cast<int>(faces_.size()), centers);
}

int SurfaceQuery::build(int begin, int end, std::vector<Vec3>& centers) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Eigen::AlignedBox3d box;
    Eigen::AlignedBox3d center_box;
    for (int i = begin; i < end; ++i) {
        const auto& f = faces_[order_[i]];
        for (int idx : f) box.extend(vertices_[idx]);
        center_box.extend(centers[order_[i]]);
    }
    nodes_[id].box = box;
    constexpr int kLeafSize = 4;
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    int axis = 0;
    center_box.sizes().maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int l, int r) {
        if (centers[l][axis] != centers[r][axis]) return centers[l][axis] < centers[r][axis];
        return l < r;
    });
    const int left = build(begin, mid, centers);
    const int right = build(mid, end, centers);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

ClosestPoint SurfaceQuery::closest(const Vec3& p) const {
    ClosestPoint best;
    double best_d2 = std::numeric_limits<double>::infinity();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[stack[--top]];
        if (node.box.squaredExteriorDistance(p) > best_d2) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int fi = order_[i];
                const auto& f = faces_[fi];
                const Vec3 q = closest_point_on_triangle(p, vertices_[f[0]], vertices_[f[1]], vertices_[f[2]]);
                const double d2 = (q - p).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && fi < best.face)) {
                    best_d2 = d2;
                    best.point = q;
                    best.face = fi;
                }
            }
            continue;
        }
        const double dl = nodes_[node.left].box.squaredExteriorDistance(p);
        const double dr = nodes_[node.right].box.squaredExteriorDistance(p);
        // Push the farther child first so the nearer one is searched first.
        if (dl <= dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    best.distance = std::sqrt(best_d2);
    return best;
}

ClosestPoint point_to_surface_distance(const Vec3& p, const Mesh& mesh) { return SurfaceQuery(mesh).closest(p); }

PointIndex::PointIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) throw Error("PointIndex: empty point set");
    std::vector<int> ids(points_.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    nodes_.reserve(points_.size());
    root_ = build(ids, 0, static_cast<int>(ids.size()), 0);
}

int PointIndex::build(std::vector<int>& ids, int begin, int end, int depth) {
    if (begin >= end) return -1;
    const int axis = depth % 3;
    const int mid = begin + (end - begin) / 2;
    std::nth_element(ids.begin() + begin, ids.begin() + mid, ids.begin() + end, [&](int l, int r) {
        if (points_[l][axis] != points_[r][axis]) return points_[l][axis] < points_[r][axis];
        return l < r;
    });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({ids[mid], axis, -1, -1});
    const int left = build(ids, begin, mid, depth + 1);
    const int right = build(ids, mid + 1, end, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void PointIndex::search(int node, const Vec3& q, int& best, double& best_d2) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
        best_d2 = d2;
        best = n.point;
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<int, double> PointIndex::nearest(const Vec3& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_d2);
    return {best, std::sqrt(best_d2)};
}

HausdorffResult hausdorff_pair(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.empty() || b.empty()) throw Error("hausdorff: empty point set");
    HausdorffResult result;
    result.distance = -1.0;
    const PointIndex index_b(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto [j, d] = index_b.nearest(a[i]);
        if (d > result.distance) result = {d, static_cast<int>(i), j};
    }
    const PointIndex index_a(a);
    for (std::size_t j = 0; j < b.size(); ++j) {
        const auto [i, d] = index_a.nearest(b[j]);
        if (d > result.distance) result = {d, i, static_cast<int>(j)};
    }
    return result;
}

double hausdorff(std::span<const Vec3> a, std::span<const Vec3> b) { return hausdorff_pair(a, b).distance; }

void write_obj(const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "# topo: " << (mesh.topology.empty() ? "none" : mesh.topology) << " level: " << mesh.level << "\n";
    char buf[128];
    for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << "\n";
    if (!out) throw Error("write failed: " + path.string());
}

Mesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    Mesh mesh;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            ss >> v.x() >> v.y() >> v.z();
            if (!ss) throw Error("obj: bad vertex line: " + line);
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string token;
            while (ss >> token) idx.push_back(std::stoi(token.substr(0, token.find('/'))) - 1);
            if (idx.size() != 3) throw Error("obj: only triangular faces are supported");
            mesh.faces.push_back({idx[0], idx[1], idx[2]});
        } else if (tag == "#") {
            std::string key;
            if (ss >> key && key == "topo:") {
                std::string topo;
                std::string level_key;
                ss >> topo >> level_key >> mesh.level;
                mesh.topology = topo == "none" ? "" : topo;
            }
        }
    }
    validate_mesh(mesh);
    return mesh;
}

Mesh permute_vertices(const Mesh& mesh, std::span<const std::size_t> perm) {
    if (perm.size() != mesh.vertices.size()) throw Error("permute_vertices: size mismatch");
    std::vector<int> inverse(perm.size());
    Mesh out;
    out.level = mesh.level;
    out.topology = mesh.topology;
    out.vertices.resize(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out.vertices[i] = mesh.vertices[perm[i]];
        inverse[perm[i]] = static_cast<int>(i);
    }
    out.faces.reserve(mesh.faces.size());
    for (const auto& f : mesh.faces) out.faces.push_back({inverse[f[0]], inverse[f[1]], inverse[f[2]]});
    return out;
}

double signed_volume(const Mesh& mesh) {
    double vol = 0.0;
    for (const auto& f : mesh.faces) {
        vol += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
    }
    return vol / 6.0;
}

}  // namespace apn
