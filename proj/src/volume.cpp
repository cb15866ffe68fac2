#include "apn/volume.hpp"

#include "apn/io.hpp"

#include <algorithm>
#include <cmath>

namespace apn {

Grid Grid::centered(std::array<int, 3> dims, const Vec3& spacing) {
    Grid g;
    g.dims = dims;
    g.spacing = spacing;
    for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (dims[a] - 1) * spacing[a];
    return g;
}

void Grid::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw Error("grid: dims must be >= 1");
        if (!(spacing[a] > 0.0)) throw Error("grid: spacing must be > 0");
    }
}

Volume::Volume(const Grid& g, float fill) : grid(g), data(g.voxel_count(), fill) { grid.validate(); }

void Volume::validate() const {
    grid.validate();
    if (data.size() != grid.voxel_count()) throw Error("volume: data length does not match dims");
}

double sample_trilinear(const Volume& vol, const Vec3& p) {
    const Vec3 u = vol.grid.to_voxel(p);
    int base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
        const int n = vol.grid.dims[a];
        if (!(u[a] >= 0.0 && u[a] <= n - 1)) return vol.padding;
        if (n == 1) {
            base[a] = 0;
            frac[a] = 0.0;
            continue;
        }
        int i = static_cast<int>(std::floor(u[a]));
        if (i > n - 2) i = n - 2;
        base[a] = i;
        frac[a] = u[a] - i;
    }
    const int step[3] = {vol.grid.dims[0] > 1 ? 1 : 0, vol.grid.dims[1] > 1 ? 1 : 0, vol.grid.dims[2] > 1 ? 1 : 0};
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1;
        const int dy = (c >> 1) & 1;
        const int dz = (c >> 2) & 1;
        const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) * (dz ? frac[2] : 1.0 - frac[2]);
        if (w == 0.0) continue;
        acc += w * vol.at(base[0] + dx * step[0], base[1] + dy * step[1], base[2] + dz * step[2]);
    }
    return acc;
}

namespace {

std::filesystem::path strip_volume_suffix(const std::filesystem::path& p) {
    std::string s = p.string();
    for (const char* suffix : {".vol.json", ".vol.raw"}) {
        const std::string suf(suffix);
        if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) return s.substr(0, s.size() - suf.size());
    }
    return p;
}

}  // namespace

void write_volume(const Volume& vol, const std::filesystem::path& stem_in) {
    vol.validate();
    const auto stem = strip_volume_suffix(stem_in);
    const std::filesystem::path raw = stem.string() + ".vol.raw";
    io::Json header = {
        {"dims", {vol.grid.dims[0], vol.grid.dims[1], vol.grid.dims[2]}},
        {"spacing", io::vec3_json(vol.grid.spacing)},
        {"origin", io::vec3_json(vol.grid.origin)},
        {"dtype", "float32"},
        {"byte_order", "little"},
        {"padding", vol.padding},
        {"data_file", raw.filename().string()},
    };
    io::write_raw_le<float>(vol.data, raw);
    io::write_json(header, stem.string() + ".vol.json");
}

Volume read_volume(const std::filesystem::path& header_or_stem) {
    const auto stem = strip_volume_suffix(header_or_stem);
    const std::filesystem::path header_path = stem.string() + ".vol.json";
    const auto header = io::read_json(header_path);
    if (header.value("dtype", "float32") != "float32" || header.value("byte_order", "little") != "little") {
        throw Error("volume: only little-endian float32 payloads are supported");
    }
    Volume vol;
    for (int a = 0; a < 3; ++a) vol.grid.dims[a] = header.at("dims").at(a).get<int>();
    vol.grid.spacing = io::json_vec3(header.at("spacing"));
    vol.grid.origin = io::json_vec3(header.at("origin"));
    vol.padding = header.value("padding", 0.0f);
    vol.grid.validate();
    const auto data_file = header_path.parent_path() / header.value("data_file", stem.filename().string() + ".vol.raw");
    vol.data = io::read_raw_le<float>(data_file, vol.grid.voxel_count());
    return vol;
}

void PhantomSpec::validate() const {
    grid.validate();
    for (int a = 0; a < 3; ++a) {
        if (!(semi_axes[a] > 0.0)) throw Error("phantom: semi-axes must be > 0");
    }
    if (interior == exterior) throw Error("phantom: interior and exterior intensity must differ");
    if (softness < 0.0 || noise < 0.0) throw Error("phantom: softness and noise must be >= 0");
    if (family == ShapeFamily::lobed_blob) {
        if (lobes < 0 || lobe_amplitude < 0.0 || lobe_width <= 0.0) throw Error("phantom: invalid lobe parameters");
        if (lobe_amplitude * lobes >= 0.9) throw Error("phantom: lobes too strong, shape would not stay star-shaped");
    }
    if (mesh_subdivisions < 0) throw Error("phantom: mesh_subdivisions must be >= 0");
}

namespace {

struct Lobe {
    Vec3 direction;
    double sign;
};

std::vector<Lobe> phantom_lobes(const PhantomSpec& spec) {
    std::vector<Lobe> lobes;
    if (spec.family != ShapeFamily::lobed_blob) return lobes;
    Rng rng(derive_seed(spec.seed, 0x10be));
    for (int l = 0; l < spec.lobes; ++l) lobes.push_back({rng.unit_vector(), l % 2 == 0 ? 1.0 : -1.0});
    return lobes;
}

double radial_scale(const PhantomSpec& spec, const std::vector<Lobe>& lobes, const Vec3& u) {
    double r = 1.0;
    for (const auto& lobe : lobes) r += spec.lobe_amplitude * lobe.sign * std::exp(-(1.0 - u.dot(lobe.direction)) / spec.lobe_width);
    return r;
}

}  // namespace

double phantom_radial_scale(const PhantomSpec& spec, const Vec3& unit_dir) {
    return radial_scale(spec, phantom_lobes(spec), unit_dir);
}

bool phantom_contains(const PhantomSpec& spec, const Vec3& p) {
    const Vec3 q = (p - spec.center).cwiseQuotient(spec.semi_axes);
    const double len = q.norm();
    if (len == 0.0) return true;
    return len < phantom_radial_scale(spec, q / len);
}

Mesh phantom_mesh(const PhantomSpec& spec, int level) {
    spec.validate();
    if (level < 0) throw Error("phantom_mesh: negative level");
    const auto lobes = phantom_lobes(spec);
    Mesh mesh = icosphere(spec.mesh_subdivisions + level);
    for (auto& v : mesh.vertices) {
        const Vec3 u = v.normalized();
        v = spec.center + spec.semi_axes.cwiseProduct(radial_scale(spec, lobes, u) * u);
    }
    mesh.level = level;
    mesh.topology = "ico" + std::to_string(spec.mesh_subdivisions);
    return mesh;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const auto lobes = phantom_lobes(spec);
    double max_scale = 1.0;
    for (std::size_t l = 0; l < lobes.size(); l += 2) max_scale += spec.lobe_amplitude;
    const Vec3 reach = spec.semi_axes * max_scale + Vec3::Constant(2.0 * spec.softness);
    const Vec3 lo = spec.grid.extent_min();
    const Vec3 hi = spec.grid.extent_max();
    for (int a = 0; a < 3; ++a) {
        if (spec.center[a] - reach[a] < lo[a] || spec.center[a] + reach[a] > hi[a]) {
            throw Error("phantom: shape exceeds volume bounds");
        }
    }

    Phantom out;
    out.volume = Volume(spec.grid, static_cast<float>(spec.exterior));
    out.volume.padding = static_cast<float>(spec.exterior);
    Rng rng(derive_seed(spec.seed, 0x0015e));
    const auto& g = spec.grid;
    const double contrast = spec.interior - spec.exterior;
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int j = 0; j < g.dims[1]; ++j) {
            for (int i = 0; i < g.dims[0]; ++i) {
                const Vec3 p = g.to_world(Vec3(i, j, k));
                const Vec3 q = (p - spec.center).cwiseQuotient(spec.semi_axes);
                const double len = q.norm();
                double value;
                if (len == 0.0) {
                    value = spec.interior;
                } else {
                    const Vec3 u = q / len;
                    const double scale = radial_scale(spec, lobes, u);
                    // Signed distance measured along the ray from the center.
                    const double sd = (len - scale) * spec.semi_axes.cwiseProduct(u).norm();
                    double inside;
                    if (spec.softness > 0.0) {
                        inside = 0.5 * std::erfc(sd / (spec.softness * std::sqrt(2.0)));
                    } else {
                        inside = sd < 0.0 ? 1.0 : 0.0;
                    }
                    value = spec.exterior + contrast * inside;
                }
                if (spec.noise > 0.0) value += spec.noise * rng.normal();
                out.volume.at(i, j, k) = static_cast<float>(value);
            }
        }
    }
    out.mesh = phantom_mesh(spec, 0);
    return out;
}

std::size_t Mask::count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
}

Volume Mask::to_volume() const {
    Volume vol(grid, 0.0f);
    for (std::size_t i = 0; i < bits.size(); ++i) vol.data[i] = bits[i] ? 1.0f : 0.0f;
    return vol;
}

Mask voxelize_mesh(const Mesh& mesh, const Grid& grid) {
    require_watertight(mesh);
    grid.validate();
    Mask mask;
    mask.grid = grid;
    mask.bits.assign(grid.voxel_count(), 0);

    const int ny = grid.dims[1];
    const int nz = grid.dims[2];
    // Ray offsets in voxel units: small irrational fractions.
    const double off_y = std::sqrt(2.0) * 1e-6;
    const double off_z = std::sqrt(3.0) * 1e-6;
    std::vector<std::vector<double>> crossings(static_cast<std::size_t>(ny) * nz);

    for (const auto& f : mesh.faces) {
        Vec3 p[3];
        for (int c = 0; c < 3; ++c) p[c] = grid.to_voxel(mesh.vertices[f[c]]);
        // Projected (y, z) triangle; orient counter-clockwise.
        double area = (p[1].y() - p[0].y()) * (p[2].z() - p[0].z()) - (p[2].y() - p[0].y()) * (p[1].z() - p[0].z());
        if (area == 0.0) continue;
        if (area < 0.0) std::swap(p[1], p[2]);
        double ymin = std::min({p[0].y(), p[1].y(), p[2].y()});
        double ymax = std::max({p[0].y(), p[1].y(), p[2].y()});
        double zmin = std::min({p[0].z(), p[1].z(), p[2].z()});
        double zmax = std::max({p[0].z(), p[1].z(), p[2].z()});
        const int j0 = std::max(0, static_cast<int>(std::ceil(ymin - off_y)));
        const int j1 = std::min(ny - 1, static_cast<int>(std::floor(ymax - off_y)));
        const int k0 = std::max(0, static_cast<int>(std::ceil(zmin - off_z)));
        const int k1 = std::min(nz - 1, static_cast<int>(std::floor(zmax - off_z)));
        if (j0 > j1 || k0 > k1) continue;
        const double abs_area = std::abs(area);
        for (int k = k0; k <= k1; ++k) {
            for (int j = j0; j <= j1; ++j) {
                const double y = j + off_y;
                const double z = k + off_z;
                double w[3];
                bool inside = true;
                for (int e = 0; e < 3; ++e) {
                    const Vec3& a = p[(e + 1) % 3];
                    const Vec3& b = p[(e + 2) % 3];
                    const double du = b.y() - a.y();
                    const double dv = b.z() - a.z();
                    w[e] = du * (z - a.z()) - dv * (y - a.y());
                    if (w[e] < 0.0) {
                        inside = false;
                        break;
                    }
                    if (w[e] == 0.0) {
                        const bool top_left = dv < 0.0 || (dv == 0.0 && du < 0.0);
                        if (!top_left) {
                            inside = false;
                            break;
                        }
                    }
                }
                if (!inside) continue;
                const double x = (w[0] * p[0].x() + w[1] * p[1].x() + w[2] * p[2].x()) / abs_area;
                crossings[static_cast<std::size_t>(k) * ny + j].push_back(x);
            }
        }
    }

    const int nx = grid.dims[0];
    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            auto& xs = crossings[static_cast<std::size_t>(k) * ny + j];
            if (xs.empty()) continue;
            std::sort(xs.begin(), xs.end());
            // Voxel i is inside when an odd number of crossings lie beyond it.
            std::size_t next = 0;
            for (int i = 0; i < nx; ++i) {
                while (next < xs.size() && xs[next] <= i) ++next;
                if ((xs.size() - next) % 2 == 1) mask.bits[grid.index(i, j, k)] = 1;
            }
        }
    }
    return mask;
}

double dice(const Mask& a, const Mask& b) {
    if (!(a.grid == b.grid)) throw Error("dice: masks live on different grids");
    std::size_t both = 0;
    std::size_t na = 0;
    std::size_t nb = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        na += a.bits[i];
        nb += b.bits[i];
        both += a.bits[i] & b.bits[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

}  // namespace apn
