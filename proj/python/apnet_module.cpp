#include "apn/cli.hpp"
#include "apn/experiment.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace pybind11::literals;
using namespace apn;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

std::vector<Vec3> to_points(const Points& m) {
    std::vector<Vec3> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).transpose();
    return out;
}

Points from_points(std::span<const Vec3> pts) {
    Points m(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    return m;
}

Mesh make_mesh(const Points& vertices, const Faces& faces) {
    Mesh mesh;
    mesh.vertices = to_points(vertices);
    for (Eigen::Index i = 0; i < faces.rows(); ++i) mesh.faces.push_back({faces(i, 0), faces(i, 1), faces(i, 2)});
    validate_mesh(mesh);
    return mesh;
}

Faces mesh_faces(const Mesh& mesh) {
    Faces f(static_cast<Eigen::Index>(mesh.faces.size()), 3);
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        for (int k = 0; k < 3; ++k) f(static_cast<Eigen::Index>(i), k) = mesh.faces[i][k];
    }
    return f;
}

// Configs cross the boundary as JSON text; the Python package wraps dicts.
io::Json parse(const std::string& text) { return text.empty() ? io::Json::object() : io::Json::parse(text); }

// Volume data as a (z, y, x) array, matching the x-fastest storage.
py::array_t<float> volume_array(const Volume& vol) {
    const auto& d = vol.grid.dims;
    py::array_t<float> out({d[2], d[1], d[0]});
    std::copy(vol.data.begin(), vol.data.end(), out.mutable_data());
    return out;
}

Volume make_volume(py::array_t<float, py::array::c_style | py::array::forcecast> data, const Vec3& spacing, const Vec3& origin,
                   float padding) {
    if (data.ndim() != 3) throw Error("volume data must be a 3-d (z, y, x) array");
    Grid g;
    g.dims = {static_cast<int>(data.shape(2)), static_cast<int>(data.shape(1)), static_cast<int>(data.shape(0))};
    g.spacing = spacing;
    g.origin = origin;
    g.validate();
    Volume vol(g);
    std::copy(data.data(), data.data() + data.size(), vol.data.begin());
    vol.padding = padding;
    return vol;
}

ActionField make_field(const RowMatrix& values) {
    if (values.cols() != 1 && values.cols() != 3) throw Error("action values must have 1 or 3 columns");
    ActionField f;
    f.mode = values.cols() == 1 ? ActionMode::normal : ActionMode::general;
    f.values = values;
    return f;
}

}  // namespace

PYBIND11_MODULE(_apnet, m) {
    m.doc() = "Active point net segmentation: meshes, phantoms, apertures, oracle and benchmark";
    py::register_exception<Error>(m, "Error", PyExc_ValueError);

    py::class_<Mesh>(m, "Mesh")
        .def(py::init(&make_mesh), "vertices"_a, "faces"_a)
        .def_property_readonly("vertices", [](const Mesh& mesh) { return from_points(mesh.vertices); })
        .def_property_readonly("faces", &mesh_faces)
        .def_readonly("level", &Mesh::level)
        .def("__len__", &Mesh::size)
        .def("centroid", &Mesh::centroid)
        .def("normals", [](const Mesh& mesh) { return from_points(vertex_normals(mesh)); })
        .def("subdivide", [](const Mesh& mesh) { return subdivide(mesh); })
        .def("signed_volume", [](const Mesh& mesh) { return signed_volume(mesh); });
    m.def("icosphere", &icosphere, "level"_a);
    m.def("read_obj", &read_obj, "path"_a);
    m.def("write_obj", &write_obj, "mesh"_a, "path"_a);

    py::class_<Volume>(m, "Volume")
        .def(py::init(&make_volume), "data"_a, "spacing"_a = Vec3::Ones(), "origin"_a = Vec3::Zero(), "padding"_a = 0.0f)
        .def_property_readonly("data", &volume_array)
        .def_property_readonly("dims", [](const Volume& v) { return v.grid.dims; })
        .def_property_readonly("spacing", [](const Volume& v) { return v.grid.spacing; })
        .def_property_readonly("origin", [](const Volume& v) { return v.grid.origin; })
        .def("sample", [](const Volume& v, const Points& pts) {
            Eigen::VectorXd out(pts.rows());
            for (Eigen::Index i = 0; i < pts.rows(); ++i) out[i] = sample_trilinear(v, pts.row(i).transpose());
            return out;
        }, "points"_a);
    m.def("read_volume", &read_volume, "path"_a);
    m.def("write_volume", &write_volume, "volume"_a, "path"_a);

    m.def("generate_phantoms", [](const std::string& config, int threads) {
        const auto cfg = PhantomSetConfig::from_json(parse(config));
        const auto set = generate_phantom_set(cfg, derive_seed(parse(config).value("seed", std::uint64_t{0}), 1), threads);
        py::list out;
        for (std::size_t i = 0; i < set.phantoms.size(); ++i) {
            out.append(py::dict("volume"_a = set.phantoms[i].volume, "mesh"_a = set.phantoms[i].mesh,
                                "split"_a = static_cast<int>(i) < set.train ? "train" : "test"));
        }
        return out;
    }, "config"_a, "threads"_a = 1, "Phantom set from a JSON phantoms section; 'seed' in the same object picks the set.");

    m.def("point_to_surface_distance", [](const Points& pts, const Mesh& mesh) {
        const SurfaceQuery q(mesh);
        Eigen::VectorXd out(pts.rows());
        for (Eigen::Index i = 0; i < pts.rows(); ++i) out[i] = q.closest(pts.row(i).transpose()).distance;
        return out;
    }, "points"_a, "mesh"_a);
    m.def("hausdorff", [](const Points& a, const Points& b) { return hausdorff(to_points(a), to_points(b)); }, "a"_a, "b"_a);
    m.def("smoothness_penalty", [](const RowMatrix& values, const Mesh& mesh) { return smoothness_penalty(make_field(values), mesh); },
          "values"_a, "mesh"_a);

    m.def("sample_aperture", [](const Volume& vol, const Mesh& mesh, const std::string& aperture, int threads) {
        const auto cfg = aperture_from_json(parse(aperture));
        const auto f = sample_aperture(vol, mesh, cfg, threads);
        return py::dict("positions"_a = f.positions, "normals"_a = f.normals, "boundary"_a = f.boundary, "theta"_a = f.theta);
    }, "volume"_a, "mesh"_a, "aperture"_a = "", "threads"_a = 1);

    m.def("ideal_action", [](const Mesh& estimate, const Mesh& truth, double lambda, const std::string& aperture) {
        return ideal_action(estimate, truth, lambda, aperture_from_json(parse(aperture))).values;
    }, "estimate"_a, "truth"_a, "lam"_a = 1.0, "aperture"_a = "");
    m.def("apply_action", [](const Mesh& mesh, const RowMatrix& values) {
        Mesh out = mesh;
        out.vertices = apply_action(mesh.vertices, vertex_normals(mesh), make_field(values));
        return out;
    }, "mesh"_a, "values"_a);
    m.def("reward", [](const RowMatrix& a_star, const RowMatrix& a_tilde, const Points& deformed, const Points& truth, double lambda_h) {
        return reward(make_field(a_star), make_field(a_tilde), to_points(deformed), to_points(truth), lambda_h);
    }, "a_star"_a, "a_tilde"_a, "deformed"_a, "truth"_a, "lambda_h"_a);
    m.def("q_value", &q_value, "r"_a, "gamma"_a, "future_max"_a = 0.0);

    m.def("evaluate", [](const Mesh& pred, const Mesh& truth, const Volume& vol) {
        const auto e = evaluate(pred, truth, vol.grid);
        return py::dict("dice"_a = e.dice, "hausdorff_mm"_a = e.hausdorff_mm);
    }, "pred"_a, "truth"_a, "volume"_a);

    m.def("segment", [](const Volume& vol, const Mesh& init, const std::filesystem::path& agents_dir, int threads) {
        SegmentConfig seg;
        const Agents agents = load_agents(agents_dir, &seg);
        py::gil_scoped_release release;
        return segment(vol, init, agents, seg, threads).mesh;
    }, "volume"_a, "init"_a, "agents_dir"_a, "threads"_a = 1);

    m.def("bench", [](const std::string& config, const std::filesystem::path& out, int threads) {
        const auto cfg = ExperimentConfig::from_json(parse(config), std::filesystem::current_path());
        BenchResult r;
        {
            py::gil_scoped_release release;
            r = run_bench(cfg, out, threads);
        }
        return r.summary.dump();
    }, "config"_a, "out"_a, "threads"_a = 1, "Runs the benchmark; returns summary.json text.");

    m.def("run_cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "apn");
        py::gil_scoped_release release;
        return cli::run(args);
    }, "args"_a, "Runs an apn subcommand in process and returns its exit code.");
}
