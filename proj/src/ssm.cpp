#include "apn/ssm.hpp"

#include "apn/io.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include <cmath>

namespace apn {

std::vector<Vec3> Similarity::apply(std::span<const Vec3> xs) const {
    std::vector<Vec3> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(apply(x));
    return out;
}

Similarity Similarity::inverse() const {
    Similarity inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.scale * (inv.rotation * translation);
    return inv;
}

Similarity procrustes_align(std::span<const Vec3> src, std::span<const Vec3> dst) {
    if (src.size() != dst.size() || src.empty()) throw Error("procrustes_align: point sets differ in size or are empty");
    const double n = static_cast<double>(src.size());
    Vec3 mu_s = Vec3::Zero();
    Vec3 mu_d = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= n;
    mu_d /= n;
    Mat3 cov = Mat3::Zero();
    Mat3 src_cov = Mat3::Zero();
    double var_s = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 a = src[i] - mu_s;
        const Vec3 b = dst[i] - mu_d;
        cov += b * a.transpose();
        src_cov += a * a.transpose();
        var_s += a.squaredNorm();
    }
    cov /= n;
    var_s /= n;
    const Eigen::Vector3d spread = Eigen::SelfAdjointEigenSolver<Mat3>(src_cov).eigenvalues();
    if (!(spread[1] > 1e-12 * std::max(spread[2], 1e-300))) throw Error("procrustes_align: degenerate (collinear) source points");

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    Similarity t;
    t.rotation = svd.matrixU() * d * svd.matrixV().transpose();
    t.scale = (svd.singularValues().asDiagonal() * d).trace() / var_s;
    t.translation = mu_d - t.scale * (t.rotation * mu_s);
    return t;
}

Similarity procrustes_align(const Mesh& src, const Mesh& dst) {
    if (src.topology != dst.topology || src.vertices.size() != dst.vertices.size()) {
        throw Error("procrustes_align: meshes do not share a topology");
    }
    return procrustes_align(std::span<const Vec3>(src.vertices), std::span<const Vec3>(dst.vertices));
}

Eigen::VectorXd flatten(std::span<const Vec3> points) {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(points.size() * 3));
    for (std::size_t i = 0; i < points.size(); ++i) flat.segment<3>(static_cast<Eigen::Index>(3 * i)) = points[i];
    return flat;
}

std::vector<Vec3> unflatten(const Eigen::VectorXd& flat) {
    if (flat.size() % 3 != 0) throw Error("unflatten: length is not a multiple of 3");
    std::vector<Vec3> points(static_cast<std::size_t>(flat.size() / 3));
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = flat.segment<3>(static_cast<Eigen::Index>(3 * i));
    return points;
}

Mesh ShapeModel::mean_mesh() const {
    Mesh mesh;
    mesh.vertices = unflatten(mean);
    mesh.faces = faces;
    mesh.level = level;
    mesh.topology = topology;
    return mesh;
}

std::vector<Vec3> ShapeModel::displacement(std::span<const double> coeffs) const {
    if (coeffs.size() > mode_count()) throw Error("shape model: more coefficients than modes");
    Eigen::VectorXd d = Eigen::VectorXd::Zero(mean.size());
    for (std::size_t k = 0; k < coeffs.size(); ++k) {
        if (std::abs(coeffs[k]) > 3.0) spdlog::warn("shape coefficient {} on mode {} is outside +-3 sigma", coeffs[k], k);
        d += coeffs[k] * sigmas[static_cast<Eigen::Index>(k)] * modes.col(static_cast<Eigen::Index>(k));
    }
    return unflatten(d);
}

Eigen::VectorXd ShapeModel::project(const Eigen::VectorXd& residual) const {
    if (residual.size() != mean.size()) throw Error("shape model: residual length mismatch");
    Eigen::VectorXd coeffs = modes.transpose() * residual;
    for (Eigen::Index k = 0; k < coeffs.size(); ++k) coeffs[k] = sigmas[k] > 0.0 ? coeffs[k] / sigmas[k] : 0.0;
    return coeffs;
}

ShapeModel fit_ssm(std::span<const Mesh> meshes) {
    if (meshes.size() < 2) throw Error("fit_ssm: need at least two meshes");
    const Mesh& ref = meshes.front();
    validate_mesh(ref);
    for (const auto& m : meshes) {
        if (m.topology != ref.topology || m.level != ref.level || m.faces != ref.faces) {
            throw Error("fit_ssm: mismatched topologies");
        }
    }
    const auto k = static_cast<Eigen::Index>(meshes.size());
    const auto dim = static_cast<Eigen::Index>(ref.vertices.size() * 3);
    Eigen::MatrixXd aligned(dim, k);
    for (Eigen::Index s = 0; s < k; ++s) {
        const auto& m = meshes[static_cast<std::size_t>(s)];
        const Similarity t = s == 0 ? Similarity{} : procrustes_align(m, ref);
        aligned.col(s) = flatten(t.apply(std::span<const Vec3>(m.vertices)));
    }

    ShapeModel model;
    model.topology = ref.topology;
    model.level = ref.level;
    model.faces = ref.faces;
    model.mean = aligned.rowwise().mean();
    const Eigen::MatrixXd residuals = aligned.colwise() - model.mean;

    // Eigenvectors of the K x K Gram matrix map to covariance eigenvectors
    // through the residual matrix.
    const Eigen::MatrixXd gram = residuals.transpose() * residuals / static_cast<double>(k - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const Eigen::VectorXd values = eig.eigenvalues();
    const double top = std::max(values.maxCoeff(), 0.0);
    const double scale2 = std::max(model.mean.squaredNorm() / static_cast<double>(dim), 1e-300);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = k - 1; i >= 0; --i) {
        if (values[i] > 1e-10 * top && values[i] > 1e-20 * scale2) keep.push_back(i);
    }
    model.modes.resize(dim, static_cast<Eigen::Index>(keep.size()));
    model.sigmas.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t m = 0; m < keep.size(); ++m) {
        Eigen::VectorXd mode = residuals * eig.eigenvectors().col(keep[m]);
        mode.normalize();
        Eigen::Index arg = 0;
        mode.cwiseAbs().maxCoeff(&arg);
        if (mode[arg] < 0.0) mode = -mode;
        model.modes.col(static_cast<Eigen::Index>(m)) = mode;
        model.sigmas[static_cast<Eigen::Index>(m)] = std::sqrt(values[keep[m]]);
    }
    return model;
}

Mesh sample_shape(const ShapeModel& model, std::span<const double> coeffs) {
    Mesh mesh = model.mean_mesh();
    const auto d = model.displacement(coeffs);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) mesh.vertices[i] += d[i];
    return mesh;
}

namespace {

std::filesystem::path strip_suffix(const std::filesystem::path& p) {
    std::string s = p.string();
    for (const std::string suf : {".ssm.json", ".ssm.raw"}) {
        if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) return s.substr(0, s.size() - suf.size());
    }
    return p;
}

}  // namespace

void write_shape_model(const ShapeModel& model, const std::filesystem::path& stem_in) {
    const auto stem = strip_suffix(stem_in);
    const std::filesystem::path raw = stem.string() + ".ssm.raw";
    io::Json faces = io::Json::array();
    for (const auto& f : model.faces) faces.push_back({f[0], f[1], f[2]});
    io::Json header = {
        {"format", 1},
        {"topology", model.topology},
        {"level", model.level},
        {"vertex_count", model.vertex_count()},
        {"mode_count", model.mode_count()},
        {"sigmas", std::vector<double>(model.sigmas.data(), model.sigmas.data() + model.sigmas.size())},
        {"dtype", "float64"},
        {"byte_order", "little"},
        {"data_file", raw.filename().string()},
        {"faces", faces},
    };
    std::vector<double> payload(model.mean.data(), model.mean.data() + model.mean.size());
    payload.insert(payload.end(), model.modes.data(), model.modes.data() + model.modes.size());
    io::write_raw_le<double>(payload, raw);
    io::write_json(header, stem.string() + ".ssm.json");
}

ShapeModel read_shape_model(const std::filesystem::path& header_or_stem) {
    const auto stem = strip_suffix(header_or_stem);
    const std::filesystem::path header_path = stem.string() + ".ssm.json";
    const auto header = io::read_json(header_path);
    if (header.value("format", 0) != 1) throw Error("shape model: unsupported format version");
    ShapeModel model;
    model.topology = header.at("topology").get<std::string>();
    model.level = header.at("level").get<int>();
    const auto n = header.at("vertex_count").get<std::size_t>();
    const auto m = header.at("mode_count").get<std::size_t>();
    for (const auto& f : header.at("faces")) model.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
    const auto sig = header.at("sigmas").get<std::vector<double>>();
    if (sig.size() != m) throw Error("shape model: sigma count mismatch");
    model.sigmas = Eigen::Map<const Eigen::VectorXd>(sig.data(), static_cast<Eigen::Index>(m));
    const auto payload = io::read_raw_le<double>(header_path.parent_path() / header.at("data_file").get<std::string>(), 3 * n * (m + 1));
    model.mean = Eigen::Map<const Eigen::VectorXd>(payload.data(), static_cast<Eigen::Index>(3 * n));
    model.modes = Eigen::Map<const Eigen::MatrixXd>(payload.data() + 3 * n, static_cast<Eigen::Index>(3 * n), static_cast<Eigen::Index>(m));
    return model;
}

}  // namespace apn
