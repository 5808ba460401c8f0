#include "shapefuse/registry.hpp"

#include <bit>
#include <fstream>

#include "shapefuse/mesh_io.hpp"

namespace shapefuse {

static_assert(std::endian::native == std::endian::little,
              "f64 blob I/O assumes a little-endian host");

std::string fnv1a64_bytes(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string() + " for hashing");
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64_bytes(data.data(), data.size());
}

void write_f64_blob(const std::filesystem::path& path, const double* data, std::size_t count) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(data), count * sizeof(double));
    if (!out) throw io_error("failed writing " + path.string());
}

Eigen::MatrixXd read_f64_matrix(const std::filesystem::path& path, long rows, long cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string() + " for reading");
    // blobs are row-major on disk
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), rows * cols * sizeof(double));
    if (in.gcount() != static_cast<std::streamsize>(rows * cols * sizeof(double)))
        throw io_error(path.string() + ": truncated blob (expected " + std::to_string(rows * cols) +
                       " doubles)");
    return m;
}

Eigen::VectorXd read_f64_vector(const std::filesystem::path& path, long size) {
    return read_f64_matrix(path, size, 1);
}

ModelRegistry::ModelRegistry(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
}

std::vector<std::string> ModelRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json"))
            out.push_back(entry.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

bool ModelRegistry::contains(const std::string& id) const {
    return std::filesystem::exists(root_ / id / "manifest.json");
}

std::filesystem::path ModelRegistry::entry_dir(const std::string& id) const {
    if (id.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos)
        throw std::invalid_argument("registry: invalid entry id '" + id + "'");
    return root_ / id;
}

nlohmann::json ModelRegistry::start_manifest(const std::string& id, const std::string& kind) const {
    std::filesystem::create_directories(entry_dir(id));
    nlohmann::json m;
    m["id"] = id;
    m["kind"] = kind;
    m["format_version"] = 1;
    m["files"] = nlohmann::json::object();
    return m;
}

void ModelRegistry::add_file(nlohmann::json& manifest, const std::string& id, const std::string& name,
                             const std::filesystem::path& relative) const {
    manifest["files"][name] = {{"path", relative.string()},
                               {"fnv64", fnv1a64_file(entry_dir(id) / relative)}};
}

void ModelRegistry::finish_manifest(const std::string& id, const nlohmann::json& manifest) const {
    std::ofstream out(entry_dir(id) / "manifest.json");
    if (!out) throw io_error("cannot write manifest for '" + id + "'");
    out << manifest.dump(2) << '\n';
}

nlohmann::json ModelRegistry::manifest(const std::string& id) const {
    const auto path = entry_dir(id) / "manifest.json";
    std::ifstream in(path);
    if (!in) throw io_error("registry entry '" + id + "' not found at " + path.string());
    nlohmann::json m;
    try {
        in >> m;
    } catch (const nlohmann::json::exception& e) {
        throw io_error(path.string() + ": " + e.what());
    }
    for (const auto& [name, file] : m.at("files").items()) {
        const auto blob = entry_dir(id) / file.at("path").get<std::string>();
        const std::string actual = fnv1a64_file(blob);
        if (actual != file.at("fnv64").get<std::string>())
            throw io_error("registry entry '" + id + "': hash mismatch for " + blob.string() +
                           " (corrupted artifact?)");
    }
    return m;
}

std::string ModelRegistry::kind(const std::string& id) const {
    return manifest(id).at("kind").get<std::string>();
}

std::string ModelRegistry::entry_hash(const std::string& id) const {
    const nlohmann::json m = manifest(id);
    std::string combined;
    for (const auto& [name, file] : m.at("files").items())
        combined += name + ":" + file.at("fnv64").get<std::string>() + ";";
    return fnv1a64_bytes(combined.data(), combined.size());
}

void ModelRegistry::save_model(const std::string& id, const ShapeModel& model) {
    const auto dir = entry_dir(id);
    nlohmann::json m = start_manifest(id, "pdm");
    m["n_vertices"] = model.n_vertices();
    m["n_components"] = model.n_components();
    m["topology_file"] = "topology.ply";

    write_f64_blob(dir / "mean.f64", model.mean().data(), model.mean().size());
    // basis stored row-major
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> basis = model.basis();
    write_f64_blob(dir / "basis.f64", basis.data(), basis.size());
    write_f64_blob(dir / "eigenvalues.f64", model.eigenvalues().data(), model.eigenvalues().size());
    write_ply(dir / "topology.ply", model.mean_mesh());
    write_landmarks(dir / "landmarks.json", model.topology().landmarks);

    add_file(m, id, "mean", "mean.f64");
    add_file(m, id, "basis", "basis.f64");
    add_file(m, id, "eigenvalues", "eigenvalues.f64");
    add_file(m, id, "topology", "topology.ply");
    add_file(m, id, "landmarks", "landmarks.json");
    finish_manifest(id, m);
}

ShapeModel ModelRegistry::load_model(const std::string& id) const {
    const nlohmann::json m = manifest(id);
    if (m.at("kind") != "pdm")
        throw io_error("registry entry '" + id + "' is a " + m.at("kind").get<std::string>() +
                       ", not a pdm");
    const auto dir = entry_dir(id);
    const long n_vertices = m.at("n_vertices").get<long>();
    const long n_components = m.at("n_components").get<long>();
    const TriMesh topo_mesh = read_ply(dir / "topology.ply");
    MeshTopology topology{static_cast<int>(n_vertices), topo_mesh.faces(),
                          read_landmarks(dir / "landmarks.json")};
    return ShapeModel(read_f64_vector(dir / "mean.f64", 3 * n_vertices),
                      read_f64_matrix(dir / "basis.f64", 3 * n_vertices, n_components),
                      read_f64_vector(dir / "eigenvalues.f64", n_components), std::move(topology));
}

void ModelRegistry::save_covariance(const std::string& id, const UniversalCovariance& cov,
                                    const TriMesh& template_mesh) {
    if (3 * template_mesh.n_vertices() != cov.matrix().rows())
        throw std::invalid_argument("save_covariance: template does not match the covariance");
    const auto dir = entry_dir(id);
    nlohmann::json m = start_manifest(id, "covariance");
    m["n_vertices"] = cov.n_vertices();
    m["template_id"] = cov.template_id();
    m["clipped_mass_ratio"] = cov.clipped_mass_ratio();
    m["provenance"] = {{"head_model_id", cov.provenance().head_model_id},
                       {"face_model_id", cov.provenance().face_model_id},
                       {"blend_config", cov.provenance().blend_config}};

    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mat = cov.matrix();
    write_f64_blob(dir / "matrix.f64", mat.data(), mat.size());
    write_ply(dir / "template.ply", template_mesh);
    write_landmarks(dir / "landmarks.json", template_mesh.landmarks());

    add_file(m, id, "matrix", "matrix.f64");
    add_file(m, id, "template", "template.ply");
    add_file(m, id, "landmarks", "landmarks.json");
    finish_manifest(id, m);
}

std::pair<UniversalCovariance, TriMesh> ModelRegistry::load_covariance(const std::string& id) const {
    const nlohmann::json m = manifest(id);
    if (m.at("kind") != "covariance")
        throw io_error("registry entry '" + id + "' is not a covariance");
    const auto dir = entry_dir(id);
    const long n = m.at("n_vertices").get<long>();
    BlendProvenance prov;
    prov.head_model_id = m.at("provenance").at("head_model_id").get<std::string>();
    prov.face_model_id = m.at("provenance").at("face_model_id").get<std::string>();
    prov.blend_config = m.at("provenance").at("blend_config").get<std::string>();
    UniversalCovariance cov(read_f64_matrix(dir / "matrix.f64", 3 * n, 3 * n),
                            m.at("template_id").get<std::string>(), std::move(prov),
                            m.at("clipped_mass_ratio").get<double>());
    const TriMesh bare = read_ply(dir / "template.ply");
    TriMesh template_mesh(bare.vertices(), bare.faces(), read_landmarks(dir / "landmarks.json"));
    return {std::move(cov), std::move(template_mesh)};
}

void ModelRegistry::save_regression_map(const std::string& id, const RegressionMap& map) {
    const auto dir = entry_dir(id);
    nlohmann::json m = start_manifest(id, "regression-map");
    m["rows"] = map.matrix.rows();
    m["cols"] = map.matrix.cols();
    m["source_model_id"] = map.source_model_id;
    m["target_model_id"] = map.target_model_id;
    m["n_r_used"] = map.n_r_used;
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mat = map.matrix;
    write_f64_blob(dir / "matrix.f64", mat.data(), mat.size());
    add_file(m, id, "matrix", "matrix.f64");
    finish_manifest(id, m);
}

RegressionMap ModelRegistry::load_regression_map(const std::string& id) const {
    const nlohmann::json m = manifest(id);
    if (m.at("kind") != "regression-map")
        throw io_error("registry entry '" + id + "' is not a regression-map");
    RegressionMap map;
    map.matrix = read_f64_matrix(entry_dir(id) / "matrix.f64", m.at("rows").get<long>(),
                                 m.at("cols").get<long>());
    map.source_model_id = m.at("source_model_id").get<std::string>();
    map.target_model_id = m.at("target_model_id").get<std::string>();
    map.n_r_used = m.at("n_r_used").get<int>();
    return map;
}

} // namespace shapefuse
