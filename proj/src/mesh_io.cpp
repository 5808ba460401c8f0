#include "shapefuse/mesh_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace shapefuse {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

namespace {

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw io_error("cannot open " + path.string() + " for reading");
    return in;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, mode);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    return out;
}

void fan_triangulate(const std::vector<int>& poly, std::vector<Face>& faces, const std::string& where) {
    if (poly.size() < 3) throw io_error(where + ": face with fewer than 3 vertices");
    for (size_t k = 2; k < poly.size(); ++k)
        faces.push_back({poly[0], poly[k - 1], poly[k]});
}

} // namespace

TriMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    std::vector<Vec3> verts;
    std::vector<Face> faces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p[0] >> p[1] >> p[2]))
                throw io_error(path.string() + ":" + std::to_string(line_no) + ": malformed vertex");
            verts.push_back(p);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string tok;
            while (ss >> tok) {
                // accept v, v/vt, v//vn, v/vt/vn; only the vertex index is used
                const int idx = std::stoi(tok.substr(0, tok.find('/')));
                const int n = static_cast<int>(verts.size());
                const int resolved = idx > 0 ? idx - 1 : n + idx; // negative = relative
                if (resolved < 0)
                    throw io_error(path.string() + ":" + std::to_string(line_no) + ": bad face index");
                poly.push_back(resolved);
            }
            fan_triangulate(poly, faces, path.string() + ":" + std::to_string(line_no));
        }
        // all other records (vn, vt, o, g, s, mtllib, usemtl, #) ignored
    }
    Eigen::Matrix3Xd v(3, verts.size());
    for (size_t i = 0; i < verts.size(); ++i) v.col(i) = verts[i];
    try {
        return TriMesh(std::move(v), std::move(faces));
    } catch (const std::invalid_argument& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
    std::ofstream out = open_output(path);
    out.precision(17);
    for (int i = 0; i < mesh.n_vertices(); ++i) {
        const Vec3 p = mesh.vertex(i);
        out << "v " << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    }
    for (const Face& f : mesh.faces())
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!out) throw io_error("failed writing " + path.string());
}

namespace {

struct PlyProperty {
    std::string type; // scalar type, or list count/value types joined
    std::string name;
    bool is_list = false;
    std::string count_type, value_type;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

std::size_t scalar_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32")
        return 4;
    if (t == "double" || t == "float64") return 8;
    throw io_error("PLY: unsupported type '" + t + "'");
}

double read_binary_scalar(std::istream& in, const std::string& type) {
    auto read_as = [&](auto value) -> double {
        in.read(reinterpret_cast<char*>(&value), sizeof(value));
        return static_cast<double>(value);
    };
    if (type == "char" || type == "int8") return read_as(std::int8_t{});
    if (type == "uchar" || type == "uint8") return read_as(std::uint8_t{});
    if (type == "short" || type == "int16") return read_as(std::int16_t{});
    if (type == "ushort" || type == "uint16") return read_as(std::uint16_t{});
    if (type == "int" || type == "int32") return read_as(std::int32_t{});
    if (type == "uint" || type == "uint32") return read_as(std::uint32_t{});
    if (type == "float" || type == "float32") return read_as(float{});
    return read_as(double{});
}

} // namespace

TriMesh read_ply(const std::filesystem::path& path) {
    std::ifstream in = open_input(path, std::ios::in | std::ios::binary);
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply")
        throw io_error(path.string() + ": not a PLY file");

    bool binary = false;
    std::vector<PlyElement> elements;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "comment" || tag == "obj_info") continue;
        if (tag == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii")
                binary = false;
            else if (fmt == "binary_little_endian")
                binary = true;
            else
                throw io_error(path.string() + ": unsupported PLY format '" + fmt + "'");
        } else if (tag == "element") {
            PlyElement el;
            ss >> el.name >> el.count;
            elements.push_back(el);
        } else if (tag == "property") {
            if (elements.empty()) throw io_error(path.string() + ": property before element");
            PlyProperty p;
            std::string t;
            ss >> t;
            if (t == "list") {
                p.is_list = true;
                ss >> p.count_type >> p.value_type >> p.name;
            } else {
                p.type = t;
                ss >> p.name;
            }
            elements.back().properties.push_back(p);
        } else if (tag == "end_header") {
            break;
        }
    }

    std::vector<Vec3> verts;
    std::vector<Face> faces;

    auto next_ascii = [&]() -> double {
        double v;
        if (!(in >> v)) throw io_error(path.string() + ": truncated PLY body");
        return v;
    };

    for (const PlyElement& el : elements) {
        const bool is_vertex = el.name == "vertex";
        const bool is_face = el.name == "face";
        int xi = -1, yi = -1, zi = -1, list_i = -1;
        for (size_t p = 0; p < el.properties.size(); ++p) {
            if (el.properties[p].name == "x") xi = static_cast<int>(p);
            if (el.properties[p].name == "y") yi = static_cast<int>(p);
            if (el.properties[p].name == "z") zi = static_cast<int>(p);
            if (el.properties[p].is_list) list_i = static_cast<int>(p);
        }
        if (is_vertex && (xi < 0 || yi < 0 || zi < 0))
            throw io_error(path.string() + ": vertex element lacks x/y/z");
        if (is_face && list_i < 0) throw io_error(path.string() + ": face element lacks an index list");

        for (std::size_t i = 0; i < el.count; ++i) {
            Vec3 pos = Vec3::Zero();
            std::vector<int> poly;
            for (size_t p = 0; p < el.properties.size(); ++p) {
                const PlyProperty& prop = el.properties[p];
                if (prop.is_list) {
                    const double nd = binary ? read_binary_scalar(in, prop.count_type) : next_ascii();
                    const int n = static_cast<int>(nd);
                    for (int k = 0; k < n; ++k) {
                        const double v = binary ? read_binary_scalar(in, prop.value_type) : next_ascii();
                        if (static_cast<int>(p) == list_i) poly.push_back(static_cast<int>(v));
                    }
                } else {
                    const double v = binary ? read_binary_scalar(in, prop.type) : next_ascii();
                    if (static_cast<int>(p) == xi) pos[0] = v;
                    if (static_cast<int>(p) == yi) pos[1] = v;
                    if (static_cast<int>(p) == zi) pos[2] = v;
                }
            }
            if (!in) throw io_error(path.string() + ": truncated PLY body");
            if (is_vertex) verts.push_back(pos);
            if (is_face) fan_triangulate(poly, faces, path.string());
        }
    }

    Eigen::Matrix3Xd v(3, verts.size());
    for (size_t i = 0; i < verts.size(); ++i) v.col(i) = verts[i];
    try {
        return TriMesh(std::move(v), std::move(faces));
    } catch (const std::invalid_argument& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

void write_ply(const std::filesystem::path& path, const TriMesh& mesh, PlyFormat format) {
    const bool binary = format == PlyFormat::BinaryLittleEndian;
    std::ofstream out = open_output(path, binary ? std::ios::out | std::ios::binary : std::ios::out);
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "element vertex " << mesh.n_vertices() << "\n"
        << "property double x\nproperty double y\nproperty double z\n"
        << "element face " << mesh.n_faces() << "\n"
        << "property list uchar int vertex_indices\n"
        << "end_header\n";
    if (binary) {
        for (int i = 0; i < mesh.n_vertices(); ++i) {
            const Vec3 p = mesh.vertex(i);
            out.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(double));
        }
        for (const Face& f : mesh.faces()) {
            const std::uint8_t n = 3;
            std::int32_t idx[3] = {f[0], f[1], f[2]};
            out.write(reinterpret_cast<const char*>(&n), 1);
            out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
        }
    } else {
        out.precision(17);
        for (int i = 0; i < mesh.n_vertices(); ++i) {
            const Vec3 p = mesh.vertex(i);
            out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
        }
        for (const Face& f : mesh.faces())
            out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    }
    if (!out) throw io_error("failed writing " + path.string());
}

std::filesystem::path landmark_sidecar_path(const std::filesystem::path& mesh_path) {
    std::filesystem::path p = mesh_path;
    p.replace_extension();
    p += ".landmarks.json";
    return p;
}

TriMesh load_mesh(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    TriMesh mesh;
    if (ext == ".obj")
        mesh = read_obj(path);
    else if (ext == ".ply")
        mesh = read_ply(path);
    else
        throw io_error("unsupported mesh extension '" + ext + "' (expected .obj or .ply)");
    const auto sidecar = landmark_sidecar_path(path);
    if (std::filesystem::exists(sidecar))
        mesh = TriMesh(mesh.vertices(), mesh.faces(), read_landmarks(sidecar));
    return mesh;
}

void save_mesh(const std::filesystem::path& path, const TriMesh& mesh) {
    const std::string ext = path.extension().string();
    if (ext == ".obj")
        write_obj(path, mesh);
    else if (ext == ".ply")
        write_ply(path, mesh);
    else
        throw io_error("unsupported mesh extension '" + ext + "' (expected .obj or .ply)");
    if (!mesh.landmarks().empty()) write_landmarks(landmark_sidecar_path(path), mesh.landmarks());
}

LandmarkMap read_landmarks(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error(path.string() + ": " + e.what());
    }
    LandmarkMap lm;
    for (auto it = j.begin(); it != j.end(); ++it) lm[it.key()] = it.value().get<int>();
    return lm;
}

void write_landmarks(const std::filesystem::path& path, const LandmarkMap& landmarks) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [label, idx] : landmarks) j[label] = idx;
    std::ofstream out = open_output(path);
    out << j.dump(2) << '\n';
    if (!out) throw io_error("failed writing " + path.string());
}

} // namespace shapefuse
