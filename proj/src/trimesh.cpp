#include "shapefuse/trimesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shapefuse {

TriMesh::TriMesh(Eigen::Matrix3Xd vertices, std::vector<Face> faces, LandmarkMap landmarks)
    : vertices_(std::move(vertices)), faces_(std::move(faces)), landmarks_(std::move(landmarks)) {
    const int n = n_vertices();
    for (const Face& f : faces_) {
        for (int k = 0; k < 3; ++k) {
            if (f[k] < 0 || f[k] >= n)
                throw std::invalid_argument("TriMesh: face index out of range");
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw std::invalid_argument("TriMesh: degenerate face (repeated vertex index)");
    }
    for (const auto& [label, idx] : landmarks_) {
        if (idx < 0 || idx >= n)
            throw std::invalid_argument("TriMesh: landmark '" + label + "' index out of range");
    }
}

int TriMesh::landmark_index(const std::string& label) const {
    auto it = landmarks_.find(label);
    if (it == landmarks_.end())
        throw std::invalid_argument("TriMesh: no landmark named '" + label + "'");
    return it->second;
}

Eigen::VectorXd TriMesh::flatten() const {
    return Eigen::Map<const Eigen::VectorXd>(vertices_.data(), 3 * n_vertices());
}

TriMesh TriMesh::from_flat(const Eigen::VectorXd& coords, std::vector<Face> faces, LandmarkMap landmarks) {
    if (coords.size() % 3 != 0)
        throw std::invalid_argument("TriMesh::from_flat: coordinate count not divisible by 3");
    Eigen::Matrix3Xd v = Eigen::Map<const Eigen::Matrix3Xd>(coords.data(), 3, coords.size() / 3);
    return TriMesh(std::move(v), std::move(faces), std::move(landmarks));
}

TriMesh TriMesh::with_vertices(Eigen::Matrix3Xd vertices) const {
    if (vertices.cols() != vertices_.cols())
        throw std::invalid_argument("TriMesh::with_vertices: vertex count mismatch");
    return TriMesh(std::move(vertices), faces_, landmarks_);
}

Vec3 TriMesh::position(const SurfacePoint& sp) const {
    if (sp.face < 0 || sp.face >= n_faces())
        throw std::invalid_argument("TriMesh::position: invalid face index");
    const Face& f = faces_[sp.face];
    return sp.barycentric[0] * vertices_.col(f[0]) + sp.barycentric[1] * vertices_.col(f[1]) +
           sp.barycentric[2] * vertices_.col(f[2]);
}

double TriMesh::bbox_diagonal() const {
    if (n_vertices() == 0) return 0.0;
    const Vec3 lo = vertices_.rowwise().minCoeff();
    const Vec3 hi = vertices_.rowwise().maxCoeff();
    return (hi - lo).norm();
}

const std::vector<char>& TriMesh::boundary_vertices() const {
    if (!boundary_) {
        auto mask = std::make_shared<std::vector<char>>(n_vertices(), 0);
        std::map<std::pair<int, int>, int> edge_count;
        for (const Face& f : faces_) {
            for (int k = 0; k < 3; ++k) {
                int a = f[k], b = f[(k + 1) % 3];
                if (a > b) std::swap(a, b);
                ++edge_count[{a, b}];
            }
        }
        for (const auto& [edge, count] : edge_count) {
            if (count < 2) {
                (*mask)[edge.first] = 1;
                (*mask)[edge.second] = 1;
            }
        }
        boundary_ = std::move(mask);
    }
    return *boundary_;
}

SimilarityTransform::SimilarityTransform(double scale, Mat3 rotation, Vec3 translation)
    : scale_(scale), rotation_(std::move(rotation)), translation_(std::move(translation)) {
    if (!(scale_ > 0.0))
        throw std::invalid_argument("SimilarityTransform: scale must be positive");
    if ((rotation_ * rotation_.transpose() - Mat3::Identity()).norm() > 1e-9)
        throw std::invalid_argument("SimilarityTransform: rotation is not orthonormal");
    if (rotation_.determinant() < 0.0)
        throw std::invalid_argument("SimilarityTransform: rotation must be proper (det +1)");
}

Eigen::Matrix3Xd SimilarityTransform::apply(const Eigen::Matrix3Xd& pts) const {
    return (scale_ * (rotation_ * pts)).colwise() + translation_;
}

SimilarityTransform SimilarityTransform::inverse() const {
    const Mat3 rt = rotation_.transpose();
    return SimilarityTransform(1.0 / scale_, rt, -(rt * translation_) / scale_);
}

// Ericson, Real-Time Collision Detection, 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return {1.0, 0.0, 0.0};

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return {0.0, 1.0, 0.0};

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {1.0 - v, v, 0.0};
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return {0.0, 0.0, 1.0};

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {1.0 - w, 0.0, w};
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {0.0, 1.0 - w, w};
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {1.0 - v - w, v, w};
}

ClosestPointQuery::ClosestPointQuery(const TriMesh& mesh) : mesh_(std::make_shared<TriMesh>(mesh)) {
    if (mesh.n_faces() == 0)
        throw std::invalid_argument("ClosestPointQuery: mesh has no faces");
    tie_epsilon_ = 1e-12 * mesh.bbox_diagonal();
    face_order_.resize(mesh.n_faces());
    for (int i = 0; i < mesh.n_faces(); ++i) face_order_[i] = i;
    std::vector<Vec3> centroids(mesh.n_faces());
    for (int i = 0; i < mesh.n_faces(); ++i) {
        const Face& f = mesh.faces()[i];
        centroids[i] = (mesh.vertex(f[0]) + mesh.vertex(f[1]) + mesh.vertex(f[2])) / 3.0;
    }
    nodes_.reserve(2 * mesh.n_faces());
    build(0, mesh.n_faces(), centroids);
}

int ClosestPointQuery::build(int begin, int end, std::vector<Vec3>& centroids) {
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = begin; i < end; ++i) {
        const Face& f = mesh_->faces()[face_order_[i]];
        for (int k = 0; k < 3; ++k) {
            lo = lo.cwiseMin(mesh_->vertex(f[k]));
            hi = hi.cwiseMax(mesh_->vertex(f[k]));
        }
    }
    nodes_[node_id].lo = lo;
    nodes_[node_id].hi = hi;

    constexpr int kLeafSize = 8;
    if (end - begin <= kLeafSize) {
        nodes_[node_id].begin = begin;
        nodes_[node_id].end = end;
        // lowest face id first within a leaf keeps tie-breaking deterministic
        std::sort(face_order_.begin() + begin, face_order_.begin() + end);
        return node_id;
    }

    int axis;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(face_order_.begin() + begin, face_order_.begin() + mid, face_order_.begin() + end,
                     [&](int fa, int fb) { return centroids[fa][axis] < centroids[fb][axis]; });
    const int left = build(begin, mid, centroids);
    const int right = build(mid, end, centroids);
    nodes_[node_id].left = left;
    nodes_[node_id].right = right;
    return node_id;
}

double ClosestPointQuery::box_distance2(const Node& n, const Vec3& q) const {
    const Vec3 d = (n.lo - q).cwiseMax(0.0).cwiseMax(q - n.hi);
    return d.squaredNorm();
}

std::pair<SurfacePoint, double> ClosestPointQuery::closest(const Vec3& query) const {
    double chosen_d = std::numeric_limits<double>::infinity();
    int chosen_face = -1;
    Vec3 chosen_bary = Vec3::Zero();
    const double eps = tie_epsilon_;

    // faces within eps of the minimum count as ties; lowest face index wins
    auto consider = [&](int face_id) {
        const Face& f = mesh_->faces()[face_id];
        const Vec3 bary =
            closest_point_on_triangle(query, mesh_->vertex(f[0]), mesh_->vertex(f[1]), mesh_->vertex(f[2]));
        const Vec3 pt = bary[0] * mesh_->vertex(f[0]) + bary[1] * mesh_->vertex(f[1]) +
                        bary[2] * mesh_->vertex(f[2]);
        const double d = (pt - query).norm();
        if (chosen_face < 0 || d < chosen_d - eps || (d <= chosen_d + eps && face_id < chosen_face)) {
            chosen_face = face_id;
            chosen_d = d;
            chosen_bary = bary;
        }
    };

    std::vector<int> stack;
    stack.reserve(64);
    stack.push_back(0);
    while (!stack.empty()) {
        const int node_id = stack.back();
        stack.pop_back();
        const Node& node = nodes_[node_id];
        if (std::sqrt(box_distance2(node, query)) > chosen_d + eps) continue;
        if (node.left < 0) {
            for (int i = node.begin; i < node.end; ++i) consider(face_order_[i]);
        } else {
            // push far child first so the near one is popped first
            if (box_distance2(nodes_[node.left], query) <= box_distance2(nodes_[node.right], query)) {
                stack.push_back(node.right);
                stack.push_back(node.left);
            } else {
                stack.push_back(node.left);
                stack.push_back(node.right);
            }
        }
    }
    return {SurfacePoint{chosen_face, chosen_bary}, chosen_d};
}

std::pair<SurfacePoint, double> closest_point(const TriMesh& mesh, const Vec3& query) {
    return ClosestPointQuery(mesh).closest(query);
}

int nearest_vertex(const TriMesh& mesh, const SurfacePoint& sp) {
    if (sp.face < 0 || sp.face >= mesh.n_faces())
        throw std::invalid_argument("nearest_vertex: invalid face index");
    const Face& f = mesh.faces()[sp.face];
    const Vec3 p = mesh.position(sp);
    int best = f[0];
    double best_d = (mesh.vertex(f[0]) - p).squaredNorm();
    for (int k = 1; k < 3; ++k) {
        const double d = (mesh.vertex(f[k]) - p).squaredNorm();
        if (d < best_d || (d == best_d && f[k] < best)) {
            best_d = d;
            best = f[k];
        }
    }
    return best;
}

SurfacePoint barycentric_embed(const ClosestPointQuery& query_index, const Vec3& query, double cap_fraction) {
    const auto [sp, dist] = query_index.closest(query);
    const double cap = cap_fraction * query_index.mesh().bbox_diagonal();
    if (dist > cap)
        throw numerical_error("barycentric_embed: query is " + std::to_string(dist) +
                              " from the surface, beyond the cap " + std::to_string(cap) +
                              " (bad registration upstream?)");
    return sp;
}

SurfacePoint barycentric_embed(const TriMesh& mesh, const Vec3& query, double cap_fraction) {
    return barycentric_embed(ClosestPointQuery(mesh), query, cap_fraction);
}

SimilarityTransform procrustes_align(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target,
                                     bool with_scale) {
    const auto n = source.cols();
    if (n != target.cols())
        throw std::invalid_argument("procrustes_align: point counts differ");
    if (n < 3)
        throw std::invalid_argument("procrustes_align: need at least 3 point pairs");

    const Vec3 mu_s = source.rowwise().mean();
    const Vec3 mu_t = target.rowwise().mean();
    const Eigen::Matrix3Xd cs = source.colwise() - mu_s;
    const Eigen::Matrix3Xd ct = target.colwise() - mu_t;

    const double var_s = cs.squaredNorm() / static_cast<double>(n);
    if (var_s <= 0.0)
        throw numerical_error("procrustes_align: source points are coincident");

    const Mat3 sigma = ct * cs.transpose() / static_cast<double>(n);
    Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 d = svd.singularValues();
    if (d[1] <= 1e-12 * std::max(d[0], 1e-300))
        throw numerical_error("procrustes_align: degenerate (collinear) configuration");

    Vec3 s = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s[2] = -1.0;
    const Mat3 rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    const double scale = with_scale ? d.dot(s) / var_s : 1.0;
    const Vec3 translation = mu_t - scale * (rotation * mu_s);
    return SimilarityTransform(scale, rotation, translation);
}

WeightScheme weight_scheme_from_string(const std::string& name) {
    if (name == "inverse-linear") return WeightScheme::InverseLinear;
    if (name == "gaussian") return WeightScheme::Gaussian;
    throw std::invalid_argument("unknown weight scheme '" + name + "'");
}

std::string to_string(WeightScheme scheme) {
    return scheme == WeightScheme::InverseLinear ? "inverse-linear" : "gaussian";
}

Eigen::VectorXd distance_weights(const TriMesh& mesh, const Vec3& anchor, WeightScheme scheme,
                                 double scale) {
    if (!(scale > 0.0))
        throw std::invalid_argument("distance_weights: scale must be positive");
    Eigen::VectorXd w(mesh.n_vertices());
    for (int i = 0; i < mesh.n_vertices(); ++i) {
        const double d = (mesh.vertex(i) - anchor).norm();
        w[i] = scheme == WeightScheme::InverseLinear ? std::max(0.0, 1.0 - d / scale)
                                                     : std::exp(-0.5 * d * d / (scale * scale));
    }
    return w;
}

} // namespace shapefuse
