// Triangle-mesh core: mesh container, surface queries, similarity alignment
// and distance-based vertex weighting. All types here are immutable after
// construction and safe to query concurrently.

#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "shapefuse/errors.hpp"

namespace shapefuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<int, 3>;
using LandmarkMap = std::map<std::string, int>;

/// A point on a mesh surface: face index plus barycentric coordinates
/// (non-negative, summing to 1).
struct SurfacePoint {
    int face = -1;
    Vec3 barycentric = Vec3::Zero();
};

/// Triangulated surface with named landmark vertices. Vertices are stored
/// column-wise; the flattened 3N vector uses the interleaved ordering
/// x1,y1,z1,...,xN,yN,zN, which is the ordering used by every matrix in
/// this codebase. Units are nominally millimetres.
class TriMesh {
public:
    TriMesh() = default;
    TriMesh(Eigen::Matrix3Xd vertices, std::vector<Face> faces, LandmarkMap landmarks = {});

    int n_vertices() const { return static_cast<int>(vertices_.cols()); }
    int n_faces() const { return static_cast<int>(faces_.size()); }
    const Eigen::Matrix3Xd& vertices() const { return vertices_; }
    Vec3 vertex(int i) const { return vertices_.col(i); }
    const std::vector<Face>& faces() const { return faces_; }
    const LandmarkMap& landmarks() const { return landmarks_; }

    bool has_landmark(const std::string& label) const { return landmarks_.count(label) > 0; }
    int landmark_index(const std::string& label) const;
    Vec3 landmark_position(const std::string& label) const { return vertices_.col(landmark_index(label)); }

    /// Interleaved 3N coordinate vector (a view copy).
    Eigen::VectorXd flatten() const;
    static TriMesh from_flat(const Eigen::VectorXd& coords, std::vector<Face> faces, LandmarkMap landmarks = {});

    /// Same topology and landmarks, new vertex positions.
    TriMesh with_vertices(Eigen::Matrix3Xd vertices) const;

    Vec3 position(const SurfacePoint& sp) const;
    Vec3 centroid() const { return vertices_.rowwise().mean(); }
    double bbox_diagonal() const;

    /// True for vertices incident to an edge shared by fewer than two faces.
    const std::vector<char>& boundary_vertices() const;

private:
    Eigen::Matrix3Xd vertices_;
    std::vector<Face> faces_;
    LandmarkMap landmarks_;
    // lazily built, value-semantics preserved via shared ownership
    mutable std::shared_ptr<const std::vector<char>> boundary_;
};

/// Scale * rotation + translation. Rotation is proper (det +1).
class SimilarityTransform {
public:
    SimilarityTransform() = default;
    SimilarityTransform(double scale, Mat3 rotation, Vec3 translation);

    double scale() const { return scale_; }
    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }

    Vec3 apply(const Vec3& p) const { return scale_ * (rotation_ * p) + translation_; }
    Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& pts) const;
    TriMesh apply(const TriMesh& mesh) const { return mesh.with_vertices(apply(mesh.vertices())); }
    SimilarityTransform inverse() const;

private:
    double scale_ = 1.0;
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
};

/// Closest point on a single triangle (v0,v1,v2); returns the point's
/// barycentric coordinates with respect to the triangle.
Vec3 closest_point_on_triangle(const Vec3& query, const Vec3& v0, const Vec3& v1, const Vec3& v2);

/// Accelerated closest-point queries against a fixed mesh (AABB tree).
/// Equidistant faces are resolved to the lowest face index.
class ClosestPointQuery {
public:
    explicit ClosestPointQuery(const TriMesh& mesh);

    std::pair<SurfacePoint, double> closest(const Vec3& query) const;
    const TriMesh& mesh() const { return *mesh_; }

private:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1; // children, or leaf range below
        int begin = 0, end = 0;    // face-id range [begin, end) for leaves
    };
    double box_distance2(const Node& n, const Vec3& q) const;
    int build(int begin, int end, std::vector<Vec3>& centroids);

    std::shared_ptr<const TriMesh> mesh_;
    std::vector<Node> nodes_;
    std::vector<int> face_order_; // faces sorted into leaves, values are face ids
    double tie_epsilon_ = 0.0;
};

std::pair<SurfacePoint, double> closest_point(const TriMesh& mesh, const Vec3& query);

/// Nearest vertex of the face containing the surface point (lowest index on ties).
int nearest_vertex(const TriMesh& mesh, const SurfacePoint& sp);

/// Barycentric embedding of a near-surface point; rejects queries farther
/// than cap_fraction * bbox diagonal from the surface.
SurfacePoint barycentric_embed(const TriMesh& mesh, const Vec3& query, double cap_fraction = 0.05);
SurfacePoint barycentric_embed(const ClosestPointQuery& query_index, const Vec3& query,
                               double cap_fraction = 0.05);

/// Least-squares similarity (or rigid, with_scale=false) alignment of
/// source onto target. Requires >= 3 non-collinear point pairs.
SimilarityTransform procrustes_align(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target,
                                     bool with_scale = true);

enum class WeightScheme { InverseLinear, Gaussian };

WeightScheme weight_scheme_from_string(const std::string& name);
std::string to_string(WeightScheme scheme);

/// Per-vertex weights in [0,1], non-increasing with distance from anchor.
/// InverseLinear: max(0, 1 - d/scale). Gaussian: exp(-d^2 / (2 scale^2)).
Eigen::VectorXd distance_weights(const TriMesh& mesh, const Vec3& anchor, WeightScheme scheme,
                                 double scale);

} // namespace shapefuse
