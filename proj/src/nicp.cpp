#include "shapefuse/nicp.hpp"

#include <cmath>
#include <set>

#include <Eigen/Sparse>

namespace shapefuse {

namespace {

using SparseMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

struct Correspondences {
    Eigen::Matrix3Xd targets;    // per template vertex
    Eigen::VectorXd weights;     // per-vertex weight, 0 when pruned
    Eigen::VectorXd distances;   // closest-point distance per vertex
    int retained = 0;
};

std::vector<std::pair<int, int>> template_edges(const TriMesh& mesh) {
    std::set<std::pair<int, int>> edges;
    for (const Face& f : mesh.faces()) {
        for (int k = 0; k < 3; ++k) {
            int a = f[k], b = f[(k + 1) % 3];
            if (a > b) std::swap(a, b);
            edges.insert({a, b});
        }
    }
    return {edges.begin(), edges.end()};
}

// Deformed position of vertex i under the stacked 4N x 3 transform matrix.
inline Vec3 deformed_vertex(const Eigen::MatrixXd& transforms, const Vec3& v, int i) {
    Eigen::RowVector4d d(v.x(), v.y(), v.z(), 1.0);
    return (d * transforms.middleRows<4>(4 * i)).transpose();
}

Correspondences find_correspondences(const Eigen::Matrix3Xd& deformed, const ClosestPointQuery& target_cp,
                                     const std::vector<char>& target_boundary,
                                     const Eigen::VectorXd& vertex_weights, double max_distance,
                                     bool drop_boundary) {
    const int n = static_cast<int>(deformed.cols());
    Correspondences c;
    c.targets.resize(3, n);
    c.weights.resize(n);
    c.distances.resize(n);
    for (int i = 0; i < n; ++i) {
        const auto [sp, dist] = target_cp.closest(deformed.col(i));
        c.targets.col(i) = target_cp.mesh().position(sp);
        c.distances[i] = dist;
        double w = vertex_weights[i];
        if (dist > max_distance) w = 0.0;
        if (drop_boundary && target_boundary[nearest_vertex(target_cp.mesh(), sp)]) w = 0.0;
        c.weights[i] = w;
        if (w > 0.0) ++c.retained;
    }
    return c;
}

double nicp_energy(const Eigen::MatrixXd& transforms, const Eigen::Matrix3Xd& verts,
                   const std::vector<std::pair<int, int>>& edges, const Correspondences& corr,
                   double stiffness, double gamma,
                   const std::vector<std::pair<int, Vec3>>& landmark_pairs, double landmark_weight,
                   const NicpConfig& config) {
    double data = 0.0;
    for (int i = 0; i < verts.cols(); ++i) {
        if (corr.weights[i] <= 0.0) continue;
        data += corr.weights[i] * (deformed_vertex(transforms, verts.col(i), i) - corr.targets.col(i)).squaredNorm();
    }
    for (int i = 0; i < config.anchor_weights.size(); ++i) {
        if (config.anchor_weights[i] <= 0.0) continue;
        data += config.anchor_weights[i] *
                (deformed_vertex(transforms, verts.col(i), i) - config.anchor_points.col(i)).squaredNorm();
    }
    double smooth = 0.0;
    for (const auto& [a, b] : edges) {
        const Eigen::Matrix<double, 4, 3> diff =
            transforms.middleRows<4>(4 * a) - transforms.middleRows<4>(4 * b);
        smooth += diff.topRows<3>().squaredNorm() + gamma * gamma * diff.row(3).squaredNorm();
    }
    double lm = 0.0;
    if (landmark_weight > 0.0) {
        for (const auto& [idx, pos] : landmark_pairs)
            lm += (deformed_vertex(transforms, verts.col(idx), idx) - pos).squaredNorm();
    }
    return data + stiffness * smooth + landmark_weight * lm;
}

void validate(const NicpConfig& config, const TriMesh& source, const TriMesh& target) {
    if (source.n_vertices() == 0 || source.n_faces() == 0 || target.n_faces() == 0)
        throw std::invalid_argument("nicp_register: empty template or target");
    if (config.stiffness_schedule.empty())
        throw std::invalid_argument("nicp_register: empty stiffness schedule");
    for (size_t k = 0; k < config.stiffness_schedule.size(); ++k) {
        if (!(config.stiffness_schedule[k] > 0.0))
            throw std::invalid_argument("nicp_register: stiffness must be positive");
        if (k > 0 && config.stiffness_schedule[k] >= config.stiffness_schedule[k - 1])
            throw std::invalid_argument("nicp_register: stiffness schedule must be strictly decreasing");
    }
    if (config.landmark_weight_schedule.size() != config.stiffness_schedule.size())
        throw std::invalid_argument("nicp_register: landmark weight schedule length mismatch");
    for (double w : config.landmark_weight_schedule)
        if (w < 0.0) throw std::invalid_argument("nicp_register: landmark weights must be non-negative");
    if (config.per_vertex_weights.size() != 0 && config.per_vertex_weights.size() != source.n_vertices())
        throw std::invalid_argument("nicp_register: per_vertex_weights length mismatch");
    for (int i = 0; i < config.per_vertex_weights.size(); ++i)
        if (config.per_vertex_weights[i] < 0.0 || config.per_vertex_weights[i] > 1.0)
            throw std::invalid_argument("nicp_register: per_vertex_weights must lie in [0,1]");
    for (const auto& [idx, pos] : config.landmark_pairs)
        if (idx < 0 || idx >= source.n_vertices())
            throw std::invalid_argument("nicp_register: landmark vertex index out of range");
    if (config.anchor_weights.size() != config.anchor_points.cols())
        throw std::invalid_argument("nicp_register: anchor points/weights size mismatch");
    if (config.anchor_weights.size() != 0 && config.anchor_weights.size() != source.n_vertices())
        throw std::invalid_argument("nicp_register: anchors must cover every template vertex");
    if (config.anchor_weights.size() != 0 && config.anchor_weights.minCoeff() < 0.0)
        throw std::invalid_argument("nicp_register: anchor weights must be non-negative");
    if (config.max_inner_iterations < 1)
        throw std::invalid_argument("nicp_register: max_inner_iterations must be >= 1");
}

} // namespace

NicpResult nicp_register(const TriMesh& source_template, const TriMesh& target, const NicpConfig& config) {
    validate(config, source_template, target);

    // initial similarity alignment from the landmark pairs
    Eigen::Matrix3Xd verts = source_template.vertices();
    if (config.initial_procrustes && config.landmark_pairs.size() >= 3) {
        Eigen::Matrix3Xd src(3, config.landmark_pairs.size()), dst(3, config.landmark_pairs.size());
        for (size_t k = 0; k < config.landmark_pairs.size(); ++k) {
            src.col(k) = verts.col(config.landmark_pairs[k].first);
            dst.col(k) = config.landmark_pairs[k].second;
        }
        verts = procrustes_align(src, dst, config.procrustes_with_scale).apply(verts);
    }

    const int n = source_template.n_vertices();
    const auto edges = template_edges(source_template);
    const ClosestPointQuery target_cp(target);
    const std::vector<char>& target_boundary = target.boundary_vertices();
    const double bbox = target.bbox_diagonal();
    const double max_distance = config.prune.max_distance >= 0.0 ? config.prune.max_distance : 0.05 * bbox;
    const Eigen::VectorXd vertex_weights = config.per_vertex_weights.size() == n
                                               ? config.per_vertex_weights
                                               : Eigen::VectorXd::Ones(n);

    // identity per-vertex affine transforms, stacked 4N x 3
    Eigen::MatrixXd transforms(4 * n, 3);
    for (int i = 0; i < n; ++i) {
        transforms.middleRows<4>(4 * i).topRows<3>() = Mat3::Identity();
        transforms.middleRows<4>(4 * i).row(3).setZero();
    }
    const double gamma2 = config.gamma * config.gamma;

    NicpResult result;
    Correspondences corr;
    Eigen::SimplicialLDLT<SparseMat> solver;
    bool pattern_analyzed = false;

    for (size_t level = 0; level < config.stiffness_schedule.size(); ++level) {
        const double alpha = config.stiffness_schedule[level];
        const double beta = config.landmark_weight_schedule[level];
        for (int inner = 0; inner < config.max_inner_iterations; ++inner) {
            Eigen::Matrix3Xd deformed(3, n);
            for (int i = 0; i < n; ++i) deformed.col(i) = deformed_vertex(transforms, verts.col(i), i);
            corr = find_correspondences(deformed, target_cp, target_boundary, vertex_weights,
                                        max_distance, config.prune.drop_target_boundary);
            const bool anchors_active =
                config.anchor_weights.size() != 0 && config.anchor_weights.maxCoeff() > 0.0;
            if (corr.retained == 0 && (beta <= 0.0 || config.landmark_pairs.empty()) && !anchors_active)
                throw numerical_error("nicp_register: all correspondences pruned and no landmarks active");

            const double energy_before = nicp_energy(transforms, verts, edges, corr, alpha, config.gamma,
                                                     config.landmark_pairs, beta, config);

            // assemble normal equations: (stiffness + data + landmarks) X = rhs
            std::vector<Triplet> triplets;
            triplets.reserve(16 * edges.size() + 16 * n);
            Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(4 * n, 3);

            for (const auto& [a, b] : edges) {
                for (int r = 0; r < 4; ++r) {
                    const double g2 = r < 3 ? 1.0 : gamma2;
                    triplets.emplace_back(4 * a + r, 4 * a + r, alpha * g2);
                    triplets.emplace_back(4 * b + r, 4 * b + r, alpha * g2);
                    triplets.emplace_back(4 * a + r, 4 * b + r, -alpha * g2);
                    triplets.emplace_back(4 * b + r, 4 * a + r, -alpha * g2);
                }
            }
            auto add_data_block = [&](int i, double w, const Vec3& u) {
                const Eigen::Vector4d d(verts(0, i), verts(1, i), verts(2, i), 1.0);
                for (int r = 0; r < 4; ++r)
                    for (int c = 0; c < 4; ++c)
                        triplets.emplace_back(4 * i + r, 4 * i + c, w * d[r] * d[c]);
                rhs.middleRows<4>(4 * i) += w * d * u.transpose();
            };
            for (int i = 0; i < n; ++i)
                if (corr.weights[i] > 0.0) add_data_block(i, corr.weights[i], corr.targets.col(i));
            for (int i = 0; i < config.anchor_weights.size(); ++i)
                if (config.anchor_weights[i] > 0.0)
                    add_data_block(i, config.anchor_weights[i], config.anchor_points.col(i));
            if (beta > 0.0)
                for (const auto& [idx, pos] : config.landmark_pairs) add_data_block(idx, beta, pos);

            SparseMat system(4 * n, 4 * n);
            system.setFromTriplets(triplets.begin(), triplets.end());
            if (!pattern_analyzed) {
                solver.analyzePattern(system);
                pattern_analyzed = true;
            }
            solver.factorize(system);
            if (solver.info() != Eigen::Success)
                throw numerical_error("nicp_register: singular normal-equation system "
                                      "(over-pruned correspondences?)");
            const Eigen::MatrixXd solution = solver.solve(rhs);
            if (!solution.allFinite())
                throw numerical_error("nicp_register: normal-equation solve produced non-finite values");

            const double energy_after = nicp_energy(solution, verts, edges, corr, alpha, config.gamma,
                                                    config.landmark_pairs, beta, config);

            double move = 0.0;
            for (int i = 0; i < n; ++i)
                move += (deformed_vertex(solution, verts.col(i), i) - deformed.col(i)).norm();
            move /= n;

            transforms = solution;
            result.stats.push_back({static_cast<int>(level), inner, alpha, energy_before, energy_after,
                                    corr.retained, move});
            if (move < config.convergence_epsilon * bbox) break;
        }
    }

    Eigen::Matrix3Xd final_verts(3, n);
    for (int i = 0; i < n; ++i) final_verts.col(i) = deformed_vertex(transforms, verts.col(i), i);
    result.residuals.resize(n);
    result.final_retained.assign(n, 0);
    result.final_target_vertex.assign(n, -1);
    for (int i = 0; i < n; ++i) {
        const auto [sp, dist] = target_cp.closest(final_verts.col(i));
        result.residuals[i] = dist;
        const int tv = nearest_vertex(target, sp);
        const bool keep = vertex_weights[i] > 0.0 && dist <= max_distance &&
                          !(config.prune.drop_target_boundary && target_boundary[tv]);
        result.final_retained[i] = keep ? 1 : 0;
        if (keep) result.final_target_vertex[i] = tv;
    }
    result.deformed = source_template.with_vertices(std::move(final_verts));
    return result;
}

TriMesh crop_to_face(const TriMesh& head_instance, const TriMesh& face_mean, const NicpConfig& config) {
    std::vector<std::pair<int, Vec3>> pairs;
    for (const auto& [label, idx] : face_mean.landmarks())
        if (head_instance.has_landmark(label))
            pairs.emplace_back(idx, head_instance.landmark_position(label));
    if (pairs.size() < 3)
        throw std::invalid_argument("crop_to_face: need at least 3 shared landmark labels for the "
                                    "initial alignment");
    NicpConfig cfg = config;
    cfg.landmark_pairs = std::move(pairs);
    cfg.initial_procrustes = true;
    return nicp_register(face_mean, head_instance, cfg).deformed;
}

TriMesh merge_face_into_head(const TriMesh& head, const TriMesh& face, const std::string& nose_tip_label,
                             const MergeConfig& config) {
    if (!head.has_landmark(nose_tip_label) || !face.has_landmark(nose_tip_label))
        throw std::invalid_argument("merge_face_into_head: both meshes must carry the '" +
                                    nose_tip_label + "' landmark");
    NicpConfig cfg = config.nicp;
    if (cfg.per_vertex_weights.size() == 0)
        cfg.per_vertex_weights = distance_weights(head, head.landmark_position(nose_tip_label),
                                                  config.weight_scheme,
                                                  config.weight_scale_fraction * head.bbox_diagonal());
    // low-weight vertices stay anchored to the head's own geometry; the face
    // surface only drives the high-weight region around the nose
    cfg.anchor_points = head.vertices();
    cfg.anchor_weights = (1.0 - cfg.per_vertex_weights.array()).max(0.0);
    cfg.landmark_pairs.clear();
    for (const auto& [label, idx] : head.landmarks())
        if (face.has_landmark(label)) cfg.landmark_pairs.emplace_back(idx, face.landmark_position(label));
    cfg.initial_procrustes = false; // the face is pre-aligned into the head frame
    return nicp_register(head, face, cfg).deformed;
}

} // namespace shapefuse
