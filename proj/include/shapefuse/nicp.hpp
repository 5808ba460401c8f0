// Weighted optimal-step non-rigid ICP with per-vertex affine transforms and
// graph-Laplacian stiffness. Used to crop face regions out of head meshes,
// to merge a detailed face into a head with nose-tip-distance weights, and to
// re-register merged meshes onto a clean head template.

#pragma once

#include <utility>
#include <vector>

#include "shapefuse/trimesh.hpp"

namespace shapefuse {

struct CorrespondencePrune {
    double max_distance = -1.0;       // < 0: default to 5% of the target bbox diagonal
    bool drop_target_boundary = true; // drop matches whose nearest target vertex is on a boundary
};

struct NicpConfig {
    std::vector<double> stiffness_schedule = {50.0, 25.9, 13.4, 6.96, 3.61, 1.87, 0.97, 0.5};
    std::vector<double> landmark_weight_schedule = {5.0, 2.6, 1.35, 0.70, 0.36, 0.19, 0.10, 0.05};
    std::vector<std::pair<int, Vec3>> landmark_pairs; // template vertex -> target position
    Eigen::VectorXd per_vertex_weights;               // empty = all ones; values in [0,1]
    // optional point anchors: extra data term pulling vertex i toward
    // anchor_points.col(i) with weight anchor_weights[i] (both empty or both set)
    Eigen::Matrix3Xd anchor_points;
    Eigen::VectorXd anchor_weights;
    int max_inner_iterations = 10;
    double convergence_epsilon = 1e-5; // mean vertex move, relative to target bbox diagonal
    CorrespondencePrune prune;
    double gamma = 1.0; // weighting of the translational row in the stiffness term
    bool initial_procrustes = true;
    bool procrustes_with_scale = true;
};

struct NicpIterationStats {
    int level = 0;
    int inner = 0;
    double stiffness = 0.0;
    double energy_before = 0.0; // current transforms, this iteration's correspondences
    double energy_after = 0.0;  // solved transforms, same correspondences
    int retained = 0;           // correspondences surviving pruning
    double mean_move = 0.0;
};

struct NicpResult {
    TriMesh deformed;
    Eigen::VectorXd residuals; // final closest-point distance per template vertex
    std::vector<NicpIterationStats> stats;
    // correspondence audit at the final positions, same pruning rules
    std::vector<char> final_retained;
    std::vector<int> final_target_vertex; // nearest target vertex, -1 when pruned
};

NicpResult nicp_register(const TriMesh& source_template, const TriMesh& target, const NicpConfig& config);

/// Register face_mean onto the face region of a head instance and return the
/// deformed mesh in the face topology. Initial alignment and landmark pairs
/// come from landmark labels shared by the two meshes (at least 3 required).
TriMesh crop_to_face(const TriMesh& head_instance, const TriMesh& face_mean, const NicpConfig& config);

struct MergeConfig {
    NicpConfig nicp;
    WeightScheme weight_scheme = WeightScheme::Gaussian;
    double weight_scale_fraction = 0.35; // of the head bbox diagonal
};

/// Deform a head mesh so its facial region matches the given face mesh.
/// Vertices near the nose tip are data-driven; distant vertices keep the head
/// shape through the stiffness term. The face must be pre-aligned.
TriMesh merge_face_into_head(const TriMesh& head, const TriMesh& face, const std::string& nose_tip_label,
                             const MergeConfig& config = {});

} // namespace shapefuse
