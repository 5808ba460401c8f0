// Synthetic population generator: an ellipsoid "head" with a designated face
// region and a known linear latent structure, so fusion algorithms can be
// checked against exact ground truth. Face meshes are exact vertex-subset
// crops of the head meshes.
//
// Construction: smooth orthonormal deformation modes over the head vertices,
// split into face-supported, fully-coupled and cranium-only groups. Samples
// are driven by face-latent coefficients; head-mode coefficients are
// coupling_map * face coefficients, chosen so that the face crop of a sample
// is exactly the face template plus face modes times the face coefficients.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapefuse/pdm.hpp"
#include "shapefuse/trimesh.hpp"

namespace shapefuse {

struct WorldConfig {
    int rings = 19;      // latitude rings (vertex count = rings*segments + 2)
    int segments = 42;
    Vec3 radii = Vec3(70.0, 85.0, 75.0); // mm; nose points along +z
    double face_z_fraction = 0.3;        // face region: z > fraction * radii.z
    int n_face_modes = 6;
    int n_coupled_modes = 3;
    int n_cranium_modes = 4;
    double latent_sigma = 8.0;  // std-dev of the first face coefficient, mm
    double latent_decay = 0.7;  // eigenvalue ratio between consecutive modes
    double coupling_strength = 0.6;
};

struct SyntheticWorld {
    WorldConfig config;
    std::uint64_t seed = 0;

    TriMesh head_template;
    TriMesh face_template;
    std::vector<int> face_mask; // head-vertex ids in the face region, ascending

    Eigen::MatrixXd head_modes;        // 3N x n_h, orthonormal
    Eigen::MatrixXd face_modes;        // 3N_f x n_f, orthonormal
    Eigen::VectorXd face_eigenvalues;  // latent variances, non-increasing
    Eigen::VectorXd head_eigenvalues;  // positive placeholder spectrum for head-model sampling
    Eigen::MatrixXd coupling_map;      // n_h x n_f: face coefficients -> head coefficients
    Eigen::MatrixXd head_to_face_map;  // n_f x n_h: head coefficients -> face coefficients, exact

    ShapeModel head_model() const;
    ShapeModel face_model() const;

    /// Orthonormal basis of the sampled head-displacement subspace,
    /// span(head_modes * coupling_map).
    Eigen::MatrixXd population_head_subspace() const;

    /// Exact face crop of a head instance (restriction to face_mask).
    TriMesh crop_face_exact(const TriMesh& head) const;
};

SyntheticWorld generate_world(const WorldConfig& config, std::uint64_t rng_seed);

struct Population {
    std::vector<TriMesh> heads;
    std::vector<TriMesh> faces;
    Eigen::MatrixXd face_coeffs; // n_f x n
    Eigen::MatrixXd head_coeffs; // n_h x n
    std::vector<std::string> cohorts;
};

Population sample_population(const SyntheticWorld& world, int n, std::uint64_t rng_seed);

} // namespace shapefuse
