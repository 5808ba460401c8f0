// Latent-space regression between two shape models: synthesize paired
// parameters, solve the linear map between the latent spaces, predict full
// shapes from partial ones, and rebuild a fused PCA model.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shapefuse/nicp.hpp"
#include "shapefuse/pdm.hpp"

namespace shapefuse {

/// Index-aligned latent parameter pairs, one column per sample.
struct ParamPairSet {
    Eigen::MatrixXd head_params; // n_h x n_r
    Eigen::MatrixXd face_params; // n_f x n_r
    int n_r() const { return static_cast<int>(head_params.cols()); }
};

struct RegressionMap {
    Eigen::MatrixXd matrix; // n_h x n_f
    std::string source_model_id;
    std::string target_model_id;
    int n_r_used = 0;
};

/// Draw n_r head-model samples, crop each to the face topology (non-rigid
/// registration) and project both sides. Failed registrations are resampled
/// up to retry_cap times per draw. Requires n_r >= n_f + 1.
ParamPairSet synthesize_param_pairs(const ShapeModel& head_model, const ShapeModel& face_model,
                                    const NicpConfig& face_crop_config, int n_r, std::uint64_t rng_seed,
                                    int retry_cap = 3);

/// W = C_h C_f^T (C_f C_f^T + ridge I)^-1; ridge 0 is the plain right
/// pseudo-inverse solution and errors out on rank-deficient C_f.
RegressionMap solve_regression(const ParamPairSet& pairs, double ridge = 0.0);

/// S_h = m_h + U_h W U_f^T (S_f - m_f).
TriMesh predict_full_shape(const ShapeModel& head_model, const ShapeModel& face_model,
                           const RegressionMap& map, const TriMesh& face_shape);

struct FusionConfig {
    MergeConfig merge;
    NicpConfig reregister;                  // merged mesh -> head template
    WeightScheme rereg_weight_scheme = WeightScheme::Gaussian;
    double rereg_weight_scale_fraction = 0.6; // of template bbox diagonal, anchored at the centroid
    int n_components = 0;                     // 0 = keep all (numerical rank)
    double max_skip_fraction = 0.1;
    std::string nose_tip_label = "nose_tip";
};

/// Per corpus face: predict the full head, merge the real face back in, and
/// re-register to the template; then fit a PCA model over the results.
ShapeModel build_regression_fused_model(const ShapeModel& head_model, const ShapeModel& face_model,
                                        const RegressionMap& map, const std::vector<TriMesh>& face_corpus,
                                        const FusionConfig& config, const TriMesh& head_template);

/// Project paired shapes into both models and delegate to solve_regression.
RegressionMap latent_to_latent_regression(const ShapeModel& source_model, const ShapeModel& target_model,
                                          const std::vector<std::pair<TriMesh, TriMesh>>& paired_shapes,
                                          double ridge = 0.0);

} // namespace shapefuse
