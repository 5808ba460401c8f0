#include "shapefuse/regression.hpp"

#include <iostream>

#include "shapefuse/rng.hpp"

namespace shapefuse {

ParamPairSet synthesize_param_pairs(const ShapeModel& head_model, const ShapeModel& face_model,
                                    const NicpConfig& face_crop_config, int n_r, std::uint64_t rng_seed,
                                    int retry_cap) {
    const int n_f = face_model.n_components();
    if (n_r < n_f + 1)
        throw std::invalid_argument("synthesize_param_pairs: n_r must exceed the face component count "
                                    "(need at least " + std::to_string(n_f + 1) + ")");
    const TriMesh face_mean = face_model.mean_mesh();
    ParamPairSet pairs;
    pairs.head_params.resize(head_model.n_components(), n_r);
    pairs.face_params.resize(n_f, n_r);
    for (int s = 0; s < n_r; ++s) {
        bool done = false;
        for (int attempt = 0; attempt <= retry_cap && !done; ++attempt) {
            const ShapeParams p_h = random_params(head_model, derive_seed(rng_seed, s, attempt));
            try {
                const TriMesh head_instance = sample_shape(head_model, p_h);
                const TriMesh face_crop = crop_to_face(head_instance, face_mean, face_crop_config);
                pairs.head_params.col(s) = p_h;
                pairs.face_params.col(s) = project_shape(face_model, face_crop);
                done = true;
            } catch (const numerical_error& e) {
                std::clog << "synthesize_param_pairs: draw " << s << " attempt " << attempt
                          << " failed (" << e.what() << "), resampling\n";
            }
        }
        if (!done)
            throw numerical_error("synthesize_param_pairs: draw " + std::to_string(s) +
                                  " failed after " + std::to_string(retry_cap + 1) + " attempts");
    }
    return pairs;
}

RegressionMap solve_regression(const ParamPairSet& pairs, double ridge) {
    if (pairs.head_params.cols() != pairs.face_params.cols())
        throw std::invalid_argument("solve_regression: pair sets have different sample counts");
    if (ridge < 0.0) throw std::invalid_argument("solve_regression: ridge must be non-negative");
    const Eigen::MatrixXd& ch = pairs.head_params;
    const Eigen::MatrixXd& cf = pairs.face_params;
    const int n_f = static_cast<int>(cf.rows());

    Eigen::MatrixXd gram = cf * cf.transpose();
    gram.diagonal().array() += ridge;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const double tol = 1e-12 * std::max(eig.eigenvalues().maxCoeff(), 0.0);
    if (eig.eigenvalues().minCoeff() <= tol) {
        const int rank = static_cast<int>((eig.eigenvalues().array() > tol).count());
        throw numerical_error("solve_regression: face parameter Gram matrix is singular (rank " +
                              std::to_string(rank) + " of " + std::to_string(n_f) +
                              "); add samples or a ridge term");
    }
    RegressionMap map;
    map.matrix = eig.eigenvectors() *
                 (eig.eigenvalues().cwiseInverse().asDiagonal() *
                  (eig.eigenvectors().transpose() * (cf * ch.transpose())));
    map.matrix.transposeInPlace(); // (G^-1 C_f C_h^T)^T = C_h C_f^T G^-1
    map.n_r_used = pairs.n_r();
    return map;
}

TriMesh predict_full_shape(const ShapeModel& head_model, const ShapeModel& face_model,
                           const RegressionMap& map, const TriMesh& face_shape) {
    if (!face_model.topology().matches(face_shape))
        throw std::invalid_argument("predict_full_shape: face shape is not in the face-model topology");
    if (map.matrix.rows() != head_model.n_components() || map.matrix.cols() != face_model.n_components())
        throw std::invalid_argument("predict_full_shape: regression map dimensions do not match models");
    const ShapeParams face_params = project_shape(face_model, face_shape);
    return sample_shape(head_model, map.matrix * face_params);
}

ShapeModel build_regression_fused_model(const ShapeModel& head_model, const ShapeModel& face_model,
                                        const RegressionMap& map, const std::vector<TriMesh>& face_corpus,
                                        const FusionConfig& config, const TriMesh& head_template) {
    if (!head_template.has_landmark(config.nose_tip_label))
        throw std::invalid_argument("build_regression_fused_model: template lacks the nose-tip landmark");

    NicpConfig rereg = config.reregister;
    if (rereg.per_vertex_weights.size() == 0)
        rereg.per_vertex_weights =
            distance_weights(head_template, head_template.centroid(), config.rereg_weight_scheme,
                             config.rereg_weight_scale_fraction * head_template.bbox_diagonal());

    std::vector<TriMesh> fused;
    int skipped = 0;
    for (size_t i = 0; i < face_corpus.size(); ++i) {
        try {
            const TriMesh predicted = predict_full_shape(head_model, face_model, map, face_corpus[i]);
            const TriMesh merged =
                merge_face_into_head(predicted, face_corpus[i], config.nose_tip_label, config.merge);
            NicpConfig item_cfg = rereg;
            item_cfg.landmark_pairs.clear();
            for (const auto& [label, idx] : head_template.landmarks())
                if (merged.has_landmark(label))
                    item_cfg.landmark_pairs.emplace_back(idx, merged.landmark_position(label));
            fused.push_back(nicp_register(head_template, merged, item_cfg).deformed);
        } catch (const numerical_error& e) {
            ++skipped;
            std::clog << "build_regression_fused_model: corpus item " << i << " skipped ("
                      << e.what() << ")\n";
        }
    }
    if (face_corpus.empty() ||
        static_cast<double>(skipped) > config.max_skip_fraction * static_cast<double>(face_corpus.size()))
        throw numerical_error("build_regression_fused_model: " + std::to_string(skipped) + " of " +
                              std::to_string(face_corpus.size()) + " corpus items failed");
    return fit_pdm(fused, config.n_components);
}

RegressionMap latent_to_latent_regression(const ShapeModel& source_model, const ShapeModel& target_model,
                                          const std::vector<std::pair<TriMesh, TriMesh>>& paired_shapes,
                                          double ridge) {
    const int n_pairs = static_cast<int>(paired_shapes.size());
    if (n_pairs < source_model.n_components() + 1)
        throw std::invalid_argument("latent_to_latent_regression: need more pairs than source "
                                    "components (" + std::to_string(source_model.n_components()) + ")");
    ParamPairSet pairs;
    pairs.face_params.resize(source_model.n_components(), n_pairs);
    pairs.head_params.resize(target_model.n_components(), n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        pairs.face_params.col(i) = project_shape(source_model, paired_shapes[i].first);
        pairs.head_params.col(i) = project_shape(target_model, paired_shapes[i].second);
    }
    return solve_regression(pairs, ridge);
}

} // namespace shapefuse
