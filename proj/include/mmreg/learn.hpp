#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmreg/dataset.hpp"
#include "mmreg/graphreg.hpp"
#include "mmreg/metrics.hpp"
#include "mmreg/mrf.hpp"
#include "mmreg/volume.hpp"

namespace mmreg {

/// Per-(node, label) overlap counts of a binary class mask pair. Tile i holds
/// the voxels whose nearest control point is node i; for label l the source
/// tile is read at x + d_l (nearest voxel, background outside), the target
/// tile in place.
struct LossTable {
    std::size_t nodes = 0;
    std::size_t labels = 0;
    std::vector<std::int64_t> overlap;  // |A_i(l) ∩ B_i|, node-major
    std::vector<std::int64_t> denom;    // |A_i(l)| + |B_i|, node-major
    std::int64_t denom_zero = 0;        // sum_i denom(i, 0)

    std::int64_t overlap_at(std::size_t node, std::size_t label) const { return overlap[node * labels + label]; }
    std::int64_t denom_at(std::size_t node, std::size_t label) const { return denom[node * labels + label]; }
};

/// Nonzero voxels of `source` and `target` are foreground. Masks must share one lattice.
LossTable loss_table(const SegmentationMask& source, const SegmentationMask& target, const ControlGrid& grid,
                     const LabelSpace& labels);

/// 1 - Dice with tile-accumulated numerator and denominator; 0 when both masks are empty.
double dice_loss(const SegmentationMask& a, const SegmentationMask& b, const ControlGrid& grid);

/// The same ratio for a labeling (each tile moved rigidly by its node's label).
double tile_loss(const LossTable& table, const Labeling& labeling);

/// Node-separable form used inside inference: the denominator is held at its
/// zero-label value, so the loss is sum_i (denom(i,0) - 2 overlap(i,l_i)) / denom_zero.
double separable_loss(const LossTable& table, const Labeling& labeling);

/// sign * scale * node contribution to separable_loss, node-major.
std::vector<double> loss_to_unary_increments(const LossTable& table, double sign, double scale);
std::vector<double> loss_to_unary_increments(const SegmentationMask& source, const SegmentationMask& target,
                                             const ControlGrid& grid, const LabelSpace& labels, double sign,
                                             double scale);

using JointFeature = std::vector<double>;

/// One pair seen through one class: cached unary features plus the class loss table.
struct TrainingSample {
    std::string name;
    FeatureTensor features;
    LossTable loss;
};

/// Samples of one class sharing a single-level grid and label space.
struct TrainingSet {
    ControlGrid grid;
    LabelSpace labels;
    std::vector<TrainingSample> samples;
    double feature_scale = 1.0;  // Psi multiplier; prepare_training uses 1 / node count
};

/// Psi(Gamma): per-metric unary sums, then the unweighted pairwise sum, all
/// times set.feature_scale.
JointFeature joint_feature(const TrainingSet& set, const TrainingSample& sample, const Labeling& labeling);

/// w^T Psi; w holds the metric weights followed by w_p.
double linear_energy(const std::vector<double>& w, const JointFeature& psi);

/// Single-class instance with energy w^T Psi.
MrfInstance class_instance(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w);

struct TrainConfig {
    double C = 2.0;
    double alpha = 10.0;
    double eta = 50.0;
    std::vector<double> w0{0.1, 10.0, 10.0, 10.0};
    double wp0 = 0.05;
    double epsilon = 1e-3;
    double slack_tolerance = 1e-4;
    int max_outer = 20;
    int max_inner = 50;
    int qp_max_iterations = 200;
    double qp_tolerance = 1e-6;
    SolverOptions solver;
    int threads = 1;

    void validate(std::size_t metrics) const;
    std::vector<double> initial() const;  // w0 followed by wp0
};

/// argmin_G w^T Psi + eta * separable_loss.
Labeling impute_latent(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w,
                       const TrainConfig& config);
MrfInstance impute_instance(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w,
                            const TrainConfig& config);

struct Constraint {
    Labeling labeling;
    JointFeature psi;
    double loss = 0.0;  // tile_loss of the labeling
};

/// Delta - w^T psi + w^T psi_hat + offset.
double constraint_slack(const Constraint& c, const std::vector<double>& w, const JointFeature& imputed_psi,
                        double offset = 0.0);

/// argmin_G w^T Psi - separable_loss. With a working set, a stored constraint
/// replaces the solver's labeling when its slack is larger.
Constraint most_violated(const TrainingSet& set, const TrainingSample& sample, const std::vector<double>& w,
                         const TrainConfig& config, const JointFeature* imputed_psi = nullptr,
                         const std::vector<Constraint>* working_set = nullptr, double offset = 0.0);
MrfInstance most_violated_instance(const TrainingSet& set, const TrainingSample& sample,
                                   const std::vector<double>& w);

struct QpResult {
    std::vector<double> w;
    std::vector<double> slacks;
    double objective = 0.0;
    double gap = 0.0;
    int iterations = 0;
    bool converged = true;
};

/// min 1/2|w|^2 + alpha|w - w0|^2 + C/N sum xi_i subject to
///   w^T psi_hat_i + offset_i <= w^T psi - Delta + xi_i for every stored
/// constraint of sample i, xi_i >= 0 and w_p (last entry) >= 0. Primal-dual
/// interior point; stops when residuals fall below `tolerance` (relative to
/// the data scale) and complementarity below its square.
QpResult solve_qp(const std::vector<std::vector<Constraint>>& working_sets,
                  const std::vector<JointFeature>& imputed_psis, const std::vector<double>& w0, double C,
                  double alpha, const std::vector<double>& offsets = {}, int max_iterations = 200,
                  double tolerance = 1e-6);

struct CccpIteration {
    int iteration = 0;
    double objective = 0.0;
    std::vector<double> w;
    std::vector<double> slacks;
    std::vector<std::size_t> working_set_sizes;
    std::vector<double> latent_losses;  // tile_loss of each imputed labeling
    int cutting_plane_rounds = 0;
    bool qp_converged = true;
    double max_violation = 0.0;  // worst stored-constraint residual after any QP solve of this iteration
};

struct ClassResult {
    int class_id = 0;
    std::vector<double> w;  // metric weights
    double wp = 0.0;
    std::vector<CccpIteration> history;
    bool converged = true;  // false: an iteration cap was hit
    std::vector<std::string> warnings;
};

/// CCCP: impute latents, then a cutting-plane loop over fresh working sets,
/// until the outer objective drops by less than epsilon (relative). Latents
/// keep the previous labeling when it scores lower on w^T Psi + eta * tile_loss,
/// and each sample's constraints carry eta * tile_loss(latent) as offset.
ClassResult train_class(const TrainingSet& set, int class_id, const TrainConfig& config);

/// Columns in class-id order.
WeightMatrix assemble_model(std::vector<ClassResult> results, const std::vector<MetricId>& metrics);

/// Training data for every class: features are computed once per pair on a
/// single-level grid at the finest spacing with `labels_per_level` labels and
/// shared by the classes. Scales pool the zero-label values of all pairs.
struct PreparedTraining {
    std::vector<double> scales;
    std::vector<int> class_ids;
    std::vector<TrainingSet> sets;               // one per class id
    std::vector<std::vector<std::string>> skipped;  // per class: pairs lacking the class
};

PreparedTraining prepare_training(const std::vector<LoadedPair>& pairs, const std::vector<std::string>& names,
                                  const std::vector<MetricId>& metrics, const MetricSettings& settings,
                                  const PyramidConfig& pyramid, int threads = 1);

struct TrainedModel {
    Model model;
    std::vector<ClassResult> results;
    bool converged = true;
};

/// Trains every prepared class; the background column (class 0) is w0 with wp0.
TrainedModel train_model(const PreparedTraining& prepared, const std::vector<MetricId>& metrics,
                         const TrainConfig& config);

/// cccp_iter objective slack_<k>... ws_<k>... lines per class.
std::string format_training_log(const std::vector<ClassResult>& results);

}  // namespace mmreg
