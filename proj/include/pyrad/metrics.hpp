#pragma once

#include <string>
#include <vector>

#include "pyrad/backbone.hpp"
#include "pyrad/datasets.hpp"
#include "pyrad/scorer.hpp"
#include "pyrad/tensor.hpp"

namespace pyrad {

struct RocPoint {
  float fpr = 0.f, tpr = 0.f;
};

struct ProPoint {
  float fpr = 0.f, pro = 0.f;
};

struct ProOptions {
  float fpr_limit = 0.3f;
  int steps = 200;  // quantile thresholds over the pooled score distribution
  // false: FPR pooled over all normal pixels of the test set;
  // true: mean of per-image FPRs.
  bool per_image_fpr = false;
};

// Area under the ROC curve via tie-averaged ranks (equals the Mann-Whitney
// pairwise statistic with ties counting 1/2). Labels are {0,1}; both classes
// must be present. Returned in double: the rank sums are exact integers and
// half-integers, so the quotient is good to full double precision.
double roc_auc(const std::vector<float>& scores, const std::vector<int>& labels);

// (fpr, tpr) samples from (0,0) to (1,1), one step per distinct score.
std::vector<RocPoint> roc_curve(const std::vector<float>& scores, const std::vector<int>& labels);

// roc_auc over the pooled per-pixel scores of all maps against their masks.
double pixel_roc_auc(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks);

// 8-connected components of a {0,1} mask, one {0,1} mask per component.
// Components are disjoint and their union is the input.
std::vector<Tensor> connected_components(const Tensor& mask);

// Per-region-overlap curve: for each threshold, the mean fraction of each
// ground-truth component's pixels marked anomalous, against the false
// positive rate over normal pixels. Starts at the virtual (0,0) point.
std::vector<ProPoint> pro_curve(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks,
                                const ProOptions& options = {});

// Trapezoidal integral of the PRO curve over FPR in [0, fpr_limit],
// normalized by fpr_limit and clamped to [0,1].
float pro_score(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks,
                const ProOptions& options = {});

struct EvalReport {
  std::string category;
  float image_auc = 0.f;
  float pixel_auc = 0.f;
  float pro = 0.f;
  int test_images = 0;
  int defective_images = 0;
  std::vector<RocPoint> image_roc;  // curve samples kept for plotting
  std::vector<ProPoint> pro_points;
};

// Scores every test image of the category (image label = any defect
// present) and computes all three metrics.
EvalReport evaluate_category(const NetworkHandle& teacher, const NetworkHandle& student,
                             const CategorySet& set, const PyramidConfig& config,
                             const ProOptions& pro_options = {},
                             const ScoreOptions& score_options = {}, int batch_size = 16);

// Unweighted mean across categories, reported as category "mean".
EvalReport aggregate_reports(const std::vector<EvalReport>& reports);

}  // namespace pyrad
