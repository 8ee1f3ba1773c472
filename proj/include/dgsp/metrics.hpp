#pragma once

#include <vector>

#include "dgsp/tensor.hpp"

// Detection scoring: pixel IoU plus target-level probability of detection and
// false-alarm rate, with targets matched by connected-component centroids.

namespace dgsp {

struct Component {
  long area = 0;
  double cy = 0, cx = 0;  // centroid (row, col)
};

struct ComponentSet {
  std::vector<int> labels;  // 0 = background, components numbered from 1
  long h = 0, w = 0;
  std::vector<Component> comps;
};

ComponentSet connected_components(const Tensor<float>& mask, int connectivity = 8);

struct ScoreCounts {
  long long tp_px = 0, fp_px = 0, fn_px = 0;
  long long targets_total = 0, targets_hit = 0;
  long long total_px = 0;
  ScoreCounts& operator+=(const ScoreCounts& o) {
    tp_px += o.tp_px;
    fp_px += o.fp_px;
    fn_px += o.fn_px;
    targets_total += o.targets_total;
    targets_hit += o.targets_hit;
    total_px += o.total_px;
    return *this;
  }
};

// pred_bin and gt are binary (H,W) grids of equal shape.
ScoreCounts score_image(const Tensor<float>& pred_bin, const Tensor<float>& gt,
                        double match_radius = 3.0, int connectivity = 8);

struct EvalReport {
  double iou = 0, pd = 0, fa = 0;
  ScoreCounts counts;
};

EvalReport report_from(const ScoreCounts& counts);

// Probability maps are binarized at threshold; counts accumulate over the
// whole set before the ratios are formed.
EvalReport evaluate_dataset(const std::vector<Tensor<float>>& preds,
                            const std::vector<Tensor<float>>& gts, double threshold = 0.5,
                            double match_radius = 3.0, int connectivity = 8,
                            std::vector<ScoreCounts>* per_image = nullptr);

}  // namespace dgsp
