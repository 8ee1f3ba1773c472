#include "dgsp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "dgsp/common.hpp"

namespace dgsp {

ComponentSet connected_components(const Tensor<float>& mask, int connectivity) {
  if (mask.ndim() != 2) throw ShapeError("connected_components expects a 2-D mask");
  if (connectivity != 4 && connectivity != 8)
    throw ConfigError("connectivity must be 4 or 8");
  const long h = mask.dim(0), w = mask.dim(1);
  ComponentSet out;
  out.h = h;
  out.w = w;
  out.labels.assign(static_cast<size_t>(h * w), 0);
  std::vector<long> stack;
  int next = 0;
  for (long start = 0; start < h * w; ++start) {
    if (mask[start] == 0.0f || out.labels[start] != 0) continue;
    ++next;
    Component comp;
    stack.clear();
    stack.push_back(start);
    out.labels[start] = next;
    while (!stack.empty()) {
      const long p = stack.back();
      stack.pop_back();
      const long y = p / w, x = p % w;
      ++comp.area;
      comp.cy += static_cast<double>(y);
      comp.cx += static_cast<double>(x);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (connectivity == 4 && dy != 0 && dx != 0) continue;
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const long q = ny * w + nx;
          if (mask[q] != 0.0f && out.labels[q] == 0) {
            out.labels[q] = next;
            stack.push_back(q);
          }
        }
    }
    comp.cy /= static_cast<double>(comp.area);
    comp.cx /= static_cast<double>(comp.area);
    out.comps.push_back(comp);
  }
  return out;
}

ScoreCounts score_image(const Tensor<float>& pred_bin, const Tensor<float>& gt,
                        double match_radius, int connectivity) {
  if (!pred_bin.same_shape(gt))
    throw ShapeError("score_image shapes disagree: " + shape_str(pred_bin.shape()) + " vs " +
                     shape_str(gt.shape()));
  ComponentSet pc = connected_components(pred_bin, connectivity);
  ComponentSet gc = connected_components(gt, connectivity);
  ScoreCounts c;
  c.total_px = pred_bin.numel();
  c.targets_total = static_cast<long long>(gc.comps.size());
  for (long i = 0; i < pred_bin.numel(); ++i) {
    const bool p = pred_bin[i] != 0.0f, g = gt[i] != 0.0f;
    if (p && g) ++c.tp_px;
    if (!p && g) ++c.fn_px;
  }
  // Greedy nearest-first matching; each side is consumed at most once. Ties
  // break by component index so the result never depends on sort internals.
  std::vector<std::tuple<double, size_t, size_t>> cand;
  for (size_t gi = 0; gi < gc.comps.size(); ++gi)
    for (size_t pi = 0; pi < pc.comps.size(); ++pi) {
      const double dy = gc.comps[gi].cy - pc.comps[pi].cy;
      const double dx = gc.comps[gi].cx - pc.comps[pi].cx;
      const double d = std::sqrt(dy * dy + dx * dx);
      if (d <= match_radius) cand.emplace_back(d, gi, pi);
    }
  std::sort(cand.begin(), cand.end());
  std::vector<bool> g_used(gc.comps.size(), false), p_used(pc.comps.size(), false);
  for (const auto& [d, gi, pi] : cand) {
    (void)d;
    if (g_used[gi] || p_used[pi]) continue;
    g_used[gi] = true;
    p_used[pi] = true;
    ++c.targets_hit;
  }
  for (size_t pi = 0; pi < pc.comps.size(); ++pi)
    if (!p_used[pi]) c.fp_px += pc.comps[pi].area;
  return c;
}

EvalReport report_from(const ScoreCounts& counts) {
  EvalReport r;
  r.counts = counts;
  const long long denom = counts.tp_px + counts.fp_px + counts.fn_px;
  r.iou = denom > 0 ? static_cast<double>(counts.tp_px) / static_cast<double>(denom) : 1.0;
  r.pd = counts.targets_total > 0 ? static_cast<double>(counts.targets_hit) /
                                        static_cast<double>(counts.targets_total)
                                  : 1.0;
  r.fa = counts.total_px > 0
             ? static_cast<double>(counts.fp_px) / static_cast<double>(counts.total_px)
             : 0.0;
  return r;
}

EvalReport evaluate_dataset(const std::vector<Tensor<float>>& preds,
                            const std::vector<Tensor<float>>& gts, double threshold,
                            double match_radius, int connectivity,
                            std::vector<ScoreCounts>* per_image) {
  if (preds.size() != gts.size())
    throw DataError("evaluate_dataset: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(gts.size()) + " ground truths");
  if (per_image) per_image->clear();
  ScoreCounts total;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].same_shape(gts[i]))
      throw DataError("evaluate_dataset: shape mismatch at index " + std::to_string(i));
    Tensor<float> bin(preds[i].shape());
    for (long j = 0; j < bin.numel(); ++j) bin[j] = preds[i][j] > threshold ? 1.0f : 0.0f;
    Tensor<float> gtb(gts[i].shape());
    for (long j = 0; j < gtb.numel(); ++j) gtb[j] = gts[i][j] > 0.5f ? 1.0f : 0.0f;
    ScoreCounts c = score_image(bin, gtb, match_radius, connectivity);
    if (per_image) per_image->push_back(c);
    total += c;
  }
  return report_from(total);
}

}  // namespace dgsp
