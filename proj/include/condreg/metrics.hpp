#pragma once

#include <map>
#include <optional>
#include <string>

#include "condreg/volume.hpp"
#include "json.hpp"

namespace condreg::metrics {

/// 2|A∩B| / (|A| + |B|) for one label; 1 when both are empty.
double dice_score(const LabelMap& a, const LabelMap& b, int label);

/// det(I + grad u) with central differences inside and one-sided differences
/// on the border, in voxel units.
Volume jacobian_det(const DisplacementField& field);

/// Population standard deviation over interior voxels of log(max(det, 1e-6)).
double sdlogj(const DisplacementField& field);

/// Percentage of interior voxels with det <= 0.
double folding_fraction(const DisplacementField& field);

/// Voxel count of the interior (every index in [1, n-2]).
std::size_t interior_voxels(Dims dims);

/// Mean Euclidean norm of (u - u_gt) over voxels with a nonzero label in
/// `mask`, or over all voxels when no mask is given.
double field_error(const DisplacementField& field, const DisplacementField& truth, const LabelMap* mask = nullptr);

/// Nearest-neighbour resampling of labels at x + u(x), clamped to the grid.
LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field);

/// Overlap and field-quality diagnostics for one registered pair.
struct EvalReport {
  std::map<int, double> dice;  // foreground classes present in the fixed mask
  double mean_dice = 0.0;
  double sdlogj = 0.0;
  double folding_pct = 0.0;
  std::size_t interior_voxels = 0;
  std::optional<double> tre;
};

/// Warps the moving mask by the field and scores it against the fixed mask.
/// Either mask may be absent, in which case only field statistics are filled.
EvalReport evaluate(const DisplacementField& field, const LabelMap* fixed_mask, const LabelMap* moving_mask,
                    const DisplacementField* truth = nullptr);

nlohmann::json to_json(const EvalReport& report);

}  // namespace condreg::metrics
