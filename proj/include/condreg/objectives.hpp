#pragma once

#include "condreg/tape.hpp"
#include "condreg/task.hpp"
#include "condreg/volume.hpp"

namespace condreg {

/// Loss terms of one evaluation; total = sim + lambda_used * reg + dice_weight * dice.
struct LossReport {
  double sim = 0.0;
  double reg = 0.0;
  double dice = 0.0;
  double total = 0.0;
  double lambda_used = 0.0;
  double dice_weight = 0.0;
};

namespace objectives {

inline constexpr double kNccEpsilon = 1e-5;
inline constexpr double kDiceEpsilon = 1e-5;
inline constexpr int kDefaultNccWindow = 5;

/// 1 - mean over voxels of the squared local correlation coefficient in a
/// window^3 neighbourhood (clipped at the grid border).
Var ncc_loss(Var a, Var b, int window = kDefaultNccWindow);

/// Sum over axes of the mean (over components and valid positions) of
/// squared forward differences of the field.
Var diffusion_reg(Var field);

/// Field rescaled to [-1, 1] grid coordinates: component c times
/// 2 / (extent_c - 1). The training regularizer is taken on this.
Var normalized_field(Var field);

/// One-hot (num_classes, D, W, H) encoding of a label map.
Tensor one_hot(const LabelMap& labels);

/// 1 - mean over foreground classes of soft Dice between warped_mask
/// (num_classes channels) and the one-hot of fixed_mask.
Var dice_loss(Var warped_mask, const LabelMap& fixed_mask);

struct LossTerms {
  Var total;
  Var warped;
  LossReport report;
};

/// Full training objective for one pair. Masks are required iff
/// task.dice_weight > 0; the moving mask is warped by the field. reg is
/// diffusion_reg of normalized_field(field).
LossTerms total_loss(Var fixed, Var moving, const LabelMap* fixed_mask, const LabelMap* moving_mask, Var field,
                     const TaskDescriptor& task, int window = kDefaultNccWindow);

// Convenience evaluation on immutable grids.
double ncc_loss(const Volume& a, const Volume& b, int window = kDefaultNccWindow);
double diffusion_reg(const DisplacementField& field);

}  // namespace objectives
}  // namespace condreg
