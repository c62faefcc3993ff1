#pragma once

#include <vector>

#include "codealign/core.hpp"

namespace codealign::eval {

/// Cell-level average precision across a set of frames: every cell of every
/// frame is ranked by score, tied scores collapse into one threshold, and the
/// area under the precision-recall curve is integrated by trapezoid with the
/// recall-zero anchor at the first point's precision.
///
/// Throws DataError when the truth set contains no positive cell (AP is
/// undefined there, never silently zero).
double cell_ap(const std::vector<core::DetectionMap>& scores,
               const std::vector<std::vector<double>>& truths);

/// Single-frame convenience wrapper.
double cell_ap(const core::DetectionMap& scores, const std::vector<double>& truth);

}  // namespace codealign::eval
