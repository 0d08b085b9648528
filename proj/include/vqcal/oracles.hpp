#pragma once

#include <span>
#include <vector>

#include "vqcal/quantizer.hpp"

namespace vqcal {

/// Enumerates all |C|^w concatenations of codewords and returns the index
/// sequence of the one closest to z (first in lexicographic order on ties).
IndexSequence nearest_by_enumeration(std::span<const float> z, const Codebook& codebook,
                                     const SegmentationConfig& cfg);

/// Posterior over classes for a point p on the simplex when class j emits p
/// from Dir(alpha_j) with prior pi_j. Densities are evaluated with lgamma and
/// normalised in linear space. `alphas` is |Y| x |Y| row-major.
std::vector<double> dirichlet_bayes_posterior(std::span<const double> prior, std::span<const double> alphas,
                                              std::span<const double> p);

}  // namespace vqcal
