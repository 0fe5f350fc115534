#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ivgd/diffusion.hpp"

namespace ivgd {

struct InversionOptions {
    std::size_t max_iters = 20;  ///< m, shared by both loops
    double tol = 1e-6;           ///< max-norm gap between successive iterates
};

/// Outcome of one fixed-point loop x <- 2y - map(x).
struct FixedPointResult {
    Vector solution;
    std::size_t iters = 0;
    double residual = 0.0;  ///< |x - (2y - map(x))|_inf at the returned x
    bool converged = false;
    std::vector<double> gaps_max;  ///< |x^i - x^{i-1}|_inf, i = 1..iters
    std::vector<double> gaps_l2;   ///< same in the l2 norm
};

struct InversionReport {
    Vector z;
    Vector zeta;
    std::size_t iters_g = 0;
    std::size_t iters_f = 0;
    double residual_g = 0.0;
    double residual_f = 0.0;
    bool converged = false;
    FixedPointResult label_propagation;
    FixedPointResult feature_construction;
};

/// Solves (map(x) + x) / 2 = y by x^0 = y, x^i = 2y - map(x^{i-1}).
/// Throws InvertibilityError when the certificate is missing or >= 1 and
/// NumericError when the gap grows three iterations in a row.
FixedPointResult invert_residual_block(const VectorMap& map, const std::optional<LipschitzCertificate>& cert,
                                       std::span<const double> y, const InversionOptions& opts);

/// zeta with residual_G(zeta) = Y_T.
FixedPointResult invert_label_propagation(const DiffusionOperators& ops, std::span<const double> y,
                                          const InversionOptions& opts = {});
/// z with residual_F(z) = zeta.
FixedPointResult invert_feature_construction(const DiffusionOperators& ops, std::span<const double> zeta,
                                             const InversionOptions& opts = {});
/// Both loops: the raw source estimate z = P^{-1}(Y_T).
InversionReport invert_p(const DiffusionOperators& ops, std::span<const double> y, const InversionOptions& opts = {});

}  // namespace ivgd
