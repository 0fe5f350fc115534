#include "ivgd/inversion.hpp"

#include <cmath>
#include <string>

#include "ivgd/errors.hpp"

namespace ivgd {

namespace {

Vector step(const VectorMap& map, std::span<const double> y, std::span<const double> x) {
    Vector next = map(x);
    if (next.size() != y.size()) throw ValidationError("operator output length mismatch during inversion");
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = 2.0 * y[i] - next[i];
    if (!all_finite(next)) throw NumericError("non-finite iterate during fixed-point inversion");
    return next;
}

}  // namespace

FixedPointResult invert_residual_block(const VectorMap& map, const std::optional<LipschitzCertificate>& cert,
                                       std::span<const double> y, const InversionOptions& opts) {
    if (!cert) throw InvertibilityError("operator has no Lipschitz certificate; refusing to invert");
    if (!(cert->estimate < 1.0))
        throw InvertibilityError("certified Lipschitz estimate of '" + cert->operator_name +
                                 "' is not below 1: " + std::to_string(cert->estimate));
    FixedPointResult r;
    r.solution.assign(y.begin(), y.end());
    if (opts.max_iters == 0) {
        r.residual = max_distance(r.solution, step(map, y, r.solution));
        return r;
    }
    std::size_t growth = 0;
    Vector next;
    for (std::size_t i = 1; i <= opts.max_iters; ++i) {
        next = step(map, y, r.solution);
        const double gap = max_distance(next, r.solution);
        const double gap_l2 = l2_distance(next, r.solution);
        if (!r.gaps_l2.empty()) {
            // The certificate bounds the l2 contraction; growth at round-off level is ignored.
            const double noise = 64.0 * 2.220446049250313e-16 * (1.0 + max_norm(next)) * std::sqrt(double(y.size()));
            growth = gap_l2 > r.gaps_l2.back() && gap_l2 > noise ? growth + 1 : 0;
            if (growth >= 3)
                throw NumericError("fixed-point inversion diverging (gap grew 3 iterations in a row at iteration " +
                                   std::to_string(i) + ")");
        }
        r.gaps_max.push_back(gap);
        r.gaps_l2.push_back(gap_l2);
        r.solution.swap(next);
        r.iters = i;
        if (gap <= opts.tol) break;
    }
    r.residual = max_distance(r.solution, step(map, y, r.solution));
    r.converged = r.residual <= opts.tol;
    return r;
}

FixedPointResult invert_label_propagation(const DiffusionOperators& ops, std::span<const double> y,
                                          const InversionOptions& opts) {
    return invert_residual_block(ops.g, ops.cert_g, y, opts);
}

FixedPointResult invert_feature_construction(const DiffusionOperators& ops, std::span<const double> zeta,
                                             const InversionOptions& opts) {
    return invert_residual_block(ops.f, ops.cert_f, zeta, opts);
}

InversionReport invert_p(const DiffusionOperators& ops, std::span<const double> y, const InversionOptions& opts) {
    // Check both certificates up front so nothing runs on a non-invertible model.
    for (const auto* cert : {&ops.cert_g, &ops.cert_f}) {
        if (!*cert) throw InvertibilityError("model is not certified; run certification first");
        if (!((*cert)->estimate < 1.0))
            throw InvertibilityError("certified Lipschitz estimate of '" + (*cert)->operator_name +
                                     "' is not below 1: " + std::to_string((*cert)->estimate));
    }
    InversionReport rep;
    rep.label_propagation = invert_label_propagation(ops, y, opts);
    rep.zeta = rep.label_propagation.solution;
    rep.feature_construction = invert_feature_construction(ops, rep.zeta, opts);
    rep.z = rep.feature_construction.solution;
    rep.iters_g = rep.label_propagation.iters;
    rep.iters_f = rep.feature_construction.iters;
    rep.residual_g = rep.label_propagation.residual;
    rep.residual_f = rep.feature_construction.residual;
    rep.converged = rep.label_propagation.converged && rep.feature_construction.converged;
    return rep;
}

}  // namespace ivgd
