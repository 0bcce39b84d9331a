#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "mlspde/hierarchy.hpp"
#include "mlspde/linalg.hpp"
#include "mlspde/rng.hpp"

namespace mlspde {

/// Matern covariance parameters with the smoothness restriction nu = 2 - d/2
/// (so alpha = nu + d/2 = 2 and the SPDE is a single reaction-diffusion solve).
struct MaternParams {
    double sigma2 = 1.0;
    double kappa = 1.0;
    int dim = 2;

    double nu() const { return 2.0 - 0.5 * dim; }

    void validate() const
    {
        if (dim != 2 && dim != 3) throw ConfigError("MaternParams: dim must be 2 or 3");
        if (!(sigma2 > 0.0)) throw ConfigError("MaternParams: sigma2 must be positive");
        if (!(kappa > 0.0)) throw ConfigError("MaternParams: kappa must be positive");
    }

    /// kappa from a correlation length via the effective-range convention
    /// kappa = sqrt(8 nu) / lambda.
    static MaternParams from_correlation_length(double sigma2, double lambda, int dim)
    {
        MaternParams p;
        p.sigma2 = sigma2;
        p.dim = dim;
        if (!(lambda > 0.0))
            throw ConfigError("MaternParams: correlation length must be positive");
        p.kappa = std::sqrt(8.0 * p.nu()) / lambda;
        p.validate();
        return p;
    }
};

/// Scaling g = (4 pi)^{d/4} kappa^nu sqrt(Gamma(nu + d/2) / Gamma(nu)) that
/// imposes unit marginal variance on the SPDE solution.
inline double scaling_g(const MaternParams& p)
{
    p.validate();
    const double nu = p.nu();
    return std::pow(4.0 * std::numbers::pi, 0.25 * p.dim) * std::pow(p.kappa, nu) *
           std::sqrt(std::tgamma(nu + 0.5 * p.dim) / std::tgamma(nu));
}

/// White-noise draw for one structured level, reproducible from (stream,
/// counter).
struct NoiseVector {
    int level = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;
    Vec xi;
};

inline NoiseVector draw_noise(int level, std::uint64_t seed, std::uint64_t sample,
                              int n_cells)
{
    NoiseVector out;
    out.level = level;
    out.stream = PhiloxStream::stream_id(level, sample);
    out.counter = 0;
    PhiloxStream rng(seed, out.stream);
    out.xi = Vec(n_cells);
    for (int c = 0; c < n_cells; ++c) out.xi[c] = rng.normal();
    return out;
}

/// RHS of the sampler system: -g W^{1/2} xi.
inline Vec white_noise_rhs(const Vec& Wdiag, const NoiseVector& noise, double g)
{
    if (Wdiag.size() != noise.xi.size())
        throw InvalidPairingError("white_noise_rhs: dimension mismatch");
    return -g * Wdiag.cwiseSqrt().cwiseProduct(noise.xi);
}

/// Sampler saddle system on one structured mesh: blocks {M, B^T; B, -kappa^2 W}
/// with the essential condition u . n = 0 on the whole embedding boundary.
inline SaddleSystem assemble_spde_system(const Mesh& dbar, const MaternParams& params)
{
    params.validate();
    if (params.dim != dbar.dim)
        throw InvalidPairingError("assemble_spde_system: dimension mismatch");
    SaddleSystem sys;
    sys.variant = SaddleSystem::Variant::Sampler;
    sys.mesh = &dbar;
    sys.M = assemble_flux_mass(FluxSpace(dbar));
    sys.B = assemble_divergence(FluxSpace(dbar), ScalarSpace(dbar));
    sys.Wdiag = scalar_mass_diagonal(dbar);
    sys.kappa2 = params.kappa * params.kappa;
    sys.rhs_u = Vec::Zero(dbar.n_facets());
    sys.rhs_p = Vec::Zero(dbar.n_cells());
    for (const auto& name : dbar.marker_names) apply_essential_flux_bc(sys, name, 0.0);
    return sys;
}

/// One sampled field: theta_bar on the structured mesh, theta = Pi theta_bar
/// on the unstructured domain mesh.
struct Realization {
    int level = 0;
    Vec theta_bar;
    Vec theta;
};

/// Gaussian field sampler over the structured hierarchy. Systems and
/// hybridizations are built once; sampling is reentrant.
class Sampler {
public:
    Sampler(const Hierarchy& hier, const MaternParams& params,
            HybridSolveMode mode = HybridSolveMode::Direct)
        : hier_(&hier), params_(params), g_(scaling_g(params))
    {
        systems_.reserve(hier.n_levels());
        for (int l = 0; l < hier.n_levels(); ++l)
            systems_.push_back(assemble_spde_system(hier.dbar[l], params));
        for (int l = 0; l < hier.n_levels(); ++l)
            hybrid_.emplace_back(systems_[l], mode);
    }

    // hybridizations hold pointers into systems_
    Sampler(const Sampler&) = delete;
    Sampler& operator=(const Sampler&) = delete;

    const Hierarchy& hierarchy() const { return *hier_; }
    const MaternParams& params() const { return params_; }
    double g() const { return g_; }
    const SaddleSystem& system(int level) const { return systems_.at(level); }

    NoiseVector noise(int level, std::uint64_t seed, std::uint64_t sample) const
    {
        return draw_noise(level, seed, sample, hier_->dbar.at(level).n_cells());
    }

    Realization sample_single_level(int level, const NoiseVector& noise) const
    {
        const SaddleSystem& sys = systems_.at(level);
        const Vec f = white_noise_rhs(sys.Wdiag, noise, g_);
        auto [u, theta_bar] = hybrid_.at(level).solve(sys.rhs_u, f);
        return project(level, std::move(theta_bar));
    }

    /// Coupled coarse/fine pair driven by the fine-level noise: the coarse
    /// system uses the Galerkin-restricted right-hand side Pbar^T F_l, so no
    /// separate coarse noise is drawn.
    std::pair<Realization, Realization> sample_pair(int level,
                                                    const NoiseVector& noise) const
    {
        if (level + 1 >= hier_->n_levels())
            throw ConfigError("sample_pair: no coarser level available");
        const SaddleSystem& fine = systems_.at(level);
        const SaddleSystem& coarse = systems_.at(level + 1);
        const InterpolationPair& P = hier_->interp_dbar.at(level);

        const Vec f_fine = white_noise_rhs(fine.Wdiag, noise, g_);
        const Vec fu_coarse = P.P_u.transpose() * fine.rhs_u;
        const Vec fp_coarse = P.P_theta.transpose() * f_fine;

        auto [uc, tc] = hybrid_.at(level + 1).solve(fu_coarse, fp_coarse);
        (void)uc;
        Realization coarse_real = project(level + 1, std::move(tc));

        auto [uf, tf] = hybrid_.at(level).solve(fine.rhs_u, f_fine);
        (void)uf;
        Realization fine_real = project(level, std::move(tf));
        return {std::move(fine_real), std::move(coarse_real)};
    }

private:
    Realization project(int level, Vec theta_bar) const
    {
        Realization r;
        r.level = level;
        r.theta = hier_->transfer.at(level).Pi * theta_bar;
        r.theta_bar = std::move(theta_bar);
        return r;
    }

    const Hierarchy* hier_;
    MaternParams params_;
    double g_;
    std::vector<SaddleSystem> systems_;
    std::vector<HybridizedSystem> hybrid_;
};

} // namespace mlspde
