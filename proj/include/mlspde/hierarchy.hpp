#pragma once

#include <utility>
#include <vector>

#include "mlspde/fespace.hpp"
#include "mlspde/mesh.hpp"
#include "mlspde/transfer.hpp"

namespace mlspde {

/// Paired structured/unstructured mesh hierarchy with interlevel
/// interpolations and per-level transfer operators. Level 0 is the finest;
/// level L = n_levels-1 the coarsest. The hierarchy is built once by uniform
/// refinement of the coarsest pair.
struct Hierarchy {
    std::vector<Mesh> d;    // unstructured domain meshes, fine to coarse
    std::vector<Mesh> dbar; // structured embedding meshes, fine to coarse

    // interp[l] maps level l+1 (coarse) into level l (fine); size n_levels-1
    std::vector<InterpolationPair> interp_d;
    std::vector<InterpolationPair> interp_dbar;

    // transfer[l]: projection from dbar[l] cells onto d[l] cells
    std::vector<TransferOperator> transfer;

    int n_levels() const { return static_cast<int>(d.size()); }
};

/// Build the hierarchy from the coarsest mesh pair. The transfer operator is
/// assembled geometrically on the finest level and coarsened recursively.
inline Hierarchy build_hierarchy(const Mesh& coarse_d, const Mesh& coarse_dbar,
                                 int n_levels, int n_workers = 1,
                                 TransferStageTimings* timings = nullptr)
{
    if (n_levels < 1) throw ConfigError("build_hierarchy: n_levels must be >= 1");
    Hierarchy h;

    // refine upward, then store fine-to-coarse
    std::vector<Mesh> d_up{coarse_d}, dbar_up{coarse_dbar};
    std::vector<RefinementMap> dmaps, dbmaps;
    for (int l = 1; l < n_levels; ++l) {
        auto [df, dm] = uniform_refine(d_up.back());
        d_up.push_back(std::move(df));
        dmaps.push_back(std::move(dm));
        auto [bf, bm] = uniform_refine(dbar_up.back());
        dbar_up.push_back(std::move(bf));
        dbmaps.push_back(std::move(bm));
    }
    for (int l = n_levels - 1; l >= 0; --l) {
        h.d.push_back(std::move(d_up[l]));
        h.dbar.push_back(std::move(dbar_up[l]));
    }
    for (int l = 0; l < n_levels - 1; ++l) {
        // interp[l]: coarse level l+1 -> fine level l; refinement maps are
        // indexed coarse-to-fine, so map n_levels-2-l matches
        const RefinementMap& dm = dmaps[n_levels - 2 - l];
        const RefinementMap& bm = dbmaps[n_levels - 2 - l];
        h.interp_d.push_back(build_interpolations(h.d[l + 1], h.d[l], dm));
        h.interp_dbar.push_back(build_interpolations(h.dbar[l + 1], h.dbar[l], bm));
    }

    h.transfer.push_back(build_transfer(h.d[0], h.dbar[0], n_workers, timings));
    for (int l = 0; l < n_levels - 1; ++l)
        h.transfer.push_back(coarsen_transfer(h.transfer[l], h.interp_d[l].P_theta,
                                              h.interp_dbar[l].P_theta, h.d[l + 1]));
    return h;
}

} // namespace mlspde
