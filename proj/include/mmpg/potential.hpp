#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <utility>
#include <vector>

#include "mmpg/geometry.hpp"

namespace mmpg {

/// Bin geometry of the 6-D pair descriptor space (r, theta_i, phi_i, theta_j,
/// phi_j, omega). theta_i and theta_j share n_theta; phi_i, phi_j share n_phi.
struct BinningScheme {
    double r_min = 3.0;
    double r_max = 16.0;
    int n_r = 13;
    int n_theta = 2;
    int n_phi = 4;
    int n_omega = 4;

    bool valid() const {
        return r_min < r_max && n_r >= 1 && n_theta >= 1 && n_phi >= 1 && n_omega >= 1;
    }
    std::int64_t geom_bins() const {
        return static_cast<std::int64_t>(n_r) * n_theta * n_phi * n_theta * n_phi * n_omega;
    }

    int bin_r(double r) const;          // requires r_min <= r < r_max
    int bin_theta(double theta) const;  // [0, pi], upper edge clamps into the last bin
    int bin_phi(double phi) const;      // (-pi, pi]
    int bin_omega(double omega) const;  // (-pi, pi]
    double r_bin_center(int bin) const;

    /// Flat row-major index over (r, theta_i, phi_i, theta_j, phi_j, omega).
    std::int64_t geom_index(const PairDescriptor& d) const;

    /// The same bin seen with the i/j roles exchanged.
    std::int64_t swap_roles(std::int64_t geom) const;

    bool operator==(const BinningScheme&) const = default;
};

/// Energy bias requested per unordered type pair when synthesizing tables.
using ContactPreference = std::map<std::pair<int, int>, double>;

/// Binned observed/reference counts for all 400 residue-type pairs, evaluated
/// through the inverse-Boltzmann ratio
///   E = -rt * ln((P_obs + z) / (P_ref + z)),
/// with per-type-pair probabilities P = count / total(type pair).
struct PotentialTable {
    BinningScheme scheme;
    double rt = 0.593;  // kcal/mol at 298 K
    double z = 0.0;     // smoothing constant; default_z() if left negative
    std::vector<float> counts_obs;  // 400 * geom_bins(), row-major (a, b, geom)
    std::vector<float> counts_ref;

    static double default_z(const BinningScheme& s) {
        return 0.01 / static_cast<double>(s.geom_bins());
    }

    std::int64_t pair_offset(int type_a, int type_b) const {
        return (static_cast<std::int64_t>(type_a) * kNumAminoAcids + type_b) * scheme.geom_bins();
    }

    /// Pair energy. r >= r_max yields +infinity (never an edge); r < r_min
    /// throws OutOfRange.
    double energy(int type_a, int type_b, const PairDescriptor& d) const;

    /// Energy of one explicit geometric bin.
    double bin_energy(int type_a, int type_b, std::int64_t geom) const;

    /// Observation-weighted mean energy over a type pair's bins.
    double mean_energy(int type_a, int type_b) const;

    /// Recompute the cached per-pair count totals. Called by the builders and
    /// load_table; required after mutating counts directly.
    void refresh_totals();

private:
    std::vector<double> total_obs_, total_ref_;  // 400 each
};

/// Average counts over the (a,b,geom) <-> (b,a,swapped-geom) symmetry so that
/// energy(a,b,d) == energy(b,a,d.swapped()).
PotentialTable symmetrize(const PotentialTable& table);

/// Binary format: magic "KORPTBL1" | little-endian header (r_min, r_max, rt, z
/// as float64; n_r, n_theta, n_phi, n_omega as int64) | counts_obs then
/// counts_ref as float32 arrays. A structurally cut-off stream raises
/// TruncatedPayload; a whole-float payload of the wrong count raises
/// ShapeMismatch.
PotentialTable load_table(std::istream& raw);
void write_table(std::ostream& out, const PotentialTable& table);
PotentialTable load_table_file(const std::string& path);
void write_table_file(const std::string& path, const PotentialTable& table);

/// Deterministic synthetic table. Reference counts follow a fixed radial
/// profile; observed counts multiply in exp(-bias/rt) inside the contact
/// shell (r bin centers in [4, 6) A) plus small seeded noise, so a negative
/// bias lowers that pair's contact energies (and its observation-weighted
/// mean energy) relative to an unbiased pair. Same seed, same bytes.
PotentialTable synth_table(uint64_t seed, const BinningScheme& scheme,
                           const ContactPreference& contact_preference = {},
                           double rt = 0.593, double z = -1.0);

}  // namespace mmpg
