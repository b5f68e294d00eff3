#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "mmpg/structure.hpp"

namespace mmpg {

/// Right-handed orthonormal frame attached to a residue. Built from the
/// backbone N, CA, C atoms; origin is the C-alpha position.
struct LocalFrame {
    Eigen::Vector3d vx, vy, vz;
    Eigen::Vector3d origin;

    /// Components of a world-space vector in this frame's basis.
    Eigen::Vector3d to_local(const Eigen::Vector3d& v) const {
        return {vx.dot(v), vy.dot(v), vz.dot(v)};
    }
};

/// 6-D relative geometry of an ordered residue pair: distance, polar and
/// azimuthal angles of the connecting vector in each residue's local frame,
/// and the torsion of the two frame z-axes about the connecting axis.
struct PairDescriptor {
    double r = 0.0;       // Angstrom, > 0
    double theta_i = 0.0; // [0, pi]
    double phi_i = 0.0;   // (-pi, pi]
    double theta_j = 0.0; // [0, pi]
    double phi_j = 0.0;   // (-pi, pi]
    double omega = 0.0;   // (-pi, pi]

    /// Descriptor of the pair seen from the other side: roles i and j swap,
    /// r and omega are unchanged.
    PairDescriptor swapped() const { return {r, theta_j, phi_j, theta_i, phi_i, omega}; }
};

/// Sine-cosine encoding of up to four side-chain torsion angles.
/// values = (sin x1, cos x1, ..., sin x4, cos x4); unavailable angles have
/// mask=false and both entries exactly zero.
struct SideChainEncoding {
    Eigen::Matrix<double, 8, 1> values = Eigen::Matrix<double, 8, 1>::Zero();
    std::array<bool, 4> mask = {false, false, false, false};

    int available() const { return static_cast<int>(mask[0]) + mask[1] + mask[2] + mask[3]; }
};

/// Signed dihedral angle in (-pi, pi] between plane(p1,p2,p3) and
/// plane(p2,p3,p4), via the atan2 formulation. Sign follows the right-hand
/// rule about p2->p3. Throws DegenerateGeometry when either plane normal
/// has norm < 1e-12.
double dihedral(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                const Eigen::Vector3d& p3, const Eigen::Vector3d& p4);

/// Side-chain torsion atom quadruple for (type, chi_n), n in [0,4).
/// Returns nullptr when the angle is undefined for the type.
/// Follows the standard heavy-atom convention (ALA and GLY have no chi).
const std::array<const char*, 4>* chi_quadruple(int type_index, int chi_n);

/// Chi angles of a residue from the standard quadruple table. Angles whose
/// atoms are missing, or which are undefined for the type, get mask=false.
SideChainEncoding chi_angles(const Residue& res);

/// Local frame from the backbone:
///   vz = normalize((C - CA) + (N - CA))
///   vy = normalize(vz x (N - CA))
///   vx = vy x vz
/// Throws DegenerateGeometry on collinear backbone atoms.
LocalFrame local_frame(const Residue& res);

/// Frames for every residue of a validated structure.
std::vector<LocalFrame> local_frames(const ProteinStructure& s);

/// How pair_descriptor treats an omega torsion whose axis is parallel to a
/// frame z-axis (theta at 0 or pi): raise, or substitute omega = 0 so the
/// descriptor stays binnable.
enum class OmegaDegeneracyPolicy { Throw, ZeroOmega };

PairDescriptor pair_descriptor(const LocalFrame& fi, const LocalFrame& fj,
                               OmegaDegeneracyPolicy policy = OmegaDegeneracyPolicy::Throw);

/// Place atom D given A, B, C, the |C-D| bond length, the B-C-D bond angle and
/// the A-B-C-D dihedral. Inverse of dihedral(): the returned point satisfies
/// dihedral(A,B,C,D) == torsion.
Eigen::Vector3d place_atom(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                           const Eigen::Vector3d& c, double bond_length,
                           double bond_angle, double torsion);

}  // namespace mmpg
