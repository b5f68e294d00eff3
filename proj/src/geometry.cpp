#include "mmpg/geometry.hpp"

#include <cmath>

#include "mmpg/errors.hpp"

namespace mmpg {

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr double kPi = 3.14159265358979323846;

// Map an atan2 result onto (-pi, pi].
double half_open(double angle) {
    return angle <= -kPi ? kPi : angle;
}

}  // namespace

double dihedral(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                const Eigen::Vector3d& p3, const Eigen::Vector3d& p4) {
    const Eigen::Vector3d b1 = p2 - p1;
    const Eigen::Vector3d b2 = p3 - p2;
    const Eigen::Vector3d b3 = p4 - p3;

    const Eigen::Vector3d n1 = b1.cross(b2);
    const Eigen::Vector3d n2 = b2.cross(b3);
    if (n1.norm() < kDegenerateNorm || n2.norm() < kDegenerateNorm || b2.norm() < kDegenerateNorm) {
        throw DegenerateGeometry("dihedral: collinear or coincident points");
    }

    const Eigen::Vector3d axis = b2.normalized();
    const double y = n1.cross(n2).dot(axis);
    const double x = n1.dot(n2);
    return half_open(std::atan2(y, x));
}

namespace {

using Quad = std::array<const char*, 4>;

struct ChiTable {
    Quad quads[4];
    int n_chi = 0;
};

// Standard heavy-atom chi quadruples, indexed by alphabetical type order:
// ALA ARG ASN ASP CYS GLN GLU GLY HIS ILE LEU LYS MET PHE PRO SER THR TRP TYR VAL
const ChiTable kChiTables[kNumAminoAcids] = {
    /* ALA */ {{}, 0},
    /* ARG */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD"},
                Quad{"CB", "CG", "CD", "NE"}, Quad{"CG", "CD", "NE", "CZ"}}, 4},
    /* ASN */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "OD1"}}, 2},
    /* ASP */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "OD1"}}, 2},
    /* CYS */ {{Quad{"N", "CA", "CB", "SG"}}, 1},
    /* GLN */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD"},
                Quad{"CB", "CG", "CD", "OE1"}}, 3},
    /* GLU */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD"},
                Quad{"CB", "CG", "CD", "OE1"}}, 3},
    /* GLY */ {{}, 0},
    /* HIS */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "ND1"}}, 2},
    /* ILE */ {{Quad{"N", "CA", "CB", "CG1"}, Quad{"CA", "CB", "CG1", "CD1"}}, 2},
    /* LEU */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD1"}}, 2},
    /* LYS */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD"},
                Quad{"CB", "CG", "CD", "CE"}, Quad{"CG", "CD", "CE", "NZ"}}, 4},
    /* MET */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "SD"},
                Quad{"CB", "CG", "SD", "CE"}}, 3},
    /* PHE */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD1"}}, 2},
    /* PRO */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD"}}, 2},
    /* SER */ {{Quad{"N", "CA", "CB", "OG"}}, 1},
    /* THR */ {{Quad{"N", "CA", "CB", "OG1"}}, 1},
    /* TRP */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD1"}}, 2},
    /* TYR */ {{Quad{"N", "CA", "CB", "CG"}, Quad{"CA", "CB", "CG", "CD1"}}, 2},
    /* VAL */ {{Quad{"N", "CA", "CB", "CG1"}}, 1},
};

}  // namespace

const std::array<const char*, 4>* chi_quadruple(int type_index, int chi_n) {
    if (type_index < 0 || type_index >= kNumAminoAcids || chi_n < 0 || chi_n >= 4) return nullptr;
    const ChiTable& t = kChiTables[type_index];
    if (chi_n >= t.n_chi) return nullptr;
    return &t.quads[chi_n];
}

SideChainEncoding chi_angles(const Residue& res) {
    SideChainEncoding enc;
    for (int n = 0; n < 4; ++n) {
        const Quad* q = chi_quadruple(res.amino_acid_type, n);
        if (q == nullptr) continue;
        bool have_all = true;
        for (const char* atom : *q) {
            if (!res.has_atom(atom)) { have_all = false; break; }
        }
        if (!have_all) continue;
        double chi;
        try {
            chi = dihedral(res.atom_pos((*q)[0]), res.atom_pos((*q)[1]),
                           res.atom_pos((*q)[2]), res.atom_pos((*q)[3]));
        } catch (const DegenerateGeometry&) {
            continue;  // degenerate side chain geometry: leave the angle masked
        }
        enc.mask[n] = true;
        enc.values[2 * n] = std::sin(chi);
        enc.values[2 * n + 1] = std::cos(chi);
    }
    return enc;
}

LocalFrame local_frame(const Residue& res) {
    const Eigen::Vector3d& ca = res.atom_pos("CA");
    const Eigen::Vector3d r_n = res.atom_pos("N") - ca;
    const Eigen::Vector3d r_c = res.atom_pos("C") - ca;

    const Eigen::Vector3d z_raw = r_c + r_n;
    if (z_raw.norm() < kDegenerateNorm) {
        throw DegenerateGeometry("local_frame: N and C opposite CA, z axis undefined");
    }
    LocalFrame f;
    f.vz = z_raw.normalized();
    const Eigen::Vector3d y_raw = f.vz.cross(r_n);
    if (y_raw.norm() < kDegenerateNorm) {
        throw DegenerateGeometry("local_frame: collinear backbone atoms, y axis undefined");
    }
    f.vy = y_raw.normalized();
    f.vx = f.vy.cross(f.vz);
    f.origin = ca;
    return f;
}

std::vector<LocalFrame> local_frames(const ProteinStructure& s) {
    std::vector<LocalFrame> frames;
    frames.reserve(s.residues.size());
    for (const Residue& r : s.residues) frames.push_back(local_frame(r));
    return frames;
}

PairDescriptor pair_descriptor(const LocalFrame& fi, const LocalFrame& fj,
                               OmegaDegeneracyPolicy policy) {
    const Eigen::Vector3d rij = fj.origin - fi.origin;
    const double r = rij.norm();
    if (r < kDegenerateNorm) {
        throw DegenerateGeometry("pair_descriptor: coincident origins");
    }

    PairDescriptor d;
    d.r = r;
    const Eigen::Vector3d ui = fi.to_local(rij);
    d.theta_i = std::atan2(std::hypot(ui.x(), ui.y()), ui.z());
    d.phi_i = half_open(std::atan2(ui.y(), ui.x()));
    const Eigen::Vector3d uj = fj.to_local(-rij);
    d.theta_j = std::atan2(std::hypot(uj.x(), uj.y()), uj.z());
    d.phi_j = half_open(std::atan2(uj.y(), uj.x()));

    try {
        d.omega = dihedral(fi.origin + fi.vz, fi.origin, fj.origin, fj.origin + fj.vz);
    } catch (const DegenerateGeometry&) {
        if (policy == OmegaDegeneracyPolicy::Throw) {
            throw DegenerateGeometry("pair_descriptor: frame z axis parallel to pair axis, omega undefined");
        }
        d.omega = 0.0;
    }
    return d;
}

Eigen::Vector3d place_atom(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                           const Eigen::Vector3d& c, double bond_length,
                           double bond_angle, double torsion) {
    const Eigen::Vector3d bc = (c - b).normalized();
    const Eigen::Vector3d n = (b - a).cross(bc).normalized();
    const Eigen::Vector3d m = n.cross(bc);

    // Local displacement: along -bc for the bond angle, rotated about bc by the torsion.
    const double d_bc = -bond_length * std::cos(bond_angle);
    const double d_m = bond_length * std::sin(bond_angle) * std::cos(torsion);
    const double d_n = bond_length * std::sin(bond_angle) * std::sin(torsion);
    return c + d_bc * bc + d_m * m + d_n * n;
}

}  // namespace mmpg
