#include "mmpg/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"
#include "mmpg/geometry.hpp"
#include "mmpg/rng.hpp"
#include "mmpg/structure_io.hpp"

namespace mmpg {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

bool ClassMotif::same_as(const ClassMotif& o) const {
    return helix_radius == o.helix_radius && turn_deg == o.turn_deg && rise == o.rise &&
           type_probs.size() == o.type_probs.size() && type_probs == o.type_probs;
}

void SyntheticSpec::validate() const {
    if (n_classes < 2) throw ConfigInvalid("synthetic: need at least 2 classes");
    if (structures_per_class < 1) throw ConfigInvalid("synthetic: structures_per_class < 1");
    if (len_min < 4 || len_max < len_min) throw ConfigInvalid("synthetic: bad length range");
    if (!motifs.empty()) {
        if (static_cast<int>(motifs.size()) != n_classes)
            throw ConfigInvalid("synthetic: motif count != n_classes");
        for (size_t a = 0; a < motifs.size(); ++a) {
            for (size_t b = a + 1; b < motifs.size(); ++b) {
                if (motifs[a].same_as(motifs[b]))
                    throw ConfigInvalid("synthetic: classes " + std::to_string(a) + " and " +
                                        std::to_string(b) + " share a motif");
            }
        }
    }
}

std::vector<ClassMotif> default_motifs(int n_classes) {
    std::vector<ClassMotif> motifs;
    for (int c = 0; c < n_classes; ++c) {
        ClassMotif m;
        m.helix_radius = 2.28;
        m.turn_deg = 97.0 + 4.0 * c;
        m.rise = 1.45 + 0.04 * c;
        m.type_probs = Eigen::VectorXd::Constant(kNumAminoAcids, 0.2 / 15.0);
        const int block = (5 * c) % kNumAminoAcids;
        for (int t = block; t < block + 5; ++t) m.type_probs[t] = 0.8 / 5.0;
        m.type_probs /= m.type_probs.sum();
        motifs.push_back(std::move(m));
    }
    return motifs;
}

ContactPreference default_contact_preference() {
    ContactPreference prefs;
    for (int a = 0; a < kNumAminoAcids; ++a) {
        for (int b = a; b < kNumAminoAcids; ++b) {
            prefs[{a, b}] = (a / 5 == b / 5) ? -2.0 : 0.5;
        }
    }
    return prefs;
}

PotentialTable default_synthetic_table(std::uint64_t seed) {
    return synth_table(seed, BinningScheme{}, default_contact_preference());
}

namespace {

int sample_type(const Eigen::VectorXd& probs, Rng& rng) {
    double u = rng.next_double();
    for (int t = 0; t < probs.size(); ++t) {
        u -= probs[t];
        if (u < 0.0) return t;
    }
    return static_cast<int>(probs.size()) - 1;
}

/// One helical segment of `length` residues appended to `s`, following the
/// motif's geometry, with type sampling from its composition.
void append_segment(ProteinStructure& s, const ClassMotif& motif, int length, Rng& rng,
                    double z_offset, double phase) {
    const double omega = motif.turn_deg * kPi / 180.0;
    const int start = s.size();
    std::vector<Eigen::Vector3d> ca(static_cast<size_t>(length));
    std::vector<Eigen::Vector3d> inward(static_cast<size_t>(length));
    for (int i = 0; i < length; ++i) {
        const double ang = phase + omega * i;
        const Eigen::Vector3d ideal(motif.helix_radius * std::cos(ang),
                                    motif.helix_radius * std::sin(ang), z_offset + motif.rise * i);
        const Eigen::Vector3d jitter(0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal());
        ca[static_cast<size_t>(i)] = ideal + jitter;
        inward[static_cast<size_t>(i)] = Eigen::Vector3d(-std::cos(ang), -std::sin(ang), 0.0);
    }
    for (int i = 0; i < length; ++i) {
        const Eigen::Vector3d prev = i > 0 ? ca[static_cast<size_t>(i - 1)]
                                           : ca[0] - (ca[1] - ca[0]);
        const Eigen::Vector3d next = i + 1 < length ? ca[static_cast<size_t>(i + 1)]
                                                    : ca[static_cast<size_t>(i)] +
                                                          (ca[static_cast<size_t>(i)] -
                                                           ca[static_cast<size_t>(i - 1)]);
        const Eigen::Vector3d t = (next - prev).normalized();
        const Eigen::Vector3d n_dir = (-t + 0.8 * inward[static_cast<size_t>(i)]).normalized();
        const Eigen::Vector3d c_dir = (t + 0.8 * inward[static_cast<size_t>(i)]).normalized();

        Residue res;
        res.amino_acid_type = sample_type(motif.type_probs, rng);
        res.seq_index = start + i;
        const Eigen::Vector3d& pos = ca[static_cast<size_t>(i)];
        res.atoms.emplace("N", Atom{"N", pos + 1.46 * n_dir});
        res.atoms.emplace("CA", Atom{"CA", pos});
        res.atoms.emplace("C", Atom{"C", pos + 1.52 * c_dir});

        if (const auto* quad = chi_quadruple(res.amino_acid_type, 0)) {
            const Eigen::Vector3d cb = place_atom(res.atom_pos("C"), res.atom_pos("N"),
                                                  res.atom_pos("CA"), 1.53, 1.92,
                                                  2.2 + 0.1 * rng.normal());
            res.atoms.emplace("CB", Atom{"CB", cb});
            const double rotamers[3] = {-kPi / 3.0, kPi / 3.0, kPi};
            const double chi1 = rotamers[rng.uniform_int(0, 2)] + 0.15 * rng.normal();
            const Eigen::Vector3d gamma =
                place_atom(res.atom_pos("N"), res.atom_pos("CA"), cb, 1.52, 1.94, chi1);
            res.atoms.emplace((*quad)[3], Atom{(*quad)[3], gamma});
        }
        s.residues.push_back(std::move(res));
    }
}

}  // namespace

Target Dataset::target(int idx) const {
    if (multi_label) return Target::multi(multi_hot[static_cast<size_t>(idx)]);
    return Target::single(*structures[static_cast<size_t>(idx)].label);
}

namespace {

// Coordinates are kept at PDB-like milli-Angstrom precision so the canonical
// JSON export reproduces the in-memory structure exactly.
void quantize_coordinates(ProteinStructure& s) {
    for (Residue& r : s.residues) {
        for (auto& [name, atom] : r.atoms) {
            for (int c = 0; c < 3; ++c) {
                atom.position[c] = std::round(atom.position[c] * 1000.0) / 1000.0;
            }
        }
    }
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticSpec& spec_in) {
    SyntheticSpec spec = spec_in;
    spec.validate();
    if (spec.motifs.empty()) spec.motifs = default_motifs(spec.n_classes);
    spec.validate();

    Dataset ds;
    ds.multi_label = spec.multi_label;
    ds.n_classes = spec.n_classes;

    Rng root(spec.seed ^ 0x73796e7468646174ull);
    for (int c = 0; c < spec.n_classes; ++c) {
        for (int k = 0; k < spec.structures_per_class; ++k) {
            Rng rng = root.fork(static_cast<std::uint64_t>(c) * 100003ull + static_cast<std::uint64_t>(k));
            const int length = rng.uniform_int(spec.len_min, spec.len_max);

            ProteinStructure s;
            s.chain_id = "A";
            std::vector<int> hot(static_cast<size_t>(spec.n_classes), 0);
            if (spec.multi_label) {
                // One or two motifs; the primary motif is the class of this slot.
                hot[static_cast<size_t>(c)] = 1;
                const bool two = rng.next_double() < 0.5;
                int other = c;
                if (two && spec.n_classes > 1) {
                    other = rng.uniform_int(0, spec.n_classes - 2);
                    if (other >= c) ++other;
                    hot[static_cast<size_t>(other)] = 1;
                }
                if (two && other != c) {
                    const int half = length / 2;
                    append_segment(s, spec.motifs[static_cast<size_t>(c)], half, rng, 0.0, 0.0);
                    const double z_next = s.residues.back().atom_pos("CA").z() +
                                          spec.motifs[static_cast<size_t>(other)].rise;
                    append_segment(s, spec.motifs[static_cast<size_t>(other)], length - half, rng,
                                   z_next, 0.3);
                } else {
                    append_segment(s, spec.motifs[static_cast<size_t>(c)], length, rng, 0.0, 0.0);
                }
                ds.multi_hot.push_back(std::move(hot));
            } else {
                append_segment(s, spec.motifs[static_cast<size_t>(c)], length, rng, 0.0, 0.0);
                s.label = c;
            }
            quantize_coordinates(s);
            ds.structures.push_back(std::move(s));
        }
    }
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    nlohmann::json j;
    j["multi_label"] = ds.multi_label;
    j["n_classes"] = ds.n_classes;
    j["structures"] = nlohmann::json::array();
    for (const ProteinStructure& s : ds.structures) {
        j["structures"].push_back(nlohmann::json::parse(to_canonical_json(s)));
    }
    if (ds.multi_label) j["multi_hot"] = ds.multi_hot;
    std::ofstream out(path);
    if (!out) throw FileNotFound("cannot open dataset file for writing: " + path);
    out << j.dump(1) << "\n";
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("dataset file not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedRecord(std::string("dataset JSON: ") + e.what());
    }
    Dataset ds;
    ds.multi_label = j.at("multi_label").get<bool>();
    ds.n_classes = j.at("n_classes").get<int>();
    for (const auto& js : j.at("structures")) {
        ds.structures.push_back(from_canonical_json(js.dump()));
    }
    if (ds.multi_label) ds.multi_hot = j.at("multi_hot").get<std::vector<std::vector<int>>>();
    return ds;
}

}  // namespace mmpg
