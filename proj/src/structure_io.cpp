#include "mmpg/structure_io.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"
#include "mmpg/geometry.hpp"

namespace mmpg {

namespace {

// Alphabetical by three-letter code; index order is the type index.
const char* kNames[kNumAminoAcids] = {
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL"};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool is_hydrogen(const std::string& atom_name) {
    size_t i = 0;
    while (i < atom_name.size() && std::isdigit(static_cast<unsigned char>(atom_name[i]))) ++i;
    return i < atom_name.size() && atom_name[i] == 'H';
}

double parse_coord(const std::string& field, int line_no) {
    const std::string t = trim(field);
    if (t.empty()) throw MalformedRecord("line " + std::to_string(line_no) + ": empty coordinate field");
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) {
        throw MalformedRecord("line " + std::to_string(line_no) + ": bad coordinate '" + t + "'");
    }
    return v;
}

}  // namespace

const char* amino_acid_name(int type_index) {
    if (type_index == kUnknownType) return "UNK";
    return kNames[type_index];
}

int amino_acid_index(const std::string& three_letter) {
    std::string code = three_letter;
    if (code == "MSE") code = "MET";
    else if (code == "SEC") code = "CYS";
    else if (code == "PYL") code = "LYS";
    for (int i = 0; i < kNumAminoAcids; ++i) {
        if (code == kNames[i]) return i;
    }
    return -1;
}

ProteinStructure parse_structure(std::istream& raw, std::optional<char> chain_filter) {
    ProteinStructure out;
    std::optional<char> active_chain = chain_filter;

    struct Pending {
        int file_resseq = 0;
        std::string resname;
        Residue residue;
    };
    std::optional<Pending> current;
    std::optional<int> last_key;

    auto flush = [&out](Pending& p) {
        if (!p.residue.has_backbone()) {
            throw MissingBackbone("residue " + std::to_string(p.file_resseq) + " (" + p.resname +
                                  ") lacks one of N/CA/C");
        }
        p.residue.seq_index = out.size();
        out.residues.push_back(std::move(p.residue));
    };

    std::string line;
    int line_no = 0;
    while (std::getline(raw, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string record = trim(line.substr(0, std::min<size_t>(6, line.size())));
        if (record == "ENDMDL") break;  // first model only
        if (record != "ATOM") continue;

        if (line.size() < 54) {
            throw MalformedRecord("line " + std::to_string(line_no) + ": ATOM record shorter than 54 columns");
        }
        const std::string atom_name = trim(line.substr(12, 4));
        const char alt_loc = line[16];
        const std::string res_name = trim(line.substr(17, 3));
        const char chain = line[21];
        const std::string resseq_text = trim(line.substr(22, 4));

        if (alt_loc != ' ' && alt_loc != 'A') continue;
        if (is_hydrogen(atom_name)) continue;
        if (!active_chain) active_chain = chain;
        if (chain != *active_chain) continue;

        int resseq = 0;
        try {
            resseq = std::stoi(resseq_text);
        } catch (const std::exception&) {
            throw MalformedRecord("line " + std::to_string(line_no) + ": bad residue number '" +
                                  resseq_text + "'");
        }
        const int type = amino_acid_index(res_name);
        if (type < 0) {
            throw MalformedRecord("line " + std::to_string(line_no) + ": non-canonical residue name '" +
                                  res_name + "'");
        }

        Atom atom;
        atom.name = atom_name;
        atom.position.x() = parse_coord(line.substr(30, 8), line_no);
        atom.position.y() = parse_coord(line.substr(38, 8), line_no);
        atom.position.z() = parse_coord(line.substr(46, 8), line_no);

        if (!last_key || *last_key != resseq) {
            if (current) flush(*current);
            current = Pending{resseq, res_name, Residue{}};
            current->residue.amino_acid_type = type;
            last_key = resseq;
        }
        current->residue.atoms.emplace(atom.name, std::move(atom));  // first occurrence wins
    }
    if (current) flush(*current);

    if (out.residues.empty()) {
        throw EmptyChain(chain_filter ? std::string("no ATOM records for chain '") + *chain_filter + "'"
                                      : "no ATOM records found");
    }
    out.chain_id = active_chain ? std::string(1, *active_chain) : "";
    return out;
}

ProteinStructure parse_structure_text(const std::string& text, std::optional<char> chain_filter) {
    std::istringstream in(text);
    return parse_structure(in, chain_filter);
}

std::vector<ValidationWarning> validate_structure(const ProteinStructure& s) {
    std::vector<ValidationWarning> warnings;

    for (const Residue& res : s.residues) {
        std::array<bool, 4> missing = {false, false, false, false};
        int available = 0;
        std::string detail;
        for (int n = 0; n < 4; ++n) {
            const auto* quad = chi_quadruple(res.amino_acid_type, n);
            if (quad == nullptr) {
                missing[n] = true;
                detail += detail.empty() ? "" : ", ";
                detail += "chi" + std::to_string(n + 1) + " undefined for type";
                continue;
            }
            bool have_all = true;
            for (const char* a : *quad) {
                if (!res.has_atom(a)) { have_all = false; break; }
            }
            if (have_all) {
                ++available;
            } else {
                missing[n] = true;
                detail += detail.empty() ? "" : ", ";
                detail += "chi" + std::to_string(n + 1) + " atoms missing";
            }
        }
        if (available < 4) {
            ValidationWarning w;
            w.kind = ValidationWarning::Kind::ChiUnavailable;
            w.seq_index = res.seq_index;
            w.chi_missing = missing;
            w.message = "residue " + std::to_string(res.seq_index) + " (" +
                        amino_acid_name(res.amino_acid_type) + "): " + std::to_string(available) +
                        " of 4 chi angles available (" + detail + ")";
            warnings.push_back(std::move(w));
        }
    }

    for (int i = 0; i + 1 < s.size(); ++i) {
        if (!s.residues[i].has_atom("CA") || !s.residues[i + 1].has_atom("CA")) continue;
        const double d = (s.ca(i + 1) - s.ca(i)).norm();
        if (d > 4.5) {
            ValidationWarning w;
            w.kind = ValidationWarning::Kind::ChainBreak;
            w.seq_index = s.residues[i].seq_index;
            w.message = "chain break between residues " + std::to_string(s.residues[i].seq_index) +
                        " and " + std::to_string(s.residues[i + 1].seq_index) + " (CA-CA " +
                        std::to_string(d) + " A)";
            warnings.push_back(std::move(w));
        }
    }

    for (int i = 0; i + 1 < s.size(); ++i) {
        if (s.residues[i].seq_index == s.residues[i + 1].seq_index) {
            ValidationWarning w;
            w.kind = ValidationWarning::Kind::DuplicateSeqIndex;
            w.seq_index = s.residues[i].seq_index;
            w.message = "duplicate seq_index " + std::to_string(s.residues[i].seq_index);
            warnings.push_back(std::move(w));
        }
    }
    return warnings;
}

namespace {

std::string coord3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    std::string s(buf);
    if (s == "-0.000") s = "0.000";
    return s;
}

void append_escaped(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    out += '"';
}

}  // namespace

std::string to_canonical_json(const ProteinStructure& s) {
    std::string out = "{\"chain_id\":";
    append_escaped(out, s.chain_id);
    out += ",\"label\":";
    out += s.label ? std::to_string(*s.label) : "null";
    out += ",\"residues\":[";
    for (int i = 0; i < s.size(); ++i) {
        const Residue& r = s.residues[i];
        if (i) out += ',';
        out += "{\"type\":";
        append_escaped(out, amino_acid_name(r.amino_acid_type));
        out += ",\"seq_index\":" + std::to_string(r.seq_index);
        out += ",\"atoms\":{";
        bool first = true;
        for (const auto& [name, atom] : r.atoms) {  // map order: sorted by name
            if (!first) out += ',';
            first = false;
            append_escaped(out, name);
            out += ":[" + coord3(atom.position.x()) + ',' + coord3(atom.position.y()) + ',' +
                   coord3(atom.position.z()) + ']';
        }
        out += "}}";
    }
    out += "]}";
    return out;
}

ProteinStructure from_canonical_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedRecord(std::string("structure JSON: ") + e.what());
    }
    ProteinStructure s;
    s.chain_id = j.at("chain_id").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null()) s.label = j.at("label").get<int>();
    for (const auto& jr : j.at("residues")) {
        Residue r;
        const std::string type = jr.at("type").get<std::string>();
        r.amino_acid_type = amino_acid_index(type);
        if (r.amino_acid_type < 0) throw MalformedRecord("structure JSON: bad residue type '" + type + "'");
        r.seq_index = jr.at("seq_index").get<int>();
        for (const auto& [name, xyz] : jr.at("atoms").items()) {
            Atom a;
            a.name = name;
            a.position = Eigen::Vector3d(xyz.at(0).get<double>(), xyz.at(1).get<double>(),
                                         xyz.at(2).get<double>());
            r.atoms.emplace(name, std::move(a));
        }
        s.residues.push_back(std::move(r));
    }
    return s;
}

bool structures_equal(const ProteinStructure& a, const ProteinStructure& b) {
    if (a.chain_id != b.chain_id || a.label != b.label || a.size() != b.size()) return false;
    for (int i = 0; i < a.size(); ++i) {
        const Residue& ra = a.residues[i];
        const Residue& rb = b.residues[i];
        if (ra.amino_acid_type != rb.amino_acid_type || ra.seq_index != rb.seq_index) return false;
        if (ra.atoms.size() != rb.atoms.size()) return false;
        for (const auto& [name, atom] : ra.atoms) {
            auto it = rb.atoms.find(name);
            if (it == rb.atoms.end()) return false;
            const Eigen::Vector3d& p = atom.position;
            const Eigen::Vector3d& q = it->second.position;
            if (p.x() != q.x() || p.y() != q.y() || p.z() != q.z()) return false;
        }
    }
    return true;
}

}  // namespace mmpg
