#include "mmpg/potential.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "mmpg/errors.hpp"

namespace mmpg {

namespace {

constexpr double kPi = 3.14159265358979323846;

int clamp_bin(int b, int n) { return b < 0 ? 0 : (b >= n ? n - 1 : b); }

// Uniform double in [lo, hi) from the top 53 bits of a 64-bit draw; exact and
// portable across standard library implementations.
double uniform(std::uint64_t bits, double lo, double hi) {
    const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

struct SplitMix64 {
    std::uint64_t state;
    std::uint64_t next() {
        std::uint64_t x = (state += 0x9e3779b97f4a7c15ull);
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }
};

}  // namespace

int BinningScheme::bin_r(double r) const {
    const double w = (r_max - r_min) / n_r;
    return clamp_bin(static_cast<int>((r - r_min) / w), n_r);
}

int BinningScheme::bin_theta(double theta) const {
    const double w = kPi / n_theta;
    return clamp_bin(static_cast<int>(theta / w), n_theta);
}

int BinningScheme::bin_phi(double phi) const {
    const double w = 2.0 * kPi / n_phi;
    return clamp_bin(static_cast<int>((phi + kPi) / w), n_phi);
}

int BinningScheme::bin_omega(double omega) const {
    const double w = 2.0 * kPi / n_omega;
    return clamp_bin(static_cast<int>((omega + kPi) / w), n_omega);
}

double BinningScheme::r_bin_center(int bin) const {
    const double w = (r_max - r_min) / n_r;
    return r_min + (bin + 0.5) * w;
}

std::int64_t BinningScheme::geom_index(const PairDescriptor& d) const {
    std::int64_t idx = bin_r(d.r);
    idx = idx * n_theta + bin_theta(d.theta_i);
    idx = idx * n_phi + bin_phi(d.phi_i);
    idx = idx * n_theta + bin_theta(d.theta_j);
    idx = idx * n_phi + bin_phi(d.phi_j);
    idx = idx * n_omega + bin_omega(d.omega);
    return idx;
}

std::int64_t BinningScheme::swap_roles(std::int64_t geom) const {
    const int om = static_cast<int>(geom % n_omega); geom /= n_omega;
    const int pj = static_cast<int>(geom % n_phi); geom /= n_phi;
    const int tj = static_cast<int>(geom % n_theta); geom /= n_theta;
    const int pi = static_cast<int>(geom % n_phi); geom /= n_phi;
    const int ti = static_cast<int>(geom % n_theta); geom /= n_theta;
    const int rb = static_cast<int>(geom);
    std::int64_t idx = rb;
    idx = idx * n_theta + tj;
    idx = idx * n_phi + pj;
    idx = idx * n_theta + ti;
    idx = idx * n_phi + pi;
    idx = idx * n_omega + om;
    return idx;
}

void PotentialTable::refresh_totals() {
    const std::int64_t g = scheme.geom_bins();
    total_obs_.assign(kNumAminoAcids * kNumAminoAcids, 0.0);
    total_ref_.assign(kNumAminoAcids * kNumAminoAcids, 0.0);
    for (int p = 0; p < kNumAminoAcids * kNumAminoAcids; ++p) {
        double so = 0.0, sr = 0.0;
        const std::int64_t off = static_cast<std::int64_t>(p) * g;
        for (std::int64_t i = 0; i < g; ++i) {
            so += counts_obs[static_cast<size_t>(off + i)];
            sr += counts_ref[static_cast<size_t>(off + i)];
        }
        total_obs_[static_cast<size_t>(p)] = so;
        total_ref_[static_cast<size_t>(p)] = sr;
    }
}

double PotentialTable::bin_energy(int type_a, int type_b, std::int64_t geom) const {
    const size_t pair = static_cast<size_t>(type_a) * kNumAminoAcids + static_cast<size_t>(type_b);
    const size_t idx = static_cast<size_t>(pair_offset(type_a, type_b) + geom);
    const double to = total_obs_[pair];
    const double tr = total_ref_[pair];
    const double p_obs = to > 0.0 ? counts_obs[idx] / to : 0.0;
    const double p_ref = tr > 0.0 ? counts_ref[idx] / tr : 0.0;
    return -rt * std::log((p_obs + z) / (p_ref + z));
}

double PotentialTable::energy(int type_a, int type_b, const PairDescriptor& d) const {
    if (d.r < scheme.r_min) {
        throw OutOfRange("energy: r=" + std::to_string(d.r) + " below r_min=" +
                         std::to_string(scheme.r_min));
    }
    if (d.r >= scheme.r_max) return std::numeric_limits<double>::infinity();
    return bin_energy(type_a, type_b, scheme.geom_index(d));
}

double PotentialTable::mean_energy(int type_a, int type_b) const {
    const size_t pair = static_cast<size_t>(type_a) * kNumAminoAcids + static_cast<size_t>(type_b);
    const double to = total_obs_[pair];
    if (to <= 0.0) return 0.0;
    const std::int64_t g = scheme.geom_bins();
    const std::int64_t off = pair_offset(type_a, type_b);
    double mean = 0.0;
    for (std::int64_t i = 0; i < g; ++i) {
        const double w = counts_obs[static_cast<size_t>(off + i)] / to;
        if (w > 0.0) mean += w * bin_energy(type_a, type_b, i);
    }
    return mean;
}

PotentialTable symmetrize(const PotentialTable& table) {
    PotentialTable out = table;
    const std::int64_t g = table.scheme.geom_bins();
    for (int a = 0; a < kNumAminoAcids; ++a) {
        for (int b = 0; b < kNumAminoAcids; ++b) {
            const std::int64_t off_ab = table.pair_offset(a, b);
            const std::int64_t off_ba = table.pair_offset(b, a);
            for (std::int64_t i = 0; i < g; ++i) {
                const std::int64_t j = table.scheme.swap_roles(i);
                out.counts_obs[static_cast<size_t>(off_ab + i)] = 0.5f *
                    (table.counts_obs[static_cast<size_t>(off_ab + i)] +
                     table.counts_obs[static_cast<size_t>(off_ba + j)]);
                out.counts_ref[static_cast<size_t>(off_ab + i)] = 0.5f *
                    (table.counts_ref[static_cast<size_t>(off_ab + i)] +
                     table.counts_ref[static_cast<size_t>(off_ba + j)]);
            }
        }
    }
    out.refresh_totals();
    return out;
}

namespace {

constexpr char kMagic[8] = {'K', 'O', 'R', 'P', 'T', 'B', 'L', '1'};

void write_f64(std::ostream& out, double v) {
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(&v), 8);
}

void write_i64(std::ostream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}

double read_f64(std::istream& in) {
    double v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (in.gcount() != 8) throw TruncatedPayload("table: truncated header");
    return v;
}

std::int64_t read_i64(std::istream& in) {
    std::int64_t v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (in.gcount() != 8) throw TruncatedPayload("table: truncated header");
    return v;
}

}  // namespace

void write_table(std::ostream& out, const PotentialTable& table) {
    out.write(kMagic, 8);
    write_f64(out, table.scheme.r_min);
    write_f64(out, table.scheme.r_max);
    write_i64(out, table.scheme.n_r);
    write_i64(out, table.scheme.n_theta);
    write_i64(out, table.scheme.n_phi);
    write_i64(out, table.scheme.n_omega);
    write_f64(out, table.rt);
    write_f64(out, table.z);
    out.write(reinterpret_cast<const char*>(table.counts_obs.data()),
              static_cast<std::streamsize>(table.counts_obs.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(table.counts_ref.data()),
              static_cast<std::streamsize>(table.counts_ref.size() * sizeof(float)));
}

PotentialTable load_table(std::istream& raw) {
    char magic[8];
    raw.read(magic, 8);
    if (raw.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        throw BadMagic("table: bad magic");
    }
    PotentialTable t;
    t.scheme.r_min = read_f64(raw);
    t.scheme.r_max = read_f64(raw);
    t.scheme.n_r = static_cast<int>(read_i64(raw));
    t.scheme.n_theta = static_cast<int>(read_i64(raw));
    t.scheme.n_phi = static_cast<int>(read_i64(raw));
    t.scheme.n_omega = static_cast<int>(read_i64(raw));
    t.rt = read_f64(raw);
    t.z = read_f64(raw);
    if (!t.scheme.valid() || t.rt <= 0.0 || t.z < 0.0) {
        throw ShapeMismatch("table: invalid header values");
    }

    const std::int64_t per_array = kNumAminoAcids * kNumAminoAcids * t.scheme.geom_bins();
    const std::int64_t expected = 2 * per_array;
    std::vector<float> payload(static_cast<size_t>(expected));
    raw.read(reinterpret_cast<char*>(payload.data()),
             static_cast<std::streamsize>(expected * sizeof(float)));
    const std::streamsize got_bytes = raw.gcount();
    if (got_bytes % sizeof(float) != 0) {
        throw TruncatedPayload("table: payload cut mid-value");
    }
    const std::int64_t got = got_bytes / static_cast<std::streamsize>(sizeof(float));
    if (got < expected || raw.peek() != std::char_traits<char>::eof()) {
        throw ShapeMismatch("table: header implies " + std::to_string(expected) +
                            " floats, payload holds " +
                            std::to_string(got < expected ? got : expected + 1) + "+");
    }
    for (float v : payload) {
        if (v < 0.0f || !std::isfinite(v)) throw ShapeMismatch("table: negative or non-finite count");
    }
    t.counts_obs.assign(payload.begin(), payload.begin() + per_array);
    t.counts_ref.assign(payload.begin() + per_array, payload.end());
    t.refresh_totals();
    return t;
}

PotentialTable load_table_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("table file not found: " + path);
    return load_table(in);
}

void write_table_file(const std::string& path, const PotentialTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileNotFound("cannot open table file for writing: " + path);
    write_table(out, table);
}

PotentialTable synth_table(uint64_t seed, const BinningScheme& scheme,
                           const ContactPreference& contact_preference, double rt, double z) {
    PotentialTable t;
    t.scheme = scheme;
    t.rt = rt;
    t.z = z < 0.0 ? PotentialTable::default_z(scheme) : z;

    const std::int64_t g = scheme.geom_bins();
    t.counts_obs.resize(static_cast<size_t>(kNumAminoAcids * kNumAminoAcids * g));
    t.counts_ref.resize(t.counts_obs.size());

    // Geometric bin -> contact-shell membership and radial base profile.
    const std::int64_t per_r = g / scheme.n_r;
    std::vector<double> base(static_cast<size_t>(g));
    std::vector<char> shell(static_cast<size_t>(g));
    for (std::int64_t i = 0; i < g; ++i) {
        const int rb = static_cast<int>(i / per_r);
        base[static_cast<size_t>(i)] = 50.0 * (1.0 + rb);
        const double rc = scheme.r_bin_center(rb);
        shell[static_cast<size_t>(i)] = (rc >= 4.0 && rc < 6.0) ? 1 : 0;
    }

    auto bias_for = [&contact_preference](int a, int b) {
        auto it = contact_preference.find({a, b});
        if (it != contact_preference.end()) return it->second;
        it = contact_preference.find({b, a});
        return it != contact_preference.end() ? it->second : 0.0;
    };

    SplitMix64 rng{seed ^ 0x6d4d504774626cull};  // mix so seed 0 is fine
    for (int a = 0; a < kNumAminoAcids; ++a) {
        for (int b = 0; b < kNumAminoAcids; ++b) {
            const double boltz = std::exp(-bias_for(a, b) / rt);
            const std::int64_t off = t.pair_offset(a, b);
            for (std::int64_t i = 0; i < g; ++i) {
                const double eps = uniform(rng.next(), -0.05, 0.05);
                const double obs = base[static_cast<size_t>(i)] *
                                   (shell[static_cast<size_t>(i)] ? boltz : 1.0) * std::exp(eps);
                t.counts_obs[static_cast<size_t>(off + i)] = static_cast<float>(obs);
                t.counts_ref[static_cast<size_t>(off + i)] = static_cast<float>(base[static_cast<size_t>(i)]);
            }
        }
    }
    t.refresh_totals();
    return t;
}

}  // namespace mmpg
