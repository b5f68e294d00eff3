#include "mmpg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mmpg/errors.hpp"

namespace mmpg::ad {

namespace {

void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw TruncatedPayload("checkpoint: short manifest length");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

nlohmann::json Checkpoint::meta() const { return nlohmann::json::parse(meta_text); }

void write_checkpoint(std::ostream& out, const nlohmann::json& meta,
                      const std::vector<const Tensor*>& params) {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    for (const Tensor* p : params) {
        manifest["tensors"].push_back(
            {{"name", p->name}, {"rows", p->rows()}, {"cols", p->cols()}});
    }
    const std::string text = manifest.dump();
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    // Row-major element order so the buffer layout is independent of Eigen's
    // default storage.
    for (const Tensor* p : params) {
        for (int r = 0; r < p->rows(); ++r) {
            for (int c = 0; c < p->cols(); ++c) {
                const double v = p->value(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(double));
            }
        }
    }
}

Checkpoint read_checkpoint(std::istream& in) {
    const uint64_t len = read_u64(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<uint64_t>(in.gcount()) != len) throw TruncatedPayload("checkpoint: short manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw TruncatedPayload(std::string("checkpoint: bad manifest: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.meta_text = manifest.value("meta", nlohmann::json::object()).dump();
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const int rows = entry.at("rows").get<int>();
        const int cols = entry.at("cols").get<int>();
        if (rows < 0 || cols < 0) throw ShapeMismatch("checkpoint: negative shape for " + name);
        Eigen::MatrixXd m(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(double));
                if (in.gcount() != sizeof(double))
                    throw TruncatedPayload("checkpoint: short payload for " + name);
                m(r, c) = v;
            }
        }
        ckpt.tensors.emplace_back(name, std::move(m));
    }
    return ckpt;
}

void restore_tensors(const Checkpoint& ckpt, const std::vector<Tensor*>& params) {
    std::map<std::string, const Eigen::MatrixXd*> by_name;
    for (const auto& [name, m] : ckpt.tensors) by_name[name] = &m;
    for (Tensor* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw ShapeMismatch("checkpoint: missing tensor " + p->name);
        if (it->second->rows() != p->value.rows() || it->second->cols() != p->value.cols())
            throw ShapeMismatch("checkpoint: shape mismatch for " + p->name);
        p->value = *it->second;
        p->grad = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
    }
}

}  // namespace mmpg::ad
