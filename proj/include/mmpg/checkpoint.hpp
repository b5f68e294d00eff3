#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmpg/autodiff.hpp"

namespace mmpg::ad {

/// Named-tensor container: a little-endian stream holding
///   [u64 manifest length][manifest JSON][concatenated float64 buffers].
/// The manifest records tensor names/shapes plus free-form metadata under
/// the "meta" key.
struct Checkpoint {
    nlohmann::json meta() const;
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
    std::string meta_text;  // serialized metadata JSON
};

void write_checkpoint(std::ostream& out, const nlohmann::json& meta,
                      const std::vector<const Tensor*>& params);

Checkpoint read_checkpoint(std::istream& in);

/// Copy checkpoint tensors into params, matching by name; throws
/// ShapeMismatch on a missing name or differing shape.
void restore_tensors(const Checkpoint& ckpt, const std::vector<Tensor*>& params);

}  // namespace mmpg::ad
