#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "artifact/tensor.hpp"

namespace artifact {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Raw little-endian doubles, concatenated in list order. The returned index
// (name, shape, offset in doubles) goes into the checkpoint's JSON metadata
// so blobs round-trip bit-exactly.
nlohmann::json write_tensor_blob(const std::string& bin_path,
                                 const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> read_tensor_blob(const std::string& bin_path,
                                          const nlohmann::json& index);

}  // namespace artifact
