#include "artifact/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace artifact {

nlohmann::json write_tensor_blob(const std::string& bin_path,
                                 const std::vector<NamedTensor>& tensors) {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write tensor blob: " + bin_path);
    nlohmann::json index = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& nt : tensors) {
        index.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}});
        out.write(reinterpret_cast<const char*>(nt.tensor.data()),
                  static_cast<std::streamsize>(sizeof(double)) * nt.tensor.size());
        offset += static_cast<size_t>(nt.tensor.size());
    }
    if (!out) throw std::runtime_error("tensor blob write failed: " + bin_path);
    return index;
}

std::vector<NamedTensor> read_tensor_blob(const std::string& bin_path,
                                          const nlohmann::json& index) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read tensor blob: " + bin_path);
    std::vector<NamedTensor> out;
    for (const auto& entry : index) {
        NamedTensor nt;
        nt.name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::vector<int>>();
        nt.tensor = Tensor(shape);
        size_t offset = entry.at("offset").get<size_t>();
        in.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
        in.read(reinterpret_cast<char*>(nt.tensor.data()),
                static_cast<std::streamsize>(sizeof(double)) * nt.tensor.size());
        if (!in) throw std::runtime_error("tensor blob truncated: " + bin_path);
        out.push_back(std::move(nt));
    }
    return out;
}

}  // namespace artifact
