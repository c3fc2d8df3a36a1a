#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "campd/tensor.hpp"

namespace campd {

using NamedTensor = std::pair<std::string, Tensor>;

// Flat binary weight container: magic "CAMPDW1", version u32 LE, then one
// record per tensor (u32 name length, UTF-8 name, u32 rank, extents as u64 LE,
// raw f64 payload). Round-trips bit-exactly.
void save_weights(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(std::istream& is);

void save_weights_file(const std::string& path,
                       const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights_file(const std::string& path);

// Checkpoint file: one line of JSON config text, then the weight container.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<NamedTensor>& tensors);
std::pair<std::string, std::vector<NamedTensor>> load_checkpoint(
    const std::string& path);

}  // namespace campd
