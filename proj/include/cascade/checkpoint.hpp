#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cascade/optim.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

// Flat binary parameter container:
//   magic "CASC" | version u32 | records...
// record: name_len u32 | name bytes | rank u32 | extents u32[rank] | f32 data
// All integers and floats little-endian. Values are stored as 32-bit
// floats; loading yields doubles that are exact f32 values, so
// save(load(file)) reproduces the file byte for byte.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);
void save_checkpoint(const std::string& path, const ParamStore& store);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Loads into an existing store; every record must match an existing
// parameter's name and shape, and every parameter must be covered.
void load_checkpoint_into(const std::string& path, ParamStore& store);

// FNV-1a over the file bytes, for provenance records.
uint64_t file_fingerprint(const std::string& path);

}  // namespace cascade
