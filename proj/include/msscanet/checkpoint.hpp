#pragma once

#include <map>
#include <string>
#include <vector>

#include "msscanet/model.hpp"

namespace msscanet {

// Binary container: magic "MSCN", version u16, tensor count u32; per tensor
// a u16 name length + UTF-8 name, rank u8, extents u32 each, dtype u8
// (0 = 64-bit float, 1 = 32-bit float) and the raw little-endian payload;
// then a u32-length-prefixed key=value config block. dtype 0 roundtrips
// bit-exactly; dtype 1 is a lossy serialization option.
constexpr uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path, int dtype = 0,
                     const std::map<std::string, std::string>& extra = {});

struct LoadedCheckpoint {
    Model model;
    std::map<std::string, std::string> extra;  // config-block keys beyond the model config
};

// Rebuilds the model from the stored config, then fills every parameter.
// Fails closed: magic mismatch, truncation, and missing/unexpected parameter
// names are distinct DataErrors and no partial model is returned.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace msscanet
