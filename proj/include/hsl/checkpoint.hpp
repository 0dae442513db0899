#pragma once

#include <string>

#include "hsl/net.hpp"

namespace hsl {

// Binary parameter snapshot. Layout, all little-endian:
//   magic "HSLB" | version u16 | count u32 |
//   per parameter: name_len u16, name bytes, rank u8, dims u32..., f32 values
// Round-trips are bitwise exact.
std::string encode_params(const ModelParams& params);
ModelParams decode_params(const std::string& bytes);

void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace hsl
