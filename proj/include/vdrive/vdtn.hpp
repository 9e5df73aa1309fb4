#pragma once

#include <iosfwd>
#include <string>

#include "vdrive/tensor.hpp"

namespace vdrive {

// VDTN tensor file format.
//   bytes 0-3  magic "VDTN"
//   byte  4    version (1)
//   byte  5    dtype (0 = f32)
//   byte  6    rank r
//   byte  7    zero
//   r x u64    extents, little endian
//   payload    row-major f32, little endian
// Round-trips are bit-exact.

void write_vdtn(std::ostream& out, const Tensor& t);
Tensor read_vdtn(std::istream& in, const std::string& what);

void save_vdtn(const std::string& path, const Tensor& t);
Tensor load_vdtn(const std::string& path);

}  // namespace vdrive
