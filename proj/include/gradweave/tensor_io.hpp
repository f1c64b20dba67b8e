#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "gradweave/tensor.hpp"

namespace gradweave {

// "GWT1" tensor format: magic "GWT1", u32 rank, u32 extents[rank], then the
// payload as little-endian 32-bit reals. Files may hold several records
// back to back.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void write_tensor_file(const std::string& path, const std::vector<Tensor>& records);
std::vector<Tensor> read_tensor_file(const std::string& path);

}  // namespace gradweave
