#include "gradweave/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "GWT1 I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace gradweave {

namespace {
constexpr char kMagic[4] = {'G', 'W', 'T', '1'};

void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("GWT1: truncated header");
    return v;
}
}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 4);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int e : t.shape) write_u32(os, static_cast<uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!os) throw std::runtime_error("GWT1: write failed");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("GWT1: bad magic");
    uint32_t rank = read_u32(is);
    if (rank > 8) throw std::runtime_error("GWT1: implausible rank");
    std::vector<int> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(read_u32(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("GWT1: truncated payload");
    return t;
}

void write_tensor_file(const std::string& path, const std::vector<Tensor>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& t : records) write_tensor(os, t);
}

std::vector<Tensor> read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<Tensor> out;
    while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
    return out;
}

}  // namespace gradweave
