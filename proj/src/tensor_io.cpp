#include "oodno/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace oodno::io {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("truncated tensor file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor, const std::string& name,
                  const std::string& role) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kTensorMagic, sizeof(kTensorMagic));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (auto extent : tensor.shape()) put_le<std::uint64_t>(os, extent);
    for (double v : tensor.data()) put_le<double>(os, v);
    if (!os) throw std::runtime_error("failed writing " + path.string());

    nlohmann::ordered_json meta;
    meta["name"] = name;
    meta["dtype"] = tensor.is_complex() ? "complex128" : "float64";
    meta["role"] = role;
    meta["shape"] = tensor.shape();
    std::ofstream js(sidecar_path(path));
    js << meta.dump(2) << '\n';
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open tensor file " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kTensorMagic, 8) != 0) {
        throw std::runtime_error(path.string() + " is not a tensor file (bad magic)");
    }
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));

    DType dtype = DType::Real;
    if (std::ifstream js(sidecar_path(path)); js) {
        auto meta = nlohmann::json::parse(js);
        if (meta.value("dtype", "float64") == "complex128") dtype = DType::Complex;
    }
    Tensor t(shape, dtype);
    for (double& v : t.data()) v = get_le<double>(is);
    return t;
}

}  // namespace oodno::io
