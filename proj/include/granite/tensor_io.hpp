#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "granite/tensor.hpp"

namespace granite {

// Binary tensor container, little-endian throughout:
//   magic "GTNS" | u32 version | u32 rank | u64 dims[rank] | u8 dtype | payload
// dtype 0 = float32, 1 = float64.
enum class IoErrorKind {
    BadMagic,
    BadVersion,
    Truncated,
    TrailingBytes,
    DimsMismatch,
    DtypeMismatch,
    OpenFailed,
};

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    IoErrorKind kind() const { return kind_; }

private:
    IoErrorKind kind_;
};

constexpr std::uint32_t kGtnsVersion = 1;

void write_tensor(const std::filesystem::path& path, const Tensor& t);
void write_tensor(const std::filesystem::path& path, const TensorD& t);

Tensor read_tensor_f32(const std::filesystem::path& path);
TensorD read_tensor_f64(const std::filesystem::path& path);

// Reads whatever dtype the file declares, widening f32 to f64 if needed.
TensorD read_tensor_any(const std::filesystem::path& path);

// In-memory encode/decode, used by the bundle format and by tests.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
std::vector<std::uint8_t> encode_tensor(const TensorD& t);
Tensor decode_tensor_f32(const std::uint8_t* bytes, std::size_t len);
TensorD decode_tensor_f64(const std::uint8_t* bytes, std::size_t len);

// Bundle of named tensors (model checkpoints):
//   magic "GTNB" | u32 version | u32 count |
//   count * ( u32 name_len | name bytes | u64 blob_len | GTNS blob )
// Entry order is preserved.
using TensorBundle = std::vector<std::pair<std::string, Tensor>>;

void write_bundle(const std::filesystem::path& path, const TensorBundle& bundle);
TensorBundle read_bundle(const std::filesystem::path& path);

const Tensor& bundle_get(const TensorBundle& b, const std::string& name);

}  // namespace granite
