#include "granite/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "GTNS serialization assumes a little-endian host");

namespace granite {
namespace {

constexpr char kMagic[4] = {'G', 'T', 'N', 'S'};
constexpr char kBundleMagic[4] = {'G', 'T', 'N', 'B'};

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), end_(p + n) {}

    void raw(void* out, std::size_t n) {
        if (remaining() < n) throw IoError(IoErrorKind::Truncated, "tensor file truncated");
        std::memcpy(out, p_, n);
        p_ += n;
    }
    std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
    const std::uint8_t* cursor() const { return p_; }
    void skip(std::size_t n) {
        if (remaining() < n) throw IoError(IoErrorKind::Truncated, "tensor file truncated");
        p_ += n;
    }

private:
    const std::uint8_t* p_;
    const std::uint8_t* end_;
};

template <typename T>
std::vector<std::uint8_t> encode_impl(const TensorT<T>& t, std::uint8_t dtype) {
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kGtnsVersion);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) w.u64(d);
    w.u8(dtype);
    w.raw(t.ptr(), t.size() * sizeof(T));
    return w.take();
}

struct Header {
    std::vector<std::size_t> dims;
    std::uint8_t dtype;
    std::size_t count;
};

Header read_header(ByteReader& r) {
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError(IoErrorKind::BadMagic, "not a GTNS tensor file");
    std::uint32_t version = r.u32();
    if (version != kGtnsVersion)
        throw IoError(IoErrorKind::BadVersion,
                      "unsupported GTNS version " + std::to_string(version));
    std::uint32_t rank = r.u32();
    Header h;
    h.count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t d = r.u64();
        if (d == 0) throw IoError(IoErrorKind::DimsMismatch, "zero dimension in header");
        h.dims.push_back(static_cast<std::size_t>(d));
        h.count *= static_cast<std::size_t>(d);
    }
    h.dtype = r.u8();
    if (h.dtype > 1)
        throw IoError(IoErrorKind::DtypeMismatch,
                      "unknown dtype tag " + std::to_string(h.dtype));
    return h;
}

template <typename T>
TensorT<T> decode_payload(ByteReader& r, const Header& h) {
    std::size_t bytes = h.count * sizeof(T);
    if (r.remaining() < bytes)
        throw IoError(IoErrorKind::Truncated, "payload shorter than header promises");
    std::vector<T> data(h.count);
    r.raw(data.data(), bytes);
    if (r.remaining() != 0)
        throw IoError(IoErrorKind::TrailingBytes, "trailing bytes after payload");
    return TensorT<T>(h.dims, std::move(data));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorKind::OpenFailed, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    auto n = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(n);
    if (n) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!in) throw IoError(IoErrorKind::Truncated, "short read on " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorKind::OpenFailed, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(IoErrorKind::OpenFailed, "short write on " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) { return encode_impl(t, 0); }
std::vector<std::uint8_t> encode_tensor(const TensorD& t) { return encode_impl(t, 1); }

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    write_file(path, encode_tensor(t));
}
void write_tensor(const std::filesystem::path& path, const TensorD& t) {
    write_file(path, encode_tensor(t));
}

Tensor decode_tensor_f32(const std::uint8_t* bytes, std::size_t len) {
    ByteReader r(bytes, len);
    Header h = read_header(r);
    if (h.dtype != 0)
        throw IoError(IoErrorKind::DtypeMismatch, "expected float32 payload");
    return decode_payload<float>(r, h);
}

TensorD decode_tensor_f64(const std::uint8_t* bytes, std::size_t len) {
    ByteReader r(bytes, len);
    Header h = read_header(r);
    if (h.dtype != 1)
        throw IoError(IoErrorKind::DtypeMismatch, "expected float64 payload");
    return decode_payload<double>(r, h);
}

Tensor read_tensor_f32(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return decode_tensor_f32(bytes.data(), bytes.size());
}

TensorD read_tensor_f64(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return decode_tensor_f64(bytes.data(), bytes.size());
}

TensorD read_tensor_any(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size());
    Header h = read_header(r);
    if (h.dtype == 1) return decode_payload<double>(r, h);
    Tensor t = decode_payload<float>(r, h);
    TensorD out(t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(t[i]);
    return out;
}

void write_bundle(const std::filesystem::path& path, const TensorBundle& bundle) {
    ByteWriter w;
    w.raw(kBundleMagic, 4);
    w.u32(kGtnsVersion);
    w.u32(static_cast<std::uint32_t>(bundle.size()));
    for (const auto& [name, tensor] : bundle) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        auto blob = encode_tensor(tensor);
        w.u64(blob.size());
        w.raw(blob.data(), blob.size());
    }
    write_file(path, w.take());
}

TensorBundle read_bundle(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size());
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kBundleMagic, 4) != 0)
        throw IoError(IoErrorKind::BadMagic, "not a GTNB bundle file");
    std::uint32_t version = r.u32();
    if (version != kGtnsVersion)
        throw IoError(IoErrorKind::BadVersion,
                      "unsupported GTNB version " + std::to_string(version));
    std::uint32_t count = r.u32();
    TensorBundle out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.raw(name.data(), name_len);
        std::uint64_t blob_len = r.u64();
        if (r.remaining() < blob_len)
            throw IoError(IoErrorKind::Truncated, "bundle entry truncated");
        out.emplace_back(std::move(name),
                         decode_tensor_f32(r.cursor(), static_cast<std::size_t>(blob_len)));
        r.skip(static_cast<std::size_t>(blob_len));
    }
    if (r.remaining() != 0)
        throw IoError(IoErrorKind::TrailingBytes, "trailing bytes after bundle");
    return out;
}

const Tensor& bundle_get(const TensorBundle& b, const std::string& name) {
    for (const auto& [n, t] : b)
        if (n == name) return t;
    throw IoError(IoErrorKind::DimsMismatch, "bundle has no tensor named " + name);
}

}  // namespace granite
