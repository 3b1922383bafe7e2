#include "brainrot/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "brainrot/errors.hpp"

namespace brainrot {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError("tensor archive: truncated payload");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

NamedTensor NamedTensor::vector(std::string name, const MatX& row) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = {static_cast<std::uint32_t>(row.size())};
    t.data = row;
    t.data.resize(1, row.size());
    return t;
}

NamedTensor NamedTensor::matrix(std::string name, const MatX& m) {
    NamedTensor t;
    t.name = std::move(name);
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data = m;
    return t;
}

std::vector<std::uint8_t> archive_bytes(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'B', 'R', 'V', 'T'});
    put_u32(out, 1u);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xffff) throw FormatError("tensor archive: name too long");
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<std::uint8_t>(t.dims.size()));
        std::uint64_t count = 1;
        for (std::uint32_t d : t.dims) {
            put_u32(out, d);
            count *= d;
        }
        if (count != static_cast<std::uint64_t>(t.data.size()))
            throw FormatError("tensor archive: dims do not match data for " + t.name);
        for (Eigen::Index i = 0; i < t.data.rows(); ++i)
            for (Eigen::Index j = 0; j < t.data.cols(); ++j)
                put_f32(out, static_cast<float>(t.data(i, j)));
    }
    return out;
}

void save_tensor_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    const auto bytes = archive_bytes(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("tensor archive: cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("tensor archive: write failed: " + path.string());
}

std::vector<NamedTensor> load_tensor_archive(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("tensor archive: cannot open: " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.str(4) != "BRVT") throw FormatError("tensor archive: bad magic in " + path.string());
    if (r.u32() != 1u) throw FormatError("tensor archive: unsupported version in " + path.string());
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedTensor t;
        t.name = r.str(r.u16());
        const std::uint8_t rank = r.u8();
        if (rank < 1 || rank > 2) throw FormatError("tensor archive: unsupported rank for " + t.name);
        std::uint64_t total = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            t.dims.push_back(r.u32());
            total *= t.dims.back();
        }
        if (total > (1ull << 32)) throw FormatError("tensor archive: dimension overflow for " + t.name);
        const Eigen::Index rows = rank == 2 ? static_cast<Eigen::Index>(t.dims[0]) : 1;
        const Eigen::Index cols = rank == 2 ? static_cast<Eigen::Index>(t.dims[1])
                                            : static_cast<Eigen::Index>(t.dims[0]);
        t.data.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) t.data(i, j) = static_cast<Scalar>(r.f32());
        tensors.push_back(std::move(t));
    }
    return tensors;
}

std::uint64_t archive_checksum(const std::vector<NamedTensor>& tensors) {
    const auto bytes = archive_bytes(tensors);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw FormatError("tensor archive: missing tensor " + name);
}

}  // namespace brainrot
