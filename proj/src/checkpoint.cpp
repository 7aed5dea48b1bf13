#include "obn/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "obn/error.hpp"

namespace obn {

namespace {

constexpr char kMagic[8] = {'O', 'B', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}
void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<unsigned char>& buf;
    size_t pos = 0;
    std::string context = "header";

    void need(size_t n) {
        if (pos + n > buf.size())
            throw FormatError("checkpoint: truncated while reading " + context + " (offset " +
                              std::to_string(pos) + ", need " + std::to_string(n) + " bytes)");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint8_t u8() {
        need(1);
        return buf[pos++];
    }
};

size_t dtype_size(CkptDtype d) {
    switch (d) {
    case CkptDtype::f32: return 4;
    case CkptDtype::f64: return 8;
    case CkptDtype::u64: return 8;
    }
    return 0;
}

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

} // namespace

uint32_t crc32_ieee(const unsigned char* data, size_t n, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void save_checkpoint(const std::string& path, const std::vector<CkptEntry>& entries) {
    std::vector<unsigned char> body;
    put_u32(body, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) throw FormatError("checkpoint: entry name too long");
        if (e.raw.size() != e.element_count() * dtype_size(e.dtype))
            throw FormatError("checkpoint: entry '" + e.name + "' raw size mismatch");
        put_u16(body, static_cast<uint16_t>(e.name.size()));
        body.insert(body.end(), e.name.begin(), e.name.end());
        body.push_back(static_cast<unsigned char>(e.dtype));
        body.push_back(static_cast<unsigned char>(e.extents.size()));
        for (uint32_t x : e.extents) put_u32(body, x);
        body.insert(body.end(), e.raw.begin(), e.raw.end());
    }
    put_u32(body, crc32_ieee(body.data(), body.size()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

std::vector<CkptEntry> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + 8)
        throw FormatError("checkpoint: '" + path + "' too short (" +
                          std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("checkpoint: '" + path + "' has bad magic");
    const std::vector<unsigned char> body(bytes.begin() + sizeof(kMagic), bytes.end() - 4);
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
    if (crc32_ieee(body.data(), body.size()) != stored)
        throw FormatError("checkpoint: '" + path + "' CRC mismatch");

    Reader r{body};
    const uint32_t count = r.u32();
    std::vector<CkptEntry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CkptEntry e;
        r.context = "entry " + std::to_string(i) + " name";
        const uint16_t len = r.u16();
        r.need(len);
        e.name.assign(body.begin() + static_cast<long>(r.pos), body.begin() + static_cast<long>(r.pos + len));
        r.pos += len;
        r.context = "entry '" + e.name + "'";
        const uint8_t dt = r.u8();
        if (dt < 1 || dt > 3)
            throw FormatError("checkpoint: entry '" + e.name + "' has unknown dtype code " +
                              std::to_string(dt));
        e.dtype = static_cast<CkptDtype>(dt);
        const uint8_t rank = r.u8();
        for (uint8_t d = 0; d < rank; ++d) e.extents.push_back(r.u32());
        const size_t nbytes = e.element_count() * dtype_size(e.dtype);
        r.need(nbytes);
        e.raw.assign(body.begin() + static_cast<long>(r.pos), body.begin() + static_cast<long>(r.pos + nbytes));
        r.pos += nbytes;
        entries.push_back(std::move(e));
    }
    if (r.pos != body.size())
        throw FormatError("checkpoint: '" + path + "' has " +
                          std::to_string(body.size() - r.pos) + " trailing bytes");
    return entries;
}

void encode_f32(std::vector<unsigned char>& out, const float* v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t b;
        std::memcpy(&b, &v[i], 4);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>((b >> (8 * k)) & 0xff));
    }
}
void encode_f64(std::vector<unsigned char>& out, const double* v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint64_t b;
        std::memcpy(&b, &v[i], 8);
        for (int k = 0; k < 8; ++k) out.push_back(static_cast<unsigned char>((b >> (8 * k)) & 0xff));
    }
}
void encode_u64(std::vector<unsigned char>& out, const uint64_t* v, size_t n) {
    for (size_t i = 0; i < n; ++i)
        for (int k = 0; k < 8; ++k) out.push_back(static_cast<unsigned char>((v[i] >> (8 * k)) & 0xff));
}
void decode_f32(const std::vector<unsigned char>& in, float* v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t b = 0;
        for (int k = 0; k < 4; ++k) b |= static_cast<uint32_t>(in[i * 4 + static_cast<size_t>(k)]) << (8 * k);
        std::memcpy(&v[i], &b, 4);
    }
}
void decode_f64(const std::vector<unsigned char>& in, double* v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint64_t b = 0;
        for (int k = 0; k < 8; ++k) b |= static_cast<uint64_t>(in[i * 8 + static_cast<size_t>(k)]) << (8 * k);
        std::memcpy(&v[i], &b, 8);
    }
}
void decode_u64(const std::vector<unsigned char>& in, uint64_t* v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint64_t b = 0;
        for (int k = 0; k < 8; ++k) b |= static_cast<uint64_t>(in[i * 8 + static_cast<size_t>(k)]) << (8 * k);
        v[i] = b;
    }
}

} // namespace obn
