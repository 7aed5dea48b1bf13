#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace obn {

/// Checkpoint file: magic "OBNCKPT1", little-endian throughout; u32 entry
/// count; per entry u16 name length, UTF-8 name, u8 dtype code, u8 rank,
/// u32 extents, raw data; trailing CRC32 over everything after the magic.
enum class CkptDtype : uint8_t { f32 = 1, f64 = 2, u64 = 3 };

struct CkptEntry {
    std::string name;
    CkptDtype dtype = CkptDtype::f32;
    std::vector<uint32_t> extents;
    std::vector<unsigned char> raw; // little-endian element bytes

    size_t element_count() const {
        size_t n = 1;
        for (uint32_t e : extents) n *= e;
        return n;
    }
};

void save_checkpoint(const std::string& path, const std::vector<CkptEntry>& entries);

/// Throws FormatError naming the offending entry on bad magic, truncation,
/// or CRC mismatch.
std::vector<CkptEntry> load_checkpoint(const std::string& path);

uint32_t crc32_ieee(const unsigned char* data, size_t n, uint32_t seed = 0);

// -- element encode/decode helpers (little-endian) --------------------------

void encode_f32(std::vector<unsigned char>& out, const float* v, size_t n);
void encode_f64(std::vector<unsigned char>& out, const double* v, size_t n);
void encode_u64(std::vector<unsigned char>& out, const uint64_t* v, size_t n);
void decode_f32(const std::vector<unsigned char>& in, float* v, size_t n);
void decode_f64(const std::vector<unsigned char>& in, double* v, size_t n);
void decode_u64(const std::vector<unsigned char>& in, uint64_t* v, size_t n);

} // namespace obn
