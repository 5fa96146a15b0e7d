#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace glassbox {

/// CRC-32 (ISO-HDLC polynomial, as used by zlib and PNG). `crc` chains calls.
std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t crc = 0);
std::uint32_t crc32(std::span<const float> values, std::uint32_t crc = 0);
std::uint32_t file_crc32(const std::string& path);

std::string hex32(std::uint32_t value);

/// Little-endian encoding helpers for the binary container formats.
void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values);
std::uint32_t read_u32(const std::uint8_t* p);
std::uint64_t read_u64(const std::uint8_t* p);
void read_f32(const std::uint8_t* p, std::span<float> out);

}  // namespace glassbox
