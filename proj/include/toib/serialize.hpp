#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "toib/errors.hpp"

namespace toib {

// Little-endian binary primitives. Values are byte-swapped on big-endian
// hosts so files are identical across platforms.

namespace detail {

template <typename T>
T to_le(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        T out;
        auto* src = reinterpret_cast<const uint8_t*>(&v);
        auto* dst = reinterpret_cast<uint8_t*>(&out);
        for (size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
        return out;
    }
    return v;
}

}  // namespace detail

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open " + path + " for writing");
    }

    void u32(uint32_t v) { put(detail::to_le(v)); }
    void u64(uint64_t v) { put(detail::to_le(v)); }

    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void bytes(const void* data, size_t n) { out_.write(static_cast<const char*>(data), static_cast<long>(n)); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void f64_array(const std::vector<double>& v) {
        for (const double x : v) f64(x);
    }

    void close() {
        out_.close();
        if (!out_) throw FormatError("write failure on " + path_);
    }

private:
    template <typename T>
    void put(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    std::string path_;
    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw FormatError("cannot open " + path + " for reading");
    }

    uint32_t u32() { return detail::to_le(get<uint32_t>()); }
    uint64_t u64() { return detail::to_le(get<uint64_t>()); }

    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void bytes(void* data, size_t n) {
        in_.read(static_cast<char*>(data), static_cast<long>(n));
        check(n);
    }

    std::string str(size_t max_len = 1u << 20) {
        const uint32_t n = u32();
        if (n > max_len) throw FormatError(path_ + ": string length " + std::to_string(n) + " at offset " +
                                           std::to_string(offset_) + " exceeds limit");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

    std::vector<double> f64_array(size_t n) {
        std::vector<double> v(n);
        for (double& x : v) x = f64();
        return v;
    }

    void expect_magic(const char* magic, size_t n) {
        std::vector<char> buf(n);
        bytes(buf.data(), n);
        if (std::memcmp(buf.data(), magic, n) != 0)
            throw FormatError(path_ + ": bad magic at offset 0, expected \"" + std::string(magic, n) + "\"");
    }

    size_t offset() const { return offset_; }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    template <typename T>
    T get() {
        T v;
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        check(sizeof(T));
        return v;
    }

    void check(size_t n) {
        if (!in_)
            throw FormatError(path_ + ": truncated at byte offset " + std::to_string(offset_));
        offset_ += n;
    }

    std::string path_;
    std::ifstream in_;
    size_t offset_ = 0;
};

}  // namespace toib
