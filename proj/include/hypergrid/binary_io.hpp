#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "hypergrid/common.hpp"

namespace hypergrid::io {

// Little-endian primitive encoding shared by the dataset format and the
// index sidecars.

template <typename T>
T to_little_endian(T value) {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    } else {
        return value;
    }
}

class Writer {
public:
    explicit Writer(const std::string& path);

    void magic(std::string_view tag);

    template <typename T>
    void put(T value) {
        const T le = to_little_endian(value);
        out_.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }

    template <typename T>
    void put_array(std::span<const T> values) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(values.data()),
                       static_cast<std::streamsize>(values.size_bytes()));
        } else {
            for (const T& v : values) put(v);
        }
    }

    template <typename T>
    void put_vector(const std::vector<T>& values) {
        put<std::uint64_t>(values.size());
        put_array(std::span<const T>(values));
    }

    void finish();

private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path);

    /// Throws FormatError naming the file when the 4-byte tag differs.
    void expect_magic(std::string_view tag);

    template <typename T>
    T get() {
        T value{};
        read_raw(&value, sizeof(T));
        return to_little_endian(value);
    }

    template <typename T>
    void get_array(std::span<T> values) {
        read_raw(values.data(), values.size_bytes());
        if constexpr (std::endian::native == std::endian::big) {
            for (T& v : values) v = to_little_endian(v);
        }
    }

    template <typename T>
    std::vector<T> get_vector(std::uint64_t max_count) {
        const auto count = get<std::uint64_t>();
        if (count > max_count) fail("array length " + std::to_string(count) + " out of range");
        std::vector<T> values(count);
        get_array(std::span<T>(values));
        return values;
    }

    [[noreturn]] void fail(const std::string& what) const;

    const std::string& path() const { return path_; }
    std::uint64_t remaining();

private:
    void read_raw(void* dst, std::size_t bytes);

    std::string path_;
    std::ifstream in_;
};

} // namespace hypergrid::io
