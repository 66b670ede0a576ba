#include "hypergrid/binary_io.hpp"

namespace hypergrid::io {

Writer::Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open " + path + " for writing");
}

void Writer::magic(std::string_view tag) {
    out_.write(tag.data(), static_cast<std::streamsize>(tag.size()));
}

void Writer::finish() {
    out_.flush();
    if (!out_) throw FormatError("write failed: " + path_);
    out_.close();
}

Reader::Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open " + path);
}

void Reader::expect_magic(std::string_view tag) {
    std::string got(tag.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!in_ || got != tag) fail("bad magic, expected \"" + std::string(tag) + "\"");
}

void Reader::fail(const std::string& what) const {
    throw FormatError(path_ + ": " + what);
}

std::uint64_t Reader::remaining() {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    return static_cast<std::uint64_t>(end - here);
}

void Reader::read_raw(void* dst, std::size_t bytes) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!in_) fail("truncated file");
}

} // namespace hypergrid::io
