#include "mmreg/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mmreg {

namespace fs = std::filesystem;

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_number(std::string_view text, ErrorKind kind) {
    text = trim(text);
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
        throw Error(kind, "not a number: '" + std::string(text) + "'");
    }
    return v;
}

long parse_integer(std::string_view text, ErrorKind kind) {
    text = trim(text);
    long v = 0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
        throw Error(kind, "not an integer: '" + std::string(text) + "'");
    }
    return v;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IO, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IO, "cannot write '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::IO, "write failed for '" + path.string() + "'");
}

namespace {

enum class DType { F32, U8 };

struct Header {
    Geometry geometry;
    DType dtype = DType::F32;
    int components = 1;
    fs::path data;
};

Vec3 parse_triple(const std::string& value, const fs::path& path, const char* key) {
    std::istringstream ss(value);
    std::string a, b, c, extra;
    if (!(ss >> a >> b >> c) || (ss >> extra)) {
        throw Error(ErrorKind::IO, path.string() + ": '" + key + "' needs three values");
    }
    return {parse_number(a), parse_number(b), parse_number(c)};
}

Header read_header(const fs::path& path) {
    const std::string text = read_text_file(path);
    std::map<std::string, std::string> kv;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto colon = t.find(':');
        if (colon == std::string_view::npos) {
            throw Error(ErrorKind::IO, path.string() + ": malformed header line '" + std::string(t) + "'");
        }
        kv[std::string(trim(t.substr(0, colon)))] = std::string(trim(t.substr(colon + 1)));
    }
    for (const char* key : {"dims", "spacing", "dtype", "data"}) {
        if (!kv.count(key)) throw Error(ErrorKind::IO, path.string() + ": header missing '" + key + "'");
    }
    Header h;
    const Vec3 d = parse_triple(kv["dims"], path, "dims");
    for (int a = 0; a < 3; ++a) {
        if (d[a] != std::floor(d[a])) throw Error(ErrorKind::IO, path.string() + ": dims must be integers");
    }
    h.geometry.dims = {static_cast<int>(d.x), static_cast<int>(d.y), static_cast<int>(d.z)};
    h.geometry.spacing = parse_triple(kv["spacing"], path, "spacing");
    if (kv.count("origin")) h.geometry.origin = parse_triple(kv["origin"], path, "origin");
    if (kv["dtype"] == "f32") {
        h.dtype = DType::F32;
    } else if (kv["dtype"] == "u8") {
        h.dtype = DType::U8;
    } else {
        throw Error(ErrorKind::IO, path.string() + ": unsupported dtype '" + kv["dtype"] + "'");
    }
    if (kv.count("components")) h.components = static_cast<int>(parse_integer(kv["components"]));
    if (h.components != 1 && h.components != 3) {
        throw Error(ErrorKind::IO, path.string() + ": components must be 1 or 3");
    }
    try {
        h.geometry.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::IO, path.string() + ": " + e.what());
    }
    h.data = path.parent_path() / kv["data"];
    return h;
}

void write_header(const fs::path& path, const Geometry& g, DType dtype, int components) {
    const fs::path raw = fs::path(path).replace_extension(".raw");
    std::ostringstream ss;
    ss << "dims: " << g.dims.x << ' ' << g.dims.y << ' ' << g.dims.z << '\n';
    ss << "spacing: " << format_number(g.spacing.x) << ' ' << format_number(g.spacing.y) << ' '
       << format_number(g.spacing.z) << '\n';
    ss << "origin: " << format_number(g.origin.x) << ' ' << format_number(g.origin.y) << ' '
       << format_number(g.origin.z) << '\n';
    ss << "dtype: " << (dtype == DType::F32 ? "f32" : "u8") << '\n';
    ss << "components: " << components << '\n';
    ss << "data: " << raw.filename().string() << '\n';
    write_text_file(path, ss.str());
}

fs::path raw_path(const fs::path& header) { return fs::path(header).replace_extension(".raw"); }

std::vector<char> read_payload(const Header& h, std::size_t element_size) {
    const std::size_t expected = h.geometry.dims.count() * static_cast<std::size_t>(h.components) * element_size;
    std::ifstream in(h.data, std::ios::binary);
    if (!in) throw Error(ErrorKind::IO, "cannot open data file '" + h.data.string() + "'");
    std::vector<char> buf(expected);
    in.read(buf.data(), static_cast<std::streamsize>(expected));
    if (static_cast<std::size_t>(in.gcount()) != expected || in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorKind::IO, "data file '" + h.data.string() + "' has the wrong size");
    }
    return buf;
}

void write_payload(const fs::path& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IO, "cannot write '" + path.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw Error(ErrorKind::IO, "write failed for '" + path.string() + "'");
}

float load_f32(const char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, p, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    return std::bit_cast<float>(bits);
}

void store_f32(char* p, float v) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(p, &bits, 4);
}

}  // namespace

Volume read_volume(const fs::path& header) {
    const Header h = read_header(header);
    if (h.components != 1) throw Error(ErrorKind::IO, header.string() + ": expected a scalar volume");
    std::vector<float> data(h.geometry.dims.count());
    if (h.dtype == DType::F32) {
        const auto buf = read_payload(h, 4);
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = load_f32(buf.data() + 4 * i);
    } else {
        const auto buf = read_payload(h, 1);
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<unsigned char>(buf[i]);
    }
    return Volume(h.geometry, std::move(data));
}

void write_volume(const fs::path& header, const Volume& vol) {
    std::vector<char> buf(vol.size() * 4);
    for (std::size_t i = 0; i < vol.size(); ++i) store_f32(buf.data() + 4 * i, vol[i]);
    write_payload(raw_path(header), buf.data(), buf.size());
    write_header(header, vol.geometry(), DType::F32, 1);
}

SegmentationMask read_mask(const fs::path& header) {
    const Header h = read_header(header);
    if (h.components != 1 || h.dtype != DType::U8) {
        throw Error(ErrorKind::IO, header.string() + ": masks must be single-component u8");
    }
    const auto buf = read_payload(h, 1);
    std::vector<std::uint8_t> data(buf.size());
    std::memcpy(data.data(), buf.data(), buf.size());
    return SegmentationMask(h.geometry, std::move(data));
}

void write_mask(const fs::path& header, const SegmentationMask& mask) {
    write_payload(raw_path(header), mask.data().data(), mask.size());
    write_header(header, mask.geometry(), DType::U8, 1);
}

DenseField read_field(const fs::path& header) {
    const Header h = read_header(header);
    if (h.components != 3 || h.dtype != DType::F32) {
        throw Error(ErrorKind::IO, header.string() + ": fields must be 3-component f32");
    }
    const auto buf = read_payload(h, 4);
    std::vector<Vec3> data(h.geometry.dims.count());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const char* p = buf.data() + 12 * i;
        data[i] = {load_f32(p), load_f32(p + 4), load_f32(p + 8)};
    }
    return DenseField(h.geometry, std::move(data));
}

void write_field(const fs::path& header, const DenseField& field) {
    std::vector<char> buf(field.size() * 12);
    for (std::size_t i = 0; i < field.size(); ++i) {
        char* p = buf.data() + 12 * i;
        store_f32(p, static_cast<float>(field[i].x));
        store_f32(p + 4, static_cast<float>(field[i].y));
        store_f32(p + 8, static_cast<float>(field[i].z));
    }
    write_payload(raw_path(header), buf.data(), buf.size());
    write_header(header, field.geometry(), DType::F32, 3);
}

}  // namespace mmreg
