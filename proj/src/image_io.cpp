#include "causiam/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "causiam/errors.hpp"

namespace causiam {

namespace {

std::uint8_t quantize(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(buf.data()), n);
    if (!f) throw IoError("short read: " + path);
    return buf;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("short write: " + path);
}

bool ends_with(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    std::string tail = s.substr(s.size() - suf.size());
    for (char& c : tail) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return tail == suf;
}

// ---------------- PPM (P6) ----------------

int ppm_token(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
    // Skips whitespace and '#' comments, then parses a decimal integer.
    while (pos < buf.size()) {
        if (std::isspace(buf[pos])) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || !std::isdigit(buf[pos])) throw FormatError("malformed PPM header");
    long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
        v = v * 10 + (buf[pos] - '0');
        if (v > (1L << 31)) throw FormatError("PPM header value out of range");
        ++pos;
    }
    return static_cast<int>(v);
}

Image load_ppm(const std::vector<std::uint8_t>& buf, const std::string& path) {
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') throw FormatError("not a P6 PPM: " + path);
    std::size_t pos = 2;
    int w = ppm_token(buf, pos);
    int h = ppm_token(buf, pos);
    int maxval = ppm_token(buf, pos);
    if (w <= 0 || h <= 0) throw FormatError("invalid PPM dimensions");
    if (maxval <= 0 || maxval > 65535) throw FormatError("unsupported PPM bit depth (>16)");
    ++pos;  // single whitespace after maxval
    const int bytes_per_sample = maxval > 255 ? 2 : 1;
    std::size_t need = static_cast<std::size_t>(w) * h * 3 * bytes_per_sample;
    if (buf.size() - pos < need) throw FormatError("truncated PPM payload");
    Image img(h, w);
    const double scale = 1.0 / maxval;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                int v;
                if (bytes_per_sample == 1) {
                    v = buf[pos++];
                } else {
                    v = buf[pos] << 8 | buf[pos + 1];
                    pos += 2;
                }
                img.at(c, y, x) = v * scale;
            }
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> buf(header.begin(), header.end());
    buf.reserve(buf.size() + img.numel());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) buf.push_back(quantize(img.at(c, y, x)));
    write_file(path, buf);
}

// ---------------- PNG ----------------

const std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) << 24 | static_cast<std::uint32_t>(p[1]) << 16 |
           static_cast<std::uint32_t>(p[2]) << 8 | static_cast<std::uint32_t>(p[3]);
}

void png_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> deflate_buf(const std::vector<std::uint8_t>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("zlib compression failed");
    out.resize(bound);
    return out;
}

std::vector<std::uint8_t> inflate_buf(const std::vector<std::uint8_t>& comp, std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf n = static_cast<uLongf>(expected);
    int rc = uncompress(out.data(), &n, comp.data(), static_cast<uLong>(comp.size()));
    if (rc != Z_OK || n != expected) throw FormatError("corrupt PNG image data");
    return out;
}

void save_png(const Image& img, const std::string& path) {
    std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    png_chunk(out, "IHDR", ihdr);

    // Filter type 0 on every scanline keeps the encoder deterministic.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * img.width));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) raw.push_back(quantize(img.at(c, y, x)));
    }
    png_chunk(out, "IDAT", deflate_buf(raw));
    png_chunk(out, "IEND", {});
    write_file(path, out);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

Image load_png(const std::vector<std::uint8_t>& buf, const std::string& path) {
    if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0)
        throw FormatError("not a PNG file: " + path);

    std::uint32_t w = 0, h = 0;
    int bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool seen_ihdr = false, seen_iend = false;
    while (pos + 12 <= buf.size() && !seen_iend) {
        std::uint32_t len = get_u32(&buf[pos]);
        if (pos + 12 + len > buf.size()) throw FormatError("truncated PNG chunk");
        std::string type(reinterpret_cast<const char*>(&buf[pos + 4]), 4);
        const std::uint8_t* payload = &buf[pos + 8];
        if (type == "IHDR") {
            if (len != 13) throw FormatError("bad IHDR");
            w = get_u32(payload);
            h = get_u32(payload + 4);
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw FormatError("interlaced PNG not supported");
            seen_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || w == 0 || h == 0) throw FormatError("missing PNG header");
    if (bit_depth > 16) throw FormatError("unsupported bit depth (>16)");
    if (bit_depth != 8 && bit_depth != 16) throw FormatError("unsupported PNG bit depth");

    int channels;
    switch (color_type) {
        case 0: channels = 1; break;  // gray
        case 2: channels = 3; break;  // rgb
        case 4: channels = 2; break;  // gray+alpha
        case 6: channels = 4; break;  // rgba
        default: throw FormatError("unsupported PNG color type");
    }

    const int bps = bit_depth / 8;
    const std::size_t stride = static_cast<std::size_t>(w) * channels * bps;
    std::vector<std::uint8_t> raw = inflate_buf(idat, (stride + 1) * h);

    // Undo per-scanline filters in place.
    std::vector<std::uint8_t> px(stride * h);
    const int bpp = channels * bps;
    for (std::uint32_t y = 0; y < h; ++y) {
        int filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* dst = &px[y * stride];
        const std::uint8_t* prev = y > 0 ? &px[(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
            int b = prev ? prev[i] : 0;
            int c = (prev && i >= static_cast<std::size_t>(bpp)) ? prev[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw FormatError("bad PNG filter type");
            }
            dst[i] = static_cast<std::uint8_t>(v);
        }
    }

    Image img(static_cast<int>(h), static_cast<int>(w));
    const double scale = bit_depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
            const std::uint8_t* p = &px[y * stride + static_cast<std::size_t>(x) * bpp];
            double rgb[3];
            auto sample = [&](int k) {
                return bit_depth == 8 ? static_cast<int>(p[k]) : (p[2 * k] << 8 | p[2 * k + 1]);
            };
            if (channels >= 3) {
                rgb[0] = sample(0) * scale;
                rgb[1] = sample(1) * scale;
                rgb[2] = sample(2) * scale;
            } else {
                rgb[0] = rgb[1] = rgb[2] = sample(0) * scale;
            }
            for (int c = 0; c < 3; ++c)
                img.at(c, static_cast<int>(y), static_cast<int>(x)) = rgb[c];
        }
    return img;
}

}  // namespace

Image load_image(const std::string& path) {
    std::vector<std::uint8_t> buf = read_file(path);
    if (ends_with(path, ".png")) return load_png(buf, path);
    if (ends_with(path, ".ppm")) return load_ppm(buf, path);
    // No recognized extension: sniff the signature.
    if (buf.size() >= 8 && std::memcmp(buf.data(), kPngSig, 8) == 0) return load_png(buf, path);
    return load_ppm(buf, path);
}

void save_image(const Image& img, const std::string& path) {
    if (img.height <= 0 || img.width <= 0) throw ShapeError("cannot save empty image");
    if (ends_with(path, ".ppm")) {
        save_ppm(img, path);
    } else {
        save_png(img, path);
    }
}

}  // namespace causiam
