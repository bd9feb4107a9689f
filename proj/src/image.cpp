#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "lbt/dataio.hpp"

namespace lbt {

namespace {

uint16_t le16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t le32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint32_t be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

constexpr uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

Tensor decode_bmp(std::span<const uint8_t> b) {
    if (b.size() < 54) throw DecodeError("BMP: file shorter than its headers");
    const uint32_t pixel_offset = le32(b.data() + 10);
    const uint32_t dib_size = le32(b.data() + 14);
    if (dib_size < 40) throw DecodeError("BMP: unsupported DIB header size " +
                                         std::to_string(dib_size));
    const int32_t width = static_cast<int32_t>(le32(b.data() + 18));
    const int32_t height_raw = static_cast<int32_t>(le32(b.data() + 22));
    const uint16_t bits = le16(b.data() + 28);
    const uint32_t compression = le32(b.data() + 30);
    if (bits != 24)
        throw DecodeError("BMP: only 24-bit images are supported, got " + std::to_string(bits) +
                          "-bit");
    if (compression != 0) throw DecodeError("BMP: compressed images are not supported");
    if (width <= 0 || height_raw == 0) throw DecodeError("BMP: bad dimensions");
    const bool bottom_up = height_raw > 0;
    const int64_t W = width;
    const int64_t H = bottom_up ? height_raw : -static_cast<int64_t>(height_raw);

    const size_t stride = (static_cast<size_t>(W) * 3 + 3) & ~size_t(3);
    if (pixel_offset + stride * static_cast<size_t>(H) > b.size())
        throw DecodeError("BMP: truncated pixel data");

    Tensor img({H, W, 3});
    float* out = img.data();
    for (int64_t y = 0; y < H; ++y) {
        const int64_t src_row = bottom_up ? H - 1 - y : y;
        const uint8_t* row = b.data() + pixel_offset + static_cast<size_t>(src_row) * stride;
        for (int64_t x = 0; x < W; ++x) {
            const uint8_t* px = row + x * 3; // stored B,G,R
            float* dst = out + (y * W + x) * 3;
            dst[0] = static_cast<float>(px[2]) / 255.0f;
            dst[1] = static_cast<float>(px[1]) / 255.0f;
            dst[2] = static_cast<float>(px[0]) / 255.0f;
        }
    }
    return img;
}

std::string zlib_inflate(const uint8_t* data, size_t n, size_t expected) {
    std::string out;
    out.resize(expected);
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw DecodeError("PNG: inflate init failed");
    zs.next_in = const_cast<Bytef*>(data);
    zs.avail_in = static_cast<uInt>(n);
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END || zs.avail_out != 0)
        throw DecodeError("PNG: compressed image data is corrupt or truncated");
    return out;
}

uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

Tensor decode_png(std::span<const uint8_t> b) {
    if (b.size() < 8 + 12 || std::memcmp(b.data(), kPngSig, 8) != 0)
        throw DecodeError("PNG: bad signature");

    int64_t W = 0, H = 0;
    int channels = 0;
    bool seen_ihdr = false, seen_iend = false;
    std::string idat;

    size_t pos = 8;
    while (pos + 12 <= b.size() && !seen_iend) {
        const uint32_t len = be32(b.data() + pos);
        if (pos + 12 + len > b.size()) throw DecodeError("PNG: truncated chunk");
        const uint8_t* type = b.data() + pos + 4;
        const uint8_t* data = b.data() + pos + 8;
        const uint32_t want_crc = be32(data + len);
        uint32_t crc = static_cast<uint32_t>(crc32(0, type, 4));
        crc = static_cast<uint32_t>(crc32(crc, data, len));
        if (crc != want_crc) throw DecodeError("PNG: chunk checksum mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DecodeError("PNG: malformed IHDR");
            W = be32(data);
            H = be32(data + 4);
            const uint8_t depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8)
                throw DecodeError("PNG: only 8-bit depth is supported, got " +
                                  std::to_string(depth));
            if (color == 2)
                channels = 3;
            else if (color == 6)
                channels = 4;
            else
                throw DecodeError("PNG: only RGB/RGBA color types are supported, got type " +
                                  std::to_string(color));
            if (interlace != 0) throw DecodeError("PNG: interlaced images are not supported");
            if (W <= 0 || H <= 0) throw DecodeError("PNG: bad dimensions");
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.append(reinterpret_cast<const char*>(data), len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr) throw DecodeError("PNG: missing IHDR");
    if (!seen_iend) throw DecodeError("PNG: missing IEND (file truncated)");
    if (idat.empty()) throw DecodeError("PNG: no image data");

    const size_t bpp = static_cast<size_t>(channels);
    const size_t row_bytes = static_cast<size_t>(W) * bpp;
    const std::string raw = zlib_inflate(reinterpret_cast<const uint8_t*>(idat.data()),
                                         idat.size(), (row_bytes + 1) * static_cast<size_t>(H));

    std::vector<uint8_t> cur(row_bytes, 0), prev(row_bytes, 0);
    Tensor img({H, W, 3});
    float* out = img.data();
    for (int64_t y = 0; y < H; ++y) {
        const uint8_t* src = reinterpret_cast<const uint8_t*>(raw.data()) +
                             static_cast<size_t>(y) * (row_bytes + 1);
        const uint8_t filter = src[0];
        const uint8_t* line = src + 1;
        for (size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= bpp ? cur[i - bpp] : 0;
            const int up = prev[i];
            const int c = i >= bpp ? prev[i - bpp] : 0;
            int v = line[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += up; break;
                case 3: v += (a + up) / 2; break;
                case 4: v += paeth(a, up, c); break;
                default: throw DecodeError("PNG: unknown row filter " + std::to_string(filter));
            }
            cur[i] = static_cast<uint8_t>(v & 0xff);
        }
        for (int64_t x = 0; x < W; ++x) {
            float* dst = out + (y * W + x) * 3;
            const uint8_t* px = cur.data() + static_cast<size_t>(x) * bpp;
            dst[0] = static_cast<float>(px[0]) / 255.0f;
            dst[1] = static_cast<float>(px[1]) / 255.0f;
            dst[2] = static_cast<float>(px[2]) / 255.0f;
        }
        std::swap(cur, prev);
    }
    return img;
}

uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

void require_image(const Tensor& image, const char* op) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ArgumentError(std::string(op) + ": expected an [H,W,3] image, got " +
                            shape_str(image.shape()));
}

} // namespace

Tensor decode_image(std::span<const uint8_t> bytes) {
    if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0)
        return decode_png(bytes);
    throw DecodeError("unrecognized image format (supported: BMP, PNG)");
}

std::string encode_bmp(const Tensor& image) {
    require_image(image, "encode_bmp");
    const int64_t H = image.dim(0), W = image.dim(1);
    const size_t stride = (static_cast<size_t>(W) * 3 + 3) & ~size_t(3);
    const size_t pixel_bytes = stride * static_cast<size_t>(H);
    const size_t file_size = 54 + pixel_bytes;

    std::string out(file_size, '\0');
    uint8_t* p = reinterpret_cast<uint8_t*>(out.data());
    auto w16 = [](uint8_t* d, uint16_t v) {
        d[0] = v & 0xff;
        d[1] = (v >> 8) & 0xff;
    };
    auto w32 = [](uint8_t* d, uint32_t v) {
        for (int i = 0; i < 4; ++i) d[i] = (v >> (8 * i)) & 0xff;
    };
    p[0] = 'B';
    p[1] = 'M';
    w32(p + 2, static_cast<uint32_t>(file_size));
    w32(p + 10, 54);
    w32(p + 14, 40); // BITMAPINFOHEADER
    w32(p + 18, static_cast<uint32_t>(W));
    w32(p + 22, static_cast<uint32_t>(H)); // positive: bottom-up
    w16(p + 26, 1);
    w16(p + 28, 24);
    w32(p + 34, static_cast<uint32_t>(pixel_bytes));

    const float* src = image.data();
    for (int64_t y = 0; y < H; ++y) {
        uint8_t* row = p + 54 + static_cast<size_t>(H - 1 - y) * stride;
        for (int64_t x = 0; x < W; ++x) {
            const float* px = src + (y * W + x) * 3;
            row[x * 3 + 0] = to_byte(px[2]);
            row[x * 3 + 1] = to_byte(px[1]);
            row[x * 3 + 2] = to_byte(px[0]);
        }
    }
    return out;
}

std::string encode_png(const Tensor& image) {
    require_image(image, "encode_png");
    const int64_t H = image.dim(0), W = image.dim(1);
    const size_t row_bytes = static_cast<size_t>(W) * 3;

    std::string raw((row_bytes + 1) * static_cast<size_t>(H), '\0');
    const float* src = image.data();
    for (int64_t y = 0; y < H; ++y) {
        uint8_t* row = reinterpret_cast<uint8_t*>(raw.data()) +
                       static_cast<size_t>(y) * (row_bytes + 1);
        row[0] = 0; // filter: none
        for (int64_t x = 0; x < W; ++x) {
            const float* px = src + (y * W + x) * 3;
            row[1 + x * 3 + 0] = to_byte(px[0]);
            row[1 + x * 3 + 1] = to_byte(px[1]);
            row[1 + x * 3 + 2] = to_byte(px[2]);
        }
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::string comp(comp_cap, '\0');
    if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_cap,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  Z_BEST_COMPRESSION) != Z_OK)
        throw IoError("encode_png: compression failed");
    comp.resize(comp_cap);

    std::string out(reinterpret_cast<const char*>(kPngSig), 8);
    auto chunk = [&out](const char* type, std::string_view data) {
        const uint32_t len = static_cast<uint32_t>(data.size());
        for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
        const size_t type_pos = out.size();
        out.append(type, 4);
        out.append(data);
        uint32_t crc = static_cast<uint32_t>(
            crc32(0, reinterpret_cast<const Bytef*>(out.data() + type_pos), 4));
        if (!data.empty()) // crc32(_, nullptr, 0) would reset the running crc
            crc = static_cast<uint32_t>(
                crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
                      static_cast<uInt>(data.size())));
        for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
    };

    std::string ihdr(13, '\0');
    uint8_t* ih = reinterpret_cast<uint8_t*>(ihdr.data());
    for (int i = 0; i < 4; ++i) ih[i] = static_cast<uint8_t>((W >> (8 * (3 - i))) & 0xff);
    for (int i = 0; i < 4; ++i) ih[4 + i] = static_cast<uint8_t>((H >> (8 * (3 - i))) & 0xff);
    ih[8] = 8;  // bit depth
    ih[9] = 2;  // color type RGB
    chunk("IHDR", ihdr);
    chunk("IDAT", comp);
    chunk("IEND", {});
    return out;
}

Tensor load_image(const std::string& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_image(std::span<const uint8_t>(
            reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()));
    } catch (const DecodeError& e) {
        throw DecodeError(std::string(e.what()) + " [" + path + "]");
    }
}

void save_bmp(const std::string& path, const Tensor& image) {
    write_file(path, encode_bmp(image));
}

void save_png(const std::string& path, const Tensor& image) {
    write_file(path, encode_png(image));
}

// ---- geometry -----------------------------------------------------------

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
    require_image(image, "resize");
    if (out_h <= 0 || out_w <= 0)
        throw ArgumentError("resize: target size must be positive, got " +
                            std::to_string(out_h) + "x" + std::to_string(out_w));
    const int64_t H = image.dim(0), W = image.dim(1);
    Tensor out({out_h, out_w, 3});
    const float* src = image.data();
    float* dst = out.data();
    const double sy_scale = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx_scale = static_cast<double>(W) / static_cast<double>(out_w);
    for (int64_t y = 0; y < out_h; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
        const int64_t y0 = static_cast<int64_t>(sy);
        const int64_t y1 = std::min(y0 + 1, H - 1);
        const float fy = static_cast<float>(sy - static_cast<double>(y0));
        for (int64_t x = 0; x < out_w; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
            const int64_t x0 = static_cast<int64_t>(sx);
            const int64_t x1 = std::min(x0 + 1, W - 1);
            const float fx = static_cast<float>(sx - static_cast<double>(x0));
            for (int64_t c = 0; c < 3; ++c) {
                const float p00 = src[(y0 * W + x0) * 3 + c];
                const float p01 = src[(y0 * W + x1) * 3 + c];
                const float p10 = src[(y1 * W + x0) * 3 + c];
                const float p11 = src[(y1 * W + x1) * 3 + c];
                const float top = p00 + (p01 - p00) * fx;
                const float bot = p10 + (p11 - p10) * fx;
                dst[(y * out_w + x) * 3 + c] = top + (bot - top) * fy;
            }
        }
    }
    return out;
}

Tensor resize(const Tensor& image, int target) { return resize_bilinear(image, target, target); }

namespace {

Tensor hflip(const Tensor& image) {
    const int64_t H = image.dim(0), W = image.dim(1);
    Tensor out({H, W, 3});
    const float* src = image.data();
    float* dst = out.data();
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c)
                dst[(y * W + x) * 3 + c] = src[(y * W + (W - 1 - x)) * 3 + c];
    return out;
}

int64_t reflect_index(int64_t j, int64_t n) {
    if (n == 1) return 0;
    while (j < 0 || j >= n) {
        if (j < 0) j = -j;
        if (j >= n) j = 2 * n - 2 - j;
    }
    return j;
}

Tensor center_crop(const Tensor& image, int64_t ch, int64_t cw) {
    const int64_t H = image.dim(0), W = image.dim(1);
    const int64_t oy = (H - ch) / 2, ox = (W - cw) / 2;
    Tensor out({ch, cw, 3});
    const float* src = image.data();
    float* dst = out.data();
    for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x)
            for (int64_t c = 0; c < 3; ++c)
                dst[(y * cw + x) * 3 + c] = src[((y + oy) * W + (x + ox)) * 3 + c];
    return out;
}

Tensor reflect_pad_to(const Tensor& image, int64_t th, int64_t tw) {
    const int64_t H = image.dim(0), W = image.dim(1);
    const int64_t oy = (th - H) / 2, ox = (tw - W) / 2;
    Tensor out({th, tw, 3});
    const float* src = image.data();
    float* dst = out.data();
    for (int64_t y = 0; y < th; ++y) {
        const int64_t sy = reflect_index(y - oy, H);
        for (int64_t x = 0; x < tw; ++x) {
            const int64_t sx = reflect_index(x - ox, W);
            for (int64_t c = 0; c < 3; ++c)
                dst[(y * tw + x) * 3 + c] = src[(sy * W + sx) * 3 + c];
        }
    }
    return out;
}

} // namespace

Tensor augment(const Tensor& image, Rng& rng) {
    require_image(image, "augment");
    const bool flip = rng.bernoulli(0.5);
    const double fh = rng.uniform(-0.2, 0.2);
    const double fw = rng.uniform(-0.2, 0.2);

    Tensor img = flip ? hflip(image) : image;
    const int64_t H = img.dim(0), W = img.dim(1);

    // zoom-in axes: crop now, scale back up in the shared resize below
    const int64_t ch = fh > 0 ? std::max<int64_t>(1, std::llround(H / (1.0 + fh))) : H;
    const int64_t cw = fw > 0 ? std::max<int64_t>(1, std::llround(W / (1.0 + fw))) : W;
    if (ch != H || cw != W) img = center_crop(img, ch, cw);

    // zoom-out axes shrink; zoom-in axes restore the original length
    const int64_t rh = fh < 0 ? std::max<int64_t>(1, std::llround(H * (1.0 + fh))) : H;
    const int64_t rw = fw < 0 ? std::max<int64_t>(1, std::llround(W * (1.0 + fw))) : W;
    if (rh != img.dim(0) || rw != img.dim(1)) img = resize_bilinear(img, rh, rw);

    if (rh != H || rw != W) img = reflect_pad_to(img, H, W);
    return img;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

} // namespace lbt
