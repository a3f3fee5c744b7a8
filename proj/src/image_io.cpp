#include "pheye/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#ifdef PHEYE_HAVE_PNG
#include <png.h>
#endif

namespace pheye {

namespace {

struct PpmCursor {
    std::string_view bytes;
    std::size_t pos = 0;

    void skip_space() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    }
    std::size_t number() {
        skip_space();
        std::size_t value = 0, digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
            if (++digits > 9) throw InputError("PPM: number too large");
        }
        if (digits == 0) throw InputError("PPM: expected a number at byte " + std::to_string(pos));
        return value;
    }
};

}  // namespace

Image decode_ppm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '3')) {
        throw InputError("not a PPM image (P3/P6)");
    }
    const bool binary = bytes[1] == '6';
    PpmCursor cur{bytes, 2};
    const std::size_t width = cur.number(), height = cur.number(), maxval = cur.number();
    if (width == 0 || height == 0) throw InputError("PPM: empty image");
    if (maxval == 0 || maxval > 65535) throw InputError("PPM: bad maxval");
    Image img = Image::filled(3, height, width);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (binary) {
        ++cur.pos;  // single whitespace after maxval
        const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
        if (bytes.size() - std::min(bytes.size(), cur.pos) < width * height * 3 * sample_bytes) {
            throw InputError("PPM: pixel data truncated");
        }
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + cur.pos);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    std::size_t v = *p++;
                    if (sample_bytes == 2) v = (v << 8) | *p++;
                    img.at(c, y, x) = static_cast<double>(v) * scale;
                }
    } else {
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    const std::size_t v = cur.number();
                    if (v > maxval) throw InputError("PPM: sample above maxval");
                    img.at(c, y, x) = static_cast<double>(v) * scale;
                }
    }
    return img;
}

std::string encode_ppm(const Image& image) {
    if (image.channels != 3) throw InputError("PPM output needs 3 channels");
    std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                out += static_cast<char>(static_cast<unsigned char>(v * 255.0 + 0.5));
            }
    return out;
}

bool png_supported() {
#ifdef PHEYE_HAVE_PNG
    return true;
#else
    return false;
#endif
}

namespace {

#ifdef PHEYE_HAVE_PNG
Image decode_png(const std::string& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) throw InputError("PNG: " + std::string(png.message));
    png.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&png);
        throw InputError("PNG: " + std::string(png.message));
    }
    Image img = Image::filled(3, png.height, png.width);
    for (std::size_t y = 0; y < png.height; ++y)
        for (std::size_t x = 0; x < png.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = buf[(y * png.width + x) * 3 + c] / 255.0;
    return img;
}
#endif

}  // namespace

Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0) {
#ifdef PHEYE_HAVE_PNG
        return decode_png(path);
#else
        throw InputError("PNG input needs a build with libpng; convert to PPM");
#endif
    }
    return decode_ppm(bytes);
}

}  // namespace pheye
