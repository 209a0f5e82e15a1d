// SPDX-License-Identifier: Apache-2.0
#include <croploop/error.hpp>
#include <croploop/png_io.hpp>

#include <fmt/format.h>
#include <png.h>

#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace croploop
{

namespace
{

    auto readFile(const std::filesystem::path& path) -> std::vector<std::uint8_t>
    {
        auto in = std::ifstream(path, std::ios::binary);
        if (!in)
            throw ImageMissing(path.string());
        return { std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>() };
    }

    struct ReadCursor
    {
        std::span<const std::uint8_t> bytes;
        std::size_t offset = 0;
    };

    void readCallback(png_structp png, png_bytep out, png_size_t length)
    {
        auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
        if (cursor->offset + length > cursor->bytes.size())
            png_error(png, "truncated PNG stream");
        std::memcpy(out, cursor->bytes.data() + cursor->offset, length);
        cursor->offset += length;
    }

    void writeCallback(png_structp png, png_bytep data, png_size_t length)
    {
        auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
        out->insert(out->end(), data, data + length);
    }

    void flushCallback(png_structp) {}

    // libpng is C: errors longjmp back to the caller's setjmp point, never throw.
    struct ErrorSink
    {
        std::string message;
    };

    void errorCallback(png_structp png, png_const_charp message)
    {
        if (auto* sink = static_cast<ErrorSink*>(png_get_error_ptr(png)))
            sink->message = message;
        png_longjmp(png, 1);
    }

    void warningCallback(png_structp, png_const_charp) {}

    // Owns the libpng read state for the duration of one decode.
    class PngReader
    {
      public:
        explicit PngReader(ErrorSink* sink)
        {
            _png = png_create_read_struct(PNG_LIBPNG_VER_STRING, sink, errorCallback, warningCallback);
            if (!_png)
                throw Error("png: cannot allocate read struct");
            _info = png_create_info_struct(_png);
            if (!_info)
            {
                png_destroy_read_struct(&_png, nullptr, nullptr);
                throw Error("png: cannot allocate info struct");
            }
        }
        ~PngReader() { png_destroy_read_struct(&_png, &_info, nullptr); }
        PngReader(const PngReader&) = delete;
        auto operator=(const PngReader&) -> PngReader& = delete;

        [[nodiscard]] auto png() const -> png_structp { return _png; }
        [[nodiscard]] auto info() const -> png_infop { return _info; }

      private:
        png_structp _png = nullptr;
        png_infop _info = nullptr;
    };

    class PngWriter
    {
      public:
        explicit PngWriter(ErrorSink* sink)
        {
            _png = png_create_write_struct(PNG_LIBPNG_VER_STRING, sink, errorCallback, warningCallback);
            if (!_png)
                throw Error("png: cannot allocate write struct");
            _info = png_create_info_struct(_png);
            if (!_info)
            {
                png_destroy_write_struct(&_png, nullptr);
                throw Error("png: cannot allocate info struct");
            }
        }
        ~PngWriter() { png_destroy_write_struct(&_png, &_info); }
        PngWriter(const PngWriter&) = delete;
        auto operator=(const PngWriter&) -> PngWriter& = delete;

        [[nodiscard]] auto png() const -> png_structp { return _png; }
        [[nodiscard]] auto info() const -> png_infop { return _info; }

      private:
        png_structp _png = nullptr;
        png_infop _info = nullptr;
    };

} // namespace

auto decodePng(std::span<const std::uint8_t> bytes, std::string id) -> ImageBuffer
{
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw Error(fmt::format("png: '{}' is not a PNG stream", id));

    auto sink = ErrorSink {};
    auto reader = PngReader(&sink);
    auto cursor = ReadCursor { bytes, 0 };
    auto pixels = std::vector<std::uint8_t> {};
    auto rows = std::vector<png_bytep> {};
    auto width = 0;
    auto height = 0;
    if (setjmp(png_jmpbuf(reader.png())))
        throw Error(fmt::format("png: '{}': {}", id, sink.message));

    png_set_read_fn(reader.png(), &cursor, readCallback);
    png_read_info(reader.png(), reader.info());

    auto const colorType = png_get_color_type(reader.png(), reader.info());
    auto const bitDepth = png_get_bit_depth(reader.png(), reader.info());
    if (bitDepth == 16)
        png_set_strip_16(reader.png());
    if (colorType == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(reader.png());
    if (colorType == PNG_COLOR_TYPE_GRAY && bitDepth < 8)
        png_set_expand_gray_1_2_4_to_8(reader.png());
    if (png_get_valid(reader.png(), reader.info(), PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(reader.png());
    if (colorType == PNG_COLOR_TYPE_GRAY || colorType == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(reader.png());
    png_set_strip_alpha(reader.png());
    png_read_update_info(reader.png(), reader.info());

    width = int(png_get_image_width(reader.png(), reader.info()));
    height = int(png_get_image_height(reader.png(), reader.info()));
    pixels.resize(std::size_t(width) * std::size_t(height) * 3);
    rows.resize(std::size_t(height));
    for (int y = 0; y < height; ++y)
        rows[std::size_t(y)] = pixels.data() + std::size_t(y) * std::size_t(width) * 3;
    png_read_image(reader.png(), rows.data());
    png_read_end(reader.png(), nullptr);
    return ImageBuffer(std::move(id), width, height, std::move(pixels));
}

auto loadPng(const std::filesystem::path& path) -> ImageBuffer
{
    auto const bytes = readFile(path);
    return decodePng(bytes, path.string());
}

auto pngDims(const std::filesystem::path& path) -> Dims
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw ImageMissing(path.string());
    // Signature (8) + IHDR length/type (8) + width/height (8).
    unsigned char header[24] = {};
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (in.gcount() != sizeof header || png_sig_cmp(header, 0, 8) != 0 || std::memcmp(header + 12, "IHDR", 4) != 0)
        throw Error(fmt::format("png: '{}' has no valid header", path.string()));
    auto const be32 = [&](int offset) {
        return (std::uint32_t(header[offset]) << 24) | (std::uint32_t(header[offset + 1]) << 16)
               | (std::uint32_t(header[offset + 2]) << 8) | std::uint32_t(header[offset + 3]);
    };
    return Dims { int(be32(16)), int(be32(20)) };
}

auto encodePng(const ImageBuffer& img) -> std::vector<std::uint8_t>
{
    auto out = std::vector<std::uint8_t> {};
    auto sink = ErrorSink {};
    auto writer = PngWriter(&sink);
    if (setjmp(png_jmpbuf(writer.png())))
        throw Error(fmt::format("png: encoding '{}': {}", img.id(), sink.message));
    png_set_write_fn(writer.png(), &out, writeCallback, flushCallback);
    png_set_IHDR(writer.png(), writer.info(), png_uint_32(img.width()), png_uint_32(img.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(writer.png(), writer.info());
    auto const pixels = img.pixels();
    for (int y = 0; y < img.height(); ++y)
        png_write_row(writer.png(),
                      const_cast<png_bytep>(pixels.data() + std::size_t(y) * std::size_t(img.width()) * 3));
    png_write_end(writer.png(), nullptr);
    return out;
}

void savePng(const ImageBuffer& img, const std::filesystem::path& path)
{
    auto const bytes = encodePng(img);
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

} // namespace croploop
