#include "ssdd/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ssdd {

namespace {

constexpr std::string_view kModule = "io";
constexpr char kMagic[8]           = {'S', 'S', 'D', 'D', 'W', 'T', 'S', '1'};

template <class V>
void put(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class V>
V get(std::istream& is, const std::filesystem::path& path) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    require(static_cast<bool>(is), kModule, "truncated weight archive " + path.string());
    return v;
}

}  // namespace

unsigned char to_u8(float v) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    return static_cast<unsigned char>(std::lround((c + 1.0f) * 127.5f));
}

Tensor<float> load_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        fail(kModule, "cannot decode " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        fail(kModule, "cannot decode " + path.string() + ": " + msg);
    }
    const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
    Tensor<float> out({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                out[(static_cast<std::size_t>(c) * h + y) * w + x] = from_u8(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
            }
        }
    }
    return out;
}

void save_png(const std::filesystem::path& path, const Tensor<float>& image) {
    require(image.rank() == 3 && image.dim(0) == 3, kModule, "save_png expects [3, H, W], got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_u8(image[(static_cast<std::size_t>(c) * h + y) * w + x]);
            }
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width   = static_cast<png_uint_32>(w);
    img.height  = static_cast<png_uint_32>(h);
    img.format  = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        fail(kModule, "cannot write " + path.string() + ": " + img.message);
    }
}

void save_archive(const std::filesystem::path& path, const WeightMap& weights) {
    std::ostringstream os(std::ios::binary);
    os.write(kMagic, sizeof kMagic);
    put<std::uint64_t>(os, weights.size());
    for (const auto& [name, t] : weights) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) put<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    write_text(path, os.str());
}

WeightMap load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), kModule, "cannot open weight archive " + path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    require(is && std::memcmp(magic, kMagic, sizeof magic) == 0, kModule, path.string() + " is not a weight archive");
    const auto count = get<std::uint64_t>(is, path);
    WeightMap out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(is, path);
        require(len < (1u << 16), kModule, "corrupt entry name in " + path.string());
        std::string name(len, '\0');
        is.read(name.data(), len);
        const auto rank = get<std::uint32_t>(is, path);
        require(rank <= 8, kModule, "corrupt entry rank in " + path.string());
        Shape shape(rank);
        for (auto& d : shape) d = get<std::int32_t>(is, path);
        Tensor<float> t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        require(static_cast<bool>(is), kModule, "truncated weight archive " + path.string());
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), kModule, "cannot open " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(os), kModule, "cannot write " + tmp.string());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        require(static_cast<bool>(os), kModule, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        fail(kModule, "cannot parse " + path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    write_text(path, doc.dump(2) + "\n");
}

}  // namespace ssdd
