// In-memory image representation and the .mimg raw float image format.
//
// .mimg layout (little endian): magic "MIMG", u32 version (1), u32 channels,
// u32 height, u32 width, then channels*height*width f32 values in [0, 1],
// channel-major.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "motadual/common.hpp"

namespace motadual {

struct ImageTensor {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // channel-major, values in [0, 1]

    float at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    static ImageTensor filled(int h, int w, float r, float g, float b) {
        ImageTensor img;
        img.height = h;
        img.width = w;
        img.data.resize(static_cast<std::size_t>(3) * h * w);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        std::fill_n(img.data.begin(), plane, r);
        std::fill_n(img.data.begin() + plane, plane, g);
        std::fill_n(img.data.begin() + 2 * plane, plane, b);
        return img;
    }

    void validate() const {
        if (channels != 3 || height <= 0 || width <= 0)
            throw ContractError("image: expected 3 x H x W");
        if (data.size() != static_cast<std::size_t>(channels) * height * width)
            throw ContractError("image: data length does not match dimensions");
        for (float v : data)
            if (!(v >= 0.0f && v <= 1.0f))
                throw NumericError("image: value outside [0, 1]");
    }
};

inline void save_image(const ImageTensor& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError("cannot write image file " + path);
    const char magic[4] = {'M', 'I', 'M', 'G'};
    out.write(magic, 4);
    const std::uint32_t header[4] = {1u, static_cast<std::uint32_t>(img.channels),
                                     static_cast<std::uint32_t>(img.height),
                                     static_cast<std::uint32_t>(img.width)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!out) throw IngestionError("short write on image file " + path);
}

inline ImageTensor load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot read image file " + path);
    char magic[4];
    std::uint32_t header[4];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in || std::memcmp(magic, "MIMG", 4) != 0)
        throw IngestionError("not a .mimg file: " + path);
    if (header[0] != 1u)
        throw IngestionError("unsupported .mimg version in " + path);
    ImageTensor img;
    img.channels = static_cast<int>(header[1]);
    img.height = static_cast<int>(header[2]);
    img.width = static_cast<int>(header[3]);
    if (img.channels != 3 || img.height <= 0 || img.height > 4096 ||
        img.width <= 0 || img.width > 4096)
        throw IngestionError("implausible .mimg dimensions in " + path);
    img.data.resize(static_cast<std::size_t>(img.channels) * img.height *
                    img.width);
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!in) throw IngestionError("truncated .mimg file: " + path);
    return img;
}

}  // namespace motadual
