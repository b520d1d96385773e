#include "cfw/volume_io.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"

namespace cfw {

namespace {
constexpr char kVolumeMagic[] = "CWV1";
}

VolumeFile VolumeFile::from_tensor(const TensorF &t) {
    if (t.rank() != 4) throw Error(ErrorCode::ShapeMismatch, "volume tensor must be [C,D,H,W]");
    VolumeFile v;
    v.channels = static_cast<std::uint32_t>(t.dim(0));
    v.d = static_cast<std::uint32_t>(t.dim(1));
    v.h = static_cast<std::uint32_t>(t.dim(2));
    v.w = static_cast<std::uint32_t>(t.dim(3));
    v.dtype = VolumeDtype::Float32;
    v.floats.assign(t.data().begin(), t.data().end());
    return v;
}

VolumeFile VolumeFile::from_labels(const LabelVolume &labels) {
    VolumeFile v;
    v.channels = 1;
    v.d = static_cast<std::uint32_t>(labels.d);
    v.h = static_cast<std::uint32_t>(labels.h);
    v.w = static_cast<std::uint32_t>(labels.w);
    v.dtype = VolumeDtype::UInt32;
    v.labels = labels.labels;
    return v;
}

TensorF VolumeFile::to_tensor(const std::string &source) const {
    if (dtype != VolumeDtype::Float32) throw Error(ErrorCode::Format, source + ": expected a float volume, found labels");
    return TensorF::from_data({channels, d, h, w}, floats);
}

LabelVolume VolumeFile::to_labels(const std::string &source) const {
    if (dtype != VolumeDtype::UInt32) throw Error(ErrorCode::Format, source + ": expected a label volume, found floats");
    LabelVolume out(d, h, w);
    out.labels = labels;
    return out;
}

std::vector<std::uint8_t> encode_volume(const VolumeFile &vol) {
    const std::uint64_t count = std::uint64_t{vol.channels} * vol.d * vol.h * vol.w;
    const bool is_label = vol.dtype == VolumeDtype::UInt32;
    if (is_label && vol.channels != 1) throw Error(ErrorCode::Format, "label volumes must have one channel");
    if ((is_label ? vol.labels.size() : vol.floats.size()) != count) {
        throw Error(ErrorCode::Format, "volume payload does not match its header dims");
    }
    std::vector<std::uint8_t> out;
    out.reserve(21 + count * 4);
    detail::put_bytes(out, kVolumeMagic);
    detail::put_u32(out, vol.d);
    detail::put_u32(out, vol.h);
    detail::put_u32(out, vol.w);
    detail::put_u32(out, vol.channels);
    out.push_back(static_cast<std::uint8_t>(vol.dtype));
    if (is_label) {
        for (auto v : vol.labels) detail::put_u32(out, v);
    } else {
        for (auto v : vol.floats) detail::put_f32(out, v);
    }
    return out;
}

VolumeFile decode_volume(const std::vector<std::uint8_t> &bytes, const std::string &source) {
    detail::ByteReader in(bytes, source);
    if (bytes.size() < 4 || in.str(4) != kVolumeMagic) in.fail("bad magic, not a CWV1 volume");
    VolumeFile v;
    v.d = in.u32();
    v.h = in.u32();
    v.w = in.u32();
    v.channels = in.u32();
    const auto tag = in.u8();
    if (tag > 1) in.fail("unknown dtype tag " + std::to_string(tag));
    v.dtype = static_cast<VolumeDtype>(tag);
    if (v.dtype == VolumeDtype::UInt32 && v.channels != 1) in.fail("label volume with " + std::to_string(v.channels) + " channels");
    const std::uint64_t count = std::uint64_t{v.channels} * v.d * v.h * v.w;
    if (in.remaining() != count * 4) {
        in.fail("payload is " + std::to_string(in.remaining()) + " bytes, header implies " + std::to_string(count * 4));
    }
    if (v.dtype == VolumeDtype::UInt32) {
        v.labels.resize(count);
        for (auto &x : v.labels) x = in.u32();
    } else {
        v.floats.resize(count);
        for (auto &x : v.floats) x = in.f32();
    }
    return v;
}

void write_volume(const std::string &path, const VolumeFile &vol) { detail::write_file(path, encode_volume(vol)); }

VolumeFile read_volume(const std::string &path) { return decode_volume(detail::read_file(path), path); }

void write_pgm(const std::string &path, std::int64_t height, std::int64_t width, const std::vector<float> &values,
               float lo, float hi) {
    if (height < 1 || width < 1 || static_cast<std::int64_t>(values.size()) != height * width) {
        throw Error(ErrorCode::ShapeMismatch, "pgm slice size does not match " + std::to_string(height) + "x" +
                                                  std::to_string(width));
    }
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    const float span = hi > lo ? hi - lo : 1.0f;
    for (float v : values) {
        const float t = std::clamp((v - lo) / span, 0.0f, 1.0f);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(t * 255.0f)));
    }
    detail::write_file(path, bytes);
}

}  // namespace cfw
