#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfw/reg_ops.hpp"
#include "cfw/tensor.hpp"

namespace cfw {

// On-disk volume ("CWV1"):
//   4 bytes   magic "CWV1"
//   3 x u32   D, H, W
//   u32       channel count C
//   u8        dtype: 0 = f32 intensity, 1 = u32 labels (requires C == 1)
//   payload   C*D*H*W little-endian 4-byte values, channel-major, then D, H, W row-major
enum class VolumeDtype : std::uint8_t { Float32 = 0, UInt32 = 1 };

struct VolumeFile {
    std::uint32_t d = 0, h = 0, w = 0, channels = 0;
    VolumeDtype dtype = VolumeDtype::Float32;
    std::vector<float> floats;         // when dtype == Float32
    std::vector<std::uint32_t> labels; // when dtype == UInt32

    static VolumeFile from_tensor(const TensorF &t);  // [C, D, H, W]
    static VolumeFile from_labels(const LabelVolume &labels);

    TensorF to_tensor(const std::string &source = "volume") const;
    LabelVolume to_labels(const std::string &source = "volume") const;
};

std::vector<std::uint8_t> encode_volume(const VolumeFile &vol);
// `source` names the input in error messages.
VolumeFile decode_volume(const std::vector<std::uint8_t> &bytes, const std::string &source);

void write_volume(const std::string &path, const VolumeFile &vol);
VolumeFile read_volume(const std::string &path);

// 8-bit binary PGM of a row-major height x width slice, mapping [lo, hi]
// linearly to [0, 255] with clamping.
void write_pgm(const std::string &path, std::int64_t height, std::int64_t width, const std::vector<float> &values,
               float lo, float hi);

}  // namespace cfw
