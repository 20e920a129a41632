#pragma once

#include <string>

#include "ssl2/volume/volume.hpp"

namespace ssl2 {

// Minimal NIfTI-1 support: 3D volumes, little-endian files (byte-swapped
// inputs are handled), uint8/int16/int32/float32/float64 payloads,
// scl_slope/scl_inter applied on read. ".gz" paths are (de)compressed with
// zlib. Images are written as float32, masks as uint8.
Volume<float> read_nifti(const std::string& path, Modality modality);
void write_nifti(const std::string& path, const Volume<float>& v);

}  // namespace ssl2
