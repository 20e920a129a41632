#include "ssl2/io/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "ssl2/core/errors.hpp"

namespace ssl2 {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;   // 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;
constexpr std::int16_t DT_FLOAT64 = 64;

template <typename T>
void byte_swap(T& v) {
  auto* b = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
}

std::vector<char> read_all(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingFile("no such file: " + path);
  gzFile f = gzopen(path.c_str(), "rb");  // reads plain files transparently
  if (!f) throw IOError("cannot open " + path);
  std::vector<char> out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw IOError("decompression failed for " + path);
  return out;
}

bool has_gz_suffix(const std::string& path) {
  return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

template <typename T>
void convert_payload(const char* raw, std::size_t n, bool swap, float slope, float inter,
                     std::vector<float>& dst_file_order) {
  dst_file_order.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw + i * sizeof(T), sizeof(T));
    if (swap) byte_swap(v);
    float x = static_cast<float>(v);
    if (slope != 0.0f) x = x * slope + inter;
    dst_file_order[i] = x;
  }
}

}  // namespace

Volume<float> read_nifti(const std::string& path, Modality modality) {
  const std::vector<char> bytes = read_all(path);
  if (bytes.size() < sizeof(Nifti1Header)) throw IOError("truncated NIfTI file: " + path);
  Nifti1Header hdr;
  std::memcpy(&hdr, bytes.data(), sizeof(hdr));

  bool swap = false;
  if (hdr.sizeof_hdr != 348) {
    byte_swap(hdr.sizeof_hdr);
    if (hdr.sizeof_hdr != 348) throw IOError("not a NIfTI-1 file: " + path);
    swap = true;
  }
  if (swap) {
    for (auto& d : hdr.dim) byte_swap(d);
    byte_swap(hdr.datatype);
    for (auto& p : hdr.pixdim) byte_swap(p);
    byte_swap(hdr.vox_offset);
    byte_swap(hdr.scl_slope);
    byte_swap(hdr.scl_inter);
  }
  if (std::strncmp(hdr.magic, "n+1", 3) != 0 && std::strncmp(hdr.magic, "ni1", 3) != 0)
    throw IOError("bad NIfTI magic in " + path);
  if (hdr.dim[0] < 3) throw IOError("expected a 3D NIfTI volume: " + path);
  const index_t nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
  for (int d = 4; d <= hdr.dim[0]; ++d)
    if (hdr.dim[d] > 1) throw IOError("expected a 3D NIfTI volume: " + path);
  const std::size_t nvox = static_cast<std::size_t>(nx * ny * nz);

  const auto offset = static_cast<std::size_t>(hdr.vox_offset);
  const char* raw = bytes.data() + offset;
  const std::size_t avail = bytes.size() - offset;

  std::vector<float> file_order;
  auto need = [&](std::size_t elem) {
    if (avail < nvox * elem) throw IOError("truncated NIfTI payload: " + path);
  };
  switch (hdr.datatype) {
    case DT_UINT8:
      need(1);
      convert_payload<std::uint8_t>(raw, nvox, swap, hdr.scl_slope, hdr.scl_inter, file_order);
      break;
    case DT_INT16:
      need(2);
      convert_payload<std::int16_t>(raw, nvox, swap, hdr.scl_slope, hdr.scl_inter, file_order);
      break;
    case DT_INT32:
      need(4);
      convert_payload<std::int32_t>(raw, nvox, swap, hdr.scl_slope, hdr.scl_inter, file_order);
      break;
    case DT_FLOAT32:
      need(4);
      convert_payload<float>(raw, nvox, swap, hdr.scl_slope, hdr.scl_inter, file_order);
      break;
    case DT_FLOAT64:
      need(8);
      convert_payload<double>(raw, nvox, swap, hdr.scl_slope, hdr.scl_inter, file_order);
      break;
    default:
      throw IOError("unsupported NIfTI datatype " + std::to_string(hdr.datatype) + " in " + path);
  }

  Volume<float> v({nx, ny, nz}, modality,
                  {static_cast<double>(hdr.pixdim[1]), static_cast<double>(hdr.pixdim[2]),
                   static_cast<double>(hdr.pixdim[3])});
  // NIfTI stores x fastest; Volume stores z fastest.
  for (index_t z = 0; z < nz; ++z)
    for (index_t y = 0; y < ny; ++y)
      for (index_t x = 0; x < nx; ++x)
        v.at(x, y, z) = file_order[static_cast<std::size_t>(x + nx * (y + ny * z))];
  return v;
}

void write_nifti(const std::string& path, const Volume<float>& v) {
  Nifti1Header hdr;
  std::memset(&hdr, 0, sizeof(hdr));
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<std::int16_t>(v.extent[0]);
  hdr.dim[2] = static_cast<std::int16_t>(v.extent[1]);
  hdr.dim[3] = static_cast<std::int16_t>(v.extent[2]);
  for (int d = 4; d < 8; ++d) hdr.dim[d] = 1;
  const bool as_u8 = v.modality == Modality::Mask;
  hdr.datatype = as_u8 ? DT_UINT8 : DT_FLOAT32;
  hdr.bitpix = as_u8 ? 8 : 32;
  hdr.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) hdr.pixdim[a + 1] = static_cast<float>(v.spacing[a]);
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.scl_inter = 0.0f;
  hdr.sform_code = 1;
  hdr.srow_x[0] = static_cast<float>(v.spacing[0]);
  hdr.srow_y[1] = static_cast<float>(v.spacing[1]);
  hdr.srow_z[2] = static_cast<float>(v.spacing[2]);
  std::memcpy(hdr.magic, "n+1", 4);

  const std::size_t nvox = static_cast<std::size_t>(v.size());
  std::vector<char> payload(nvox * (as_u8 ? 1 : 4));
  const index_t nx = v.extent[0], ny = v.extent[1], nz = v.extent[2];
  for (index_t z = 0; z < nz; ++z)
    for (index_t y = 0; y < ny; ++y)
      for (index_t x = 0; x < nx; ++x) {
        const std::size_t fi = static_cast<std::size_t>(x + nx * (y + ny * z));
        if (as_u8) {
          payload[fi] = static_cast<char>(v.at(x, y, z) > 0.5f ? 1 : 0);
        } else {
          const float f = v.at(x, y, z);
          std::memcpy(payload.data() + fi * 4, &f, 4);
        }
      }

  const char ext_flag[4] = {0, 0, 0, 0};
  if (has_gz_suffix(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IOError("cannot open for write: " + path);
    bool ok = gzwrite(f, &hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr));
    ok = ok && gzwrite(f, ext_flag, 4) == 4;
    ok = ok && gzwrite(f, payload.data(), static_cast<unsigned>(payload.size())) ==
                   static_cast<int>(payload.size());
    gzclose(f);
    if (!ok) throw IOError("write failed: " + path);
  } else {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IOError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    f.write(ext_flag, 4);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw IOError("write failed: " + path);
  }
}

}  // namespace ssl2
