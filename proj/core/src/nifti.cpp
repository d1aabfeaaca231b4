#include "mpls/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

namespace mpls {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
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
static_assert(sizeof(Nifti1Header) == 348);

constexpr std::int16_t kDtUInt8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// gzopen reads uncompressed files transparently, so one code path serves both.
GzHandle open_gz(const std::filesystem::path& path, const char* mode) {
  GzHandle f(gzopen(path.string().c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
  auto* p = static_cast<char*>(dst);
  while (n > 0) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, p, chunk);
    if (got <= 0) throw std::runtime_error("truncated NIfTI file '" + path.string() + "'");
    p += got;
    n -= static_cast<std::size_t>(got);
  }
}

void write_exact(gzFile f, const void* src, std::size_t n, const std::filesystem::path& path) {
  const auto* p = static_cast<const char*>(src);
  while (n > 0) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int put = gzwrite(f, p, chunk);
    if (put <= 0) throw std::runtime_error("failed writing '" + path.string() + "'");
    p += put;
    n -= static_cast<std::size_t>(put);
  }
}

template <class T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void swap_header(Nifti1Header& h) {
  h.sizeof_hdr = byteswap_value(h.sizeof_hdr);
  for (auto& d : h.dim) d = byteswap_value(d);
  h.datatype = byteswap_value(h.datatype);
  h.bitpix = byteswap_value(h.bitpix);
  for (auto& p : h.pixdim) p = byteswap_value(p);
  h.vox_offset = byteswap_value(h.vox_offset);
  h.scl_slope = byteswap_value(h.scl_slope);
  h.scl_inter = byteswap_value(h.scl_inter);
  h.qform_code = byteswap_value(h.qform_code);
  h.sform_code = byteswap_value(h.sform_code);
  for (int i = 0; i < 4; ++i) {
    h.srow_x[i] = byteswap_value(h.srow_x[i]);
    h.srow_y[i] = byteswap_value(h.srow_y[i]);
    h.srow_z[i] = byteswap_value(h.srow_z[i]);
  }
}

template <class T>
void decode(const std::vector<char>& raw, bool swap, float slope, float inter, Volume& out) {
  const auto n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * static_cast<std::int64_t>(sizeof(T)), sizeof(T));
    if (swap) v = byteswap_value(v);
    out[i] = static_cast<float>(static_cast<double>(v) * slope + inter);
  }
}

Nifti1Header make_header(const Dims3& dims, const Vec3& spacing, std::int16_t datatype,
                         std::int16_t bitpix, std::string_view description) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(dims[2]);
  h.dim[2] = static_cast<std::int16_t>(dims[1]);
  h.dim[3] = static_cast<std::int16_t>(dims[0]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing[2]);
  h.pixdim[2] = static_cast<float>(spacing[1]);
  h.pixdim[3] = static_cast<float>(spacing[0]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  const auto n = std::min<std::size_t>(description.size(), sizeof(h.descrip) - 1);
  std::memcpy(h.descrip, description.data(), n);
  h.qform_code = 1;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing[2]);
  h.srow_y[1] = static_cast<float>(spacing[1]);
  h.srow_z[2] = static_cast<float>(spacing[0]);
  std::memcpy(h.magic, "n+1\0", 4);
  return h;
}

void write_payload(const std::filesystem::path& path, const Nifti1Header& h, const void* data,
                   std::size_t bytes) {
  const bool gz = path.extension() == ".gz";
  auto f = open_gz(path, gz ? "wb6" : "wb0T");
  write_exact(f.get(), &h, sizeof(h), path);
  const char ext[4] = {0, 0, 0, 0};
  write_exact(f.get(), ext, sizeof(ext), path);
  write_exact(f.get(), data, bytes, path);
}

}  // namespace

NiftiImage read_nifti(const std::filesystem::path& path) {
  auto f = open_gz(path, "rb");
  Nifti1Header h{};
  read_exact(f.get(), &h, sizeof(h), path);
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw std::runtime_error("'" + path.string() + "' is not NIfTI-1");
  }
  if (std::memcmp(h.magic, "n+1", 3) != 0 && std::memcmp(h.magic, "ni1", 3) != 0) {
    throw std::runtime_error("'" + path.string() + "' has a bad NIfTI magic");
  }
  if (h.dim[0] < 1 || h.dim[0] > 7) throw std::runtime_error("bad NIfTI dim[0]");
  for (int i = 4; i <= h.dim[0]; ++i) {
    if (h.dim[i] > 1) throw std::runtime_error("only single-frame 3D NIfTI volumes are supported");
  }
  Dims3 dims{h.dim[0] >= 3 ? h.dim[3] : 1, h.dim[0] >= 2 ? h.dim[2] : 1, h.dim[1]};
  NiftiImage img;
  img.voxels = Volume(dims);
  img.spacing = {h.dim[0] >= 3 ? std::abs(h.pixdim[3]) : 1.0, h.dim[0] >= 2 ? std::abs(h.pixdim[2]) : 1.0,
                 std::abs(h.pixdim[1])};
  for (auto& s : img.spacing) {
    if (!(s > 0.0)) s = 1.0;
  }
  if (h.sform_code > 0) {
    for (int i = 0; i < 4; ++i) {
      img.affine[0][i] = h.srow_x[i];
      img.affine[1][i] = h.srow_y[i];
      img.affine[2][i] = h.srow_z[i];
    }
  } else {
    img.affine[0][0] = img.spacing[2];
    img.affine[1][1] = img.spacing[1];
    img.affine[2][2] = img.spacing[0];
  }
  img.description.assign(h.descrip, strnlen(h.descrip, sizeof(h.descrip)));

  const auto header_end = static_cast<std::int64_t>(sizeof(h));
  const auto offset = std::max<std::int64_t>(static_cast<std::int64_t>(h.vox_offset), header_end);
  std::vector<char> skip(static_cast<std::size_t>(offset - header_end));
  if (!skip.empty()) read_exact(f.get(), skip.data(), skip.size(), path);

  const std::size_t bytes_per = static_cast<std::size_t>(h.bitpix / 8);
  std::vector<char> raw(bytes_per * static_cast<std::size_t>(img.voxels.size()));
  read_exact(f.get(), raw.data(), raw.size(), path);

  float slope = h.scl_slope;
  float inter = h.scl_inter;
  if (slope == 0.0f || !std::isfinite(slope)) {
    slope = 1.0f;
    inter = 0.0f;
  }
  switch (h.datatype) {
    case kDtUInt8:
      decode<std::uint8_t>(raw, false, slope, inter, img.voxels);
      break;
    case kDtInt16:
      decode<std::int16_t>(raw, swap, slope, inter, img.voxels);
      break;
    case kDtInt32:
      decode<std::int32_t>(raw, swap, slope, inter, img.voxels);
      break;
    case kDtFloat32:
      decode<float>(raw, swap, slope, inter, img.voxels);
      break;
    case kDtFloat64:
      decode<double>(raw, swap, slope, inter, img.voxels);
      break;
    default:
      throw std::runtime_error("unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  return img;
}

Mask read_nifti_mask(const std::filesystem::path& path) {
  const auto img = read_nifti(path);
  Mask m(img.voxels.dims());
  for (std::int64_t i = 0; i < m.size(); ++i) m[i] = img.voxels[i] != 0.0f ? 1 : 0;
  return m;
}

void write_nifti(const std::filesystem::path& path, const Volume& v, const Vec3& spacing,
                 NiftiType type, std::string_view description) {
  for (auto n : v.dims()) {
    if (n < 1 || n > 32767) throw std::invalid_argument("write_nifti: dimension out of range");
  }
  switch (type) {
    case NiftiType::Float32: {
      const auto h = make_header(v.dims(), spacing, kDtFloat32, 32, description);
      write_payload(path, h, v.data(), sizeof(float) * static_cast<std::size_t>(v.size()));
      break;
    }
    case NiftiType::Int16: {
      std::vector<std::int16_t> buf(static_cast<std::size_t>(v.size()));
      for (std::int64_t i = 0; i < v.size(); ++i) {
        buf[i] = static_cast<std::int16_t>(std::clamp(std::lround(v[i]), -32768L, 32767L));
      }
      const auto h = make_header(v.dims(), spacing, kDtInt16, 16, description);
      write_payload(path, h, buf.data(), sizeof(std::int16_t) * buf.size());
      break;
    }
    case NiftiType::UInt8: {
      std::vector<std::uint8_t> buf(static_cast<std::size_t>(v.size()));
      for (std::int64_t i = 0; i < v.size(); ++i) {
        buf[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v[i]), 0L, 255L));
      }
      const auto h = make_header(v.dims(), spacing, kDtUInt8, 8, description);
      write_payload(path, h, buf.data(), buf.size());
      break;
    }
  }
}

void write_nifti(const std::filesystem::path& path, const Mask& m, const Vec3& spacing,
                 std::string_view description) {
  for (auto n : m.dims()) {
    if (n < 1 || n > 32767) throw std::invalid_argument("write_nifti: dimension out of range");
  }
  const auto h = make_header(m.dims(), spacing, kDtUInt8, 8, description);
  write_payload(path, h, m.data(), static_cast<std::size_t>(m.size()));
}

}  // namespace mpls
